#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "segplan/errors.hpp"
#include "segplan/fingerprint.hpp"
#include "segplan/geometry.hpp"
#include "segplan/volume.hpp"

namespace segplan {

// Interpolating cubic spline through unit-spaced samples with not-a-knot end
// conditions, so cubic polynomials are reproduced exactly on the whole line.
class CubicSpline {
 public:
  void fit(std::span<const double> y) {
    y_.assign(y.begin(), y.end());
    const std::size_t n = y_.size();
    m_.assign(n, 0.0);
    if (n < 3) return;
    if (n == 3) {
      std::fill(m_.begin(), m_.end(), y_[2] - 2.0 * y_[1] + y_[0]);
      return;
    }
    // Unknowns m_[1..n-2]; the end rows collapse to 6*m = rhs once the
    // not-a-knot relations m0 = 2m1 - m2 and m(n-1) = 2m(n-2) - m(n-3) are
    // substituted.
    const std::size_t k = n - 2;
    diag_.assign(k, 4.0);
    rhs_.resize(k);
    for (std::size_t i = 0; i < k; ++i) rhs_[i] = 6.0 * (y_[i + 2] - 2.0 * y_[i + 1] + y_[i]);
    diag_.front() = 6.0;
    diag_.back() = 6.0;
    auto lower = [&](std::size_t row) { return (row == 0 || row == k - 1) ? 0.0 : 1.0; };
    auto upper = [&](std::size_t row) { return (row == 0 || row == k - 1) ? 0.0 : 1.0; };
    // Thomas algorithm.
    for (std::size_t i = 1; i < k; ++i) {
      const double w = lower(i) / diag_[i - 1];
      diag_[i] -= w * upper(i - 1);
      rhs_[i] -= w * rhs_[i - 1];
    }
    m_[k] = rhs_[k - 1] / diag_[k - 1];
    for (std::size_t i = k - 1; i-- > 0;) {
      m_[i + 1] = (rhs_[i] - upper(i) * m_[i + 2]) / diag_[i];
    }
    m_[0] = 2.0 * m_[1] - m_[2];
    m_[n - 1] = 2.0 * m_[n - 2] - m_[n - 3];
  }

  // t is clamped to [0, n-1].
  double operator()(double t) const {
    const std::size_t n = y_.size();
    if (n == 1) return y_[0];
    t = std::clamp(t, 0.0, static_cast<double>(n - 1));
    const std::size_t i = std::min(static_cast<std::size_t>(t), n - 2);
    const double u = t - static_cast<double>(i);
    const double v = 1.0 - u;
    return m_[i] * v * v * v / 6.0 + m_[i + 1] * u * u * u / 6.0 +
           (y_[i] - m_[i] / 6.0) * v + (y_[i + 1] - m_[i + 1] / 6.0) * u;
  }

 private:
  std::vector<double> y_, m_, diag_, rhs_;
};

// Source coordinate of target sample k when target voxels are `scale` times
// the size of source voxels (grid centres aligned).
inline double source_coordinate(std::size_t k, double scale) {
  return (static_cast<double>(k) + 0.5) * scale - 0.5;
}

namespace detail {

inline void check_spacing(const Spacing& spacing) {
  for (double s : spacing) require(std::isfinite(s) && s > 0.0, "non-finite or non-positive spacing");
}

// Resamples every channel along each axis in turn; `scale[a]` is the source
// voxels per target voxel.
inline Volume resample_cubic(const Volume& v, const Extent& target, const std::vector<double>& scale) {
  const std::size_t dims = v.dims();
  std::vector<double> buffer(v.data.begin(), v.data.end());
  Extent current = v.extent;
  CubicSpline spline;
  std::vector<double> line;
  for (std::size_t a = 0; a < dims; ++a) {
    if (current[a] == target[a] && scale[a] == 1.0) continue;
    Extent next = current;
    next[a] = target[a];
    std::size_t outer = v.channels;
    for (std::size_t b = 0; b < a; ++b) outer *= current[b];
    std::size_t inner = 1;
    for (std::size_t b = a + 1; b < dims; ++b) inner *= current[b];
    const std::size_t n = current[a];
    const std::size_t m = target[a];
    std::vector<double> coords(m);
    for (std::size_t k = 0; k < m; ++k) coords[k] = source_coordinate(k, scale[a]);
    std::vector<double> out(outer * m * inner);
    line.resize(n);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        for (std::size_t i = 0; i < n; ++i) line[i] = buffer[(o * n + i) * inner + in];
        spline.fit(line);
        for (std::size_t k = 0; k < m; ++k) out[(o * m + k) * inner + in] = spline(coords[k]);
      }
    }
    buffer = std::move(out);
    current = next;
  }
  Volume result(v.kind, v.channels, target, v.spacing);
  for (std::size_t i = 0; i < buffer.size(); ++i) result.data[i] = static_cast<float>(buffer[i]);
  return result;
}

// Nearest neighbour; exact ties go to the lower source index.
inline Volume resample_nearest(const Volume& v, const Extent& target, const std::vector<double>& scale) {
  const std::size_t dims = v.dims();
  std::vector<std::vector<std::size_t>> index(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    index[a].resize(target[a]);
    for (std::size_t k = 0; k < target[a]; ++k) {
      const double c = std::ceil(source_coordinate(k, scale[a]) - 0.5);
      index[a][k] = static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(v.extent[a] - 1)));
    }
  }
  Volume result(v.kind, v.channels, target, v.spacing);
  const Extent strides = strides_of(v.extent);
  const std::size_t n_src = v.voxels();
  const std::size_t n_dst = result.voxels();
  std::size_t o = 0;
  for_each_coord(target, [&](const Extent& c) {
    std::size_t s = 0;
    for (std::size_t a = 0; a < dims; ++a) s += index[a][c[a]] * strides[a];
    for (std::size_t ch = 0; ch < v.channels; ++ch) result.data[ch * n_dst + o] = v.data[ch * n_src + s];
    ++o;
  });
  return result;
}

inline void renormalize_softmax(Volume& v) {
  const std::size_t n = v.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < v.channels; ++c) {
      v.at(c, i) = std::max(v.at(c, i), 0.0f);
      sum += v.at(c, i);
    }
    for (std::size_t c = 0; c < v.channels; ++c) {
      v.at(c, i) = sum > 0.0 ? static_cast<float>(v.at(c, i) / sum) : 1.0f / static_cast<float>(v.channels);
    }
  }
}

inline Volume resample_with_scale(const Volume& v, const Extent& target, const std::vector<double>& scale,
                                  const Spacing& target_spacing) {
  Volume out;
  if (v.kind == VolumeKind::labelmap) {
    out = resample_nearest(v, target, scale);
  } else {
    out = resample_cubic(v, target, scale);
    if (v.kind == VolumeKind::softmax) renormalize_softmax(out);
  }
  out.spacing = target_spacing;
  return out;
}

}  // namespace detail

// Third-order spline for images, per-channel spline plus renormalisation for
// softmax volumes, nearest neighbour for labelmaps.
inline Volume resample(const Volume& v, const Spacing& target_spacing) {
  validate_geometry(v);
  detail::check_spacing(target_spacing);
  require(target_spacing.size() == v.dims(), "target spacing has the wrong number of axes");
  if (target_spacing == v.spacing) return v;
  const Extent target = resampled_extent(v.extent, v.spacing, target_spacing);
  std::vector<double> scale(v.dims());
  for (std::size_t a = 0; a < v.dims(); ++a) scale[a] = target_spacing[a] / v.spacing[a];
  return detail::resample_with_scale(v, target, scale, target_spacing);
}

// Resamples onto an explicit grid covering the same physical extent.
inline Volume resample_to_shape(const Volume& v, const Extent& target, const Spacing& target_spacing) {
  validate_geometry(v);
  detail::check_spacing(target_spacing);
  require(target.size() == v.dims(), "target shape has the wrong number of axes");
  if (target == v.extent) {
    Volume out = v;
    out.spacing = target_spacing;
    return out;
  }
  std::vector<double> scale(v.dims());
  for (std::size_t a = 0; a < v.dims(); ++a) {
    scale[a] = static_cast<double>(v.extent[a]) / static_cast<double>(target[a]);
  }
  return detail::resample_with_scale(v, target, scale, target_spacing);
}

}  // namespace segplan

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "segplan/augment_config.hpp"
#include "segplan/components.hpp"
#include "segplan/errors.hpp"
#include "segplan/geometry.hpp"
#include "segplan/parallel.hpp"
#include "segplan/planner.hpp"
#include "segplan/rng.hpp"
#include "segplan/volume.hpp"

namespace segplan {

struct LoadedCase {
  Volume image;  // preprocessed, all channels
  Volume label;  // labelmap on the same grid
};

struct Sample {
  Volume image;
  Volume label;
};

struct Batch {
  std::vector<Volume> images;
  std::vector<Volume> targets;
  std::vector<bool> foreground_forced;
  bool no_foreground = false;  // set when no case has any foreground voxel

  std::size_t size() const { return images.size(); }
  std::size_t forced_count() const {
    return static_cast<std::size_t>(std::count(foreground_forced.begin(), foreground_forced.end(), true));
  }
};

inline std::size_t forced_sample_count(std::size_t batch_size) { return (batch_size + 2) / 3; }

namespace detail {

// Copies the window starting at `origin` (may leave the volume) with extent
// `window`; reads outside the volume are zero.
inline Volume read_window(const Volume& v, const std::vector<long long>& origin, const Extent& window) {
  Volume out(v.kind, v.channels, window, v.spacing);
  const Extent src_strides = strides_of(v.extent);
  const std::size_t n_out = out.voxels();
  const std::size_t n_src = v.voxels();
  std::size_t o = 0;
  for_each_coord(window, [&](const Extent& c) {
    std::size_t s = 0;
    bool inside = true;
    for (std::size_t a = 0; a < c.size(); ++a) {
      const long long p = origin[a] + static_cast<long long>(c[a]);
      if (p < 0 || p >= static_cast<long long>(v.extent[a])) {
        inside = false;
        break;
      }
      s += static_cast<std::size_t>(p) * src_strides[a];
    }
    if (inside) {
      for (std::size_t ch = 0; ch < v.channels; ++ch) out.data[ch * n_out + o] = v.data[ch * n_src + s];
    }
    ++o;
  });
  return out;
}

inline Volume drop_axis(Volume v, std::size_t axis) {
  require(v.extent[axis] == 1, "only a unit axis can be dropped");
  v.extent.erase(v.extent.begin() + static_cast<std::ptrdiff_t>(axis));
  v.spacing.erase(v.spacing.begin() + static_cast<std::ptrdiff_t>(axis));
  return v;
}

struct CaseIndex {
  std::vector<int> classes;                      // present foreground classes
  std::vector<std::vector<std::size_t>> voxels;  // per entry of `classes`
};

inline CaseIndex index_case(const Volume& label) {
  CaseIndex idx;
  std::vector<std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < label.voxels(); ++i) {
    const int k = label.label(i);
    if (k <= 0) continue;
    if (by_class.size() <= static_cast<std::size_t>(k)) by_class.resize(static_cast<std::size_t>(k) + 1);
    by_class[static_cast<std::size_t>(k)].push_back(i);
  }
  for (std::size_t k = 1; k < by_class.size(); ++k) {
    if (by_class[k].empty()) continue;
    idx.classes.push_back(static_cast<int>(k));
    idx.voxels.push_back(std::move(by_class[k]));
  }
  return idx;
}

}  // namespace detail

// Draws a batch of patches. The first ceil(B/3) samples are centred on a
// random voxel of a random present foreground class; the rest are uniform
// crops. Cases smaller than the patch are zero-padded symmetrically. For 2D
// topologies on 3D cases a slice along the axis outside topo.axes is drawn.
inline Batch sample_batch(std::span<const LoadedCase> cases, const TopologySpec& topo, std::uint64_t seed) {
  require(!cases.empty(), "batch sampling needs at least one case");
  const std::size_t dims = cases.front().image.dims();
  for (const auto& c : cases) {
    require(c.image.dims() == dims && c.label.extent == c.image.extent, "training cases must share dimensionality");
  }
  require(topo.axes.size() == topo.patch_size.size() && topo.batch_size >= 1, "invalid topology for sampling");
  require(topo.axes.size() == dims || topo.axes.size() + 1 == dims, "topology does not fit the cases");

  // Per image axis window length; 1 on the slicing axis of 2D topologies.
  Extent window(dims, 1);
  for (std::size_t i = 0; i < topo.axes.size(); ++i) window[topo.axes[i]] = topo.patch_size[i];
  std::optional<std::size_t> slice_axis;
  for (std::size_t a = 0; a < dims; ++a) {
    if (std::find(topo.axes.begin(), topo.axes.end(), a) == topo.axes.end()) slice_axis = a;
  }

  std::vector<detail::CaseIndex> index(cases.size());
  std::vector<std::size_t> with_foreground;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    index[c] = detail::index_case(cases[c].label);
    if (!index[c].classes.empty()) with_foreground.push_back(c);
  }

  Rng rng(seed);
  Batch batch;
  batch.no_foreground = with_foreground.empty();
  const std::size_t forced = batch.no_foreground ? 0 : forced_sample_count(topo.batch_size);
  for (std::size_t s = 0; s < topo.batch_size; ++s) {
    const bool force = s < forced;
    const std::size_t c = force ? with_foreground[rng.index(with_foreground.size())] : rng.index(cases.size());
    const Volume& img = cases[c].image;
    std::vector<long long> origin(dims);
    std::optional<Extent> centre;
    if (force) {
      const auto& idx = index[c];
      const std::size_t k = rng.index(idx.classes.size());
      centre = unravel(idx.voxels[k][rng.index(idx.voxels[k].size())], img.extent);
    }
    for (std::size_t a = 0; a < dims; ++a) {
      const long long e = static_cast<long long>(img.extent[a]);
      const long long p = static_cast<long long>(window[a]);
      // Padded frame: [-before, -before + max(e, p)).
      const long long before = e < p ? (p - e) / 2 : 0;
      const long long span = std::max(e, p) - p;  // number of start positions - 1
      long long start;
      if (centre) {
        start = std::clamp(static_cast<long long>((*centre)[a]) + before - p / 2, 0LL, span);
      } else {
        start = static_cast<long long>(rng.index(static_cast<std::size_t>(span) + 1));
      }
      origin[a] = start - before;
    }
    Volume patch = detail::read_window(img, origin, window);
    Volume target = detail::read_window(cases[c].label, origin, window);
    if (slice_axis) {
      patch = detail::drop_axis(std::move(patch), *slice_axis);
      target = detail::drop_axis(std::move(target), *slice_axis);
    }
    batch.images.push_back(std::move(patch));
    batch.targets.push_back(std::move(target));
    batch.foreground_forced.push_back(force);
  }
  return batch;
}

// Draws `count` batches; batch i uses its own generator seeded with
// base_seed + i, so the stream does not depend on the number of workers.
inline std::vector<Batch> sample_batches(std::span<const LoadedCase> cases, const TopologySpec& topo,
                                         std::uint64_t base_seed, std::size_t count, std::size_t jobs = 1) {
  std::vector<Batch> out(count);
  parallel_for(count, jobs, [&](std::size_t i) { out[i] = sample_batch(cases, topo, base_seed + i); });
  return out;
}

// Concrete spatial transform in voxel units of the patch.
struct SpatialParams {
  std::vector<double> angles_rad;  // one per rotation plane: 1 in 2D, 3 in 3D
  double scale = 1.0;              // > 1 zooms in
  // Optional displacement field, one channel per axis (voxels), on the patch grid.
  std::optional<std::vector<std::vector<double>>> displacement;
  std::vector<std::size_t> mirror_axes;  // axes to flip after resampling
};

namespace detail {

inline std::vector<std::vector<double>> rotation_matrix(const std::vector<double>& angles, std::size_t dims) {
  std::vector<std::vector<double>> r(dims, std::vector<double>(dims, 0.0));
  for (std::size_t i = 0; i < dims; ++i) r[i][i] = 1.0;
  auto mul = [&](const std::vector<std::vector<double>>& m) {
    std::vector<std::vector<double>> out(dims, std::vector<double>(dims, 0.0));
    for (std::size_t i = 0; i < dims; ++i) {
      for (std::size_t j = 0; j < dims; ++j) {
        for (std::size_t k = 0; k < dims; ++k) out[i][j] += m[i][k] * r[k][j];
      }
    }
    r = out;
  };
  // Plane p rotates axes (a, b): 2D -> (0,1); 3D -> (1,2), (0,2), (0,1).
  const std::vector<std::array<std::size_t, 2>> planes =
      dims == 2 ? std::vector<std::array<std::size_t, 2>>{{0, 1}}
                : std::vector<std::array<std::size_t, 2>>{{1, 2}, {0, 2}, {0, 1}};
  require(angles.size() == planes.size(), "one rotation angle per plane expected");
  for (std::size_t p = 0; p < planes.size(); ++p) {
    std::vector<std::vector<double>> m(dims, std::vector<double>(dims, 0.0));
    for (std::size_t i = 0; i < dims; ++i) m[i][i] = 1.0;
    const auto [a, b] = planes[p];
    const double c = std::cos(angles[p]), s = std::sin(angles[p]);
    m[a][a] = c;
    m[a][b] = -s;
    m[b][a] = s;
    m[b][b] = c;
    mul(m);
  }
  return r;
}

// Cubic convolution kernel (a = -1/2); interpolating, so exact on grid points.
inline double cubic_kernel(double x) {
  x = std::abs(x);
  if (x < 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

inline double sample_cubic(std::span<const float> channel, const Extent& extent, const Extent& strides,
                           const std::vector<double>& pos) {
  const std::size_t dims = extent.size();
  require(dims <= 3, "cubic sampling supports at most 3 axes");
  // Per-axis tap offsets and weights; taps outside the patch get weight 0.
  std::array<std::array<std::size_t, 4>, 3> off{};
  std::array<std::array<double, 4>, 3> w{};
  for (std::size_t a = 0; a < dims; ++a) {
    const long long base = static_cast<long long>(std::floor(pos[a])) - 1;
    for (int t = 0; t < 4; ++t) {
      const long long p = base + t;
      const bool inside = p >= 0 && p < static_cast<long long>(extent[a]);
      w[a][t] = inside ? cubic_kernel(pos[a] - static_cast<double>(p)) : 0.0;
      off[a][t] = inside ? static_cast<std::size_t>(p) * strides[a] : 0;
    }
  }
  for (std::size_t a = dims; a < 3; ++a) w[a] = {1.0, 0.0, 0.0, 0.0};
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (w[0][i] == 0.0) continue;
    for (int j = 0; j < 4; ++j) {
      if (w[1][j] == 0.0) continue;
      for (int k = 0; k < 4; ++k) {
        if (w[2][k] == 0.0) continue;
        acc += w[0][i] * w[1][j] * w[2][k] * channel[off[0][i] + off[1][j] + off[2][k]];
      }
    }
  }
  return acc;
}

inline float sample_nearest(std::span<const float> channel, const Extent& extent, const Extent& strides,
                            const std::vector<double>& pos) {
  std::size_t idx = 0;
  for (std::size_t a = 0; a < extent.size(); ++a) {
    const long long p = static_cast<long long>(std::floor(pos[a] + 0.5));
    if (p < 0 || p >= static_cast<long long>(extent[a])) return 0.0f;
    idx += static_cast<std::size_t>(p) * strides[a];
  }
  return channel[idx];
}

// Separable Gaussian smoothing, truncated at 3 sigma and renormalized at the
// borders.
inline void gaussian_smooth(std::vector<double>& field, const Extent& extent, const std::vector<double>& sigma) {
  const Extent strides = strides_of(extent);
  for (std::size_t a = 0; a < extent.size(); ++a) {
    const long long radius = static_cast<long long>(std::ceil(3.0 * sigma[a]));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (long long d = -radius; d <= radius; ++d) {
      kernel[static_cast<std::size_t>(d + radius)] = std::exp(-0.5 * double(d * d) / (sigma[a] * sigma[a]));
    }
    std::vector<double> out(field.size());
    const long long len = static_cast<long long>(extent[a]);
    for (std::size_t i = 0; i < field.size(); ++i) {
      const long long c = static_cast<long long>((i / strides[a]) % extent[a]);
      double acc = 0.0, norm = 0.0;
      for (long long d = -radius; d <= radius; ++d) {
        const long long p = c + d;
        if (p < 0 || p >= len) continue;
        const double k = kernel[static_cast<std::size_t>(d + radius)];
        acc += k * field[static_cast<std::size_t>(static_cast<long long>(i) + d * static_cast<long long>(strides[a]))];
        norm += k;
      }
      out[i] = acc / norm;
    }
    field.swap(out);
  }
}

inline std::size_t shortest_axis(const Extent& extent) {
  return static_cast<std::size_t>(std::min_element(extent.begin(), extent.end()) - extent.begin());
}

}  // namespace detail

inline Sample mirror(Sample s, std::size_t axis) {
  require(axis < s.image.dims(), "mirror axis out of range");
  s.image = flip(s.image, axis);
  s.label = flip(s.label, axis);
  return s;
}

// Resamples the sample once through the composed rotation, scaling and
// displacement about the patch centre, then applies the mirrors. Images use
// cubic interpolation and labels nearest neighbour; reads outside are zero.
inline Sample apply_spatial(const Sample& in, const SpatialParams& p) {
  const Extent& extent = in.image.extent;
  const std::size_t dims = extent.size();
  require(in.label.extent == extent, "image and label patches differ in shape");
  require(p.scale > 0.0, "spatial scale must be positive");
  const auto rot = detail::rotation_matrix(p.angles_rad, dims);
  const Extent strides = strides_of(extent);
  const std::size_t n = in.image.voxels();
  if (p.displacement) {
    require(p.displacement->size() == dims, "displacement needs one field per axis");
    for (const auto& f : *p.displacement) require(f.size() == n, "displacement field has the wrong size");
  }
  Sample out{Volume(in.image.kind, in.image.channels, extent, in.image.spacing),
             Volume(in.label.kind, in.label.channels, extent, in.label.spacing)};
  std::vector<double> centred(dims), pos(dims);
  std::size_t i = 0;
  for_each_coord(extent, [&](const Extent& c) {
    for (std::size_t a = 0; a < dims; ++a) centred[a] = static_cast<double>(c[a]) - 0.5 * double(extent[a] - 1);
    for (std::size_t a = 0; a < dims; ++a) {
      // Inverse rotation (transpose) maps output to source coordinates.
      double v = 0.0;
      for (std::size_t b = 0; b < dims; ++b) v += rot[b][a] * centred[b];
      pos[a] = v / p.scale + 0.5 * double(extent[a] - 1);
      if (p.displacement) pos[a] += (*p.displacement)[a][i];
    }
    for (std::size_t ch = 0; ch < in.image.channels; ++ch) {
      out.image.at(ch, i) = static_cast<float>(detail::sample_cubic(in.image.channel(ch), extent, strides, pos));
    }
    for (std::size_t ch = 0; ch < in.label.channels; ++ch) {
      out.label.at(ch, i) = detail::sample_nearest(in.label.channel(ch), extent, strides, pos);
    }
    ++i;
  });
  for (std::size_t a : p.mirror_axes) out = mirror(std::move(out), a);
  return out;
}

// Draws transform parameters for a patch of `extent` with voxel `spacing`.
inline SpatialParams draw_spatial_params(const AugmentationConfig& cfg, const Extent& extent, const Spacing& spacing,
                                         Rng& rng) {
  validate(cfg);
  require(extent.size() == cfg.dims && spacing.size() == cfg.dims, "augmentation dims do not match the patch");
  SpatialParams p;
  const std::size_t planes = cfg.dims == 2 ? 1 : 3;
  require(cfg.rotation_deg.size() == planes, "rotation range needs one entry per plane");
  for (std::size_t i = 0; i < planes; ++i) {
    const double r = cfg.rotation_deg[i] * std::numbers::pi / 180.0;
    p.angles_rad.push_back(rng.uniform(-r, r));
  }
  p.scale = rng.uniform(cfg.scale_low, cfg.scale_high);
  if (rng.bernoulli(cfg.elastic.probability)) {
    const std::size_t n = product(extent);
    const double alpha = rng.uniform(0.0, cfg.elastic.magnitude_mm);
    std::vector<std::vector<double>> field(cfg.dims, std::vector<double>(n));
    std::vector<double> sigma(cfg.dims);
    for (std::size_t a = 0; a < cfg.dims; ++a) sigma[a] = cfg.elastic.sigma_mm / spacing[a];
    for (std::size_t a = 0; a < cfg.dims; ++a) {
      for (double& x : field[a]) x = rng.normal();
      detail::gaussian_smooth(field[a], extent, sigma);
      // Largest displacement along this axis is alpha mm.
      double peak = 0.0;
      for (double x : field[a]) peak = std::max(peak, std::abs(x));
      const double gain = peak > 0.0 ? alpha / spacing[a] / peak : 0.0;
      for (double& x : field[a]) x *= gain;
    }
    p.displacement = std::move(field);
  }
  for (std::size_t a : cfg.mirror_axes) {
    if (rng.bernoulli(0.5)) p.mirror_axes.push_back(a);
  }
  return p;
}

// Random spatial augmentation. A 2D configuration on a 3D patch runs in
// slice-wise mode: one in-plane transform applied to every slice along the
// patch's shortest axis.
inline Sample apply_spatial(const Sample& in, const AugmentationConfig& cfg, Rng& rng) {
  const std::size_t dims = in.image.dims();
  if (cfg.dims == dims) return apply_spatial(in, draw_spatial_params(cfg, in.image.extent, in.image.spacing, rng));
  require(cfg.dims == 2 && dims == 3, "augmentation dims do not match the patch");
  const std::size_t axis = detail::shortest_axis(in.image.extent);
  Extent plane;
  Spacing plane_spacing;
  std::vector<std::size_t> plane_axes;
  for (std::size_t a = 0; a < 3; ++a) {
    if (a == axis) continue;
    plane.push_back(in.image.extent[a]);
    plane_spacing.push_back(in.image.spacing[a]);
    plane_axes.push_back(a);
  }
  const SpatialParams p = draw_spatial_params(cfg, plane, plane_spacing, rng);
  Sample out{in.image, in.label};
  for (std::size_t s = 0; s < in.image.extent[axis]; ++s) {
    std::vector<long long> origin(3, 0);
    origin[axis] = static_cast<long long>(s);
    Extent window = in.image.extent;
    window[axis] = 1;
    Sample slice{detail::drop_axis(detail::read_window(in.image, origin, window), axis),
                 detail::drop_axis(detail::read_window(in.label, origin, window), axis)};
    const Sample moved = apply_spatial(slice, p);
    const Extent strides = strides_of(in.image.extent);
    std::size_t i = 0;
    for_each_coord(plane, [&](const Extent& c) {
      Extent full(3);
      full[axis] = s;
      full[plane_axes[0]] = c[0];
      full[plane_axes[1]] = c[1];
      const std::size_t j = ravel(full, strides);
      for (std::size_t ch = 0; ch < in.image.channels; ++ch) out.image.at(ch, j) = moved.image.at(ch, i);
      for (std::size_t ch = 0; ch < in.label.channels; ++ch) out.label.at(ch, j) = moved.label.at(ch, i);
      ++i;
    });
  }
  return out;
}

// Gamma correction per channel: rescale to [0,1] over the patch, raise to
// gamma, rescale back. Constant channels are left untouched.
inline Volume apply_gamma(const Volume& image, double gamma) {
  require(gamma > 0.0, "gamma must be positive");
  Volume out = image;
  for (std::size_t ch = 0; ch < image.channels; ++ch) {
    const auto src = image.channel(ch);
    const auto [lo_it, hi_it] = std::minmax_element(src.begin(), src.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) continue;
    auto dst = out.channel(ch);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double u = (static_cast<double>(src[i]) - lo) / (hi - lo);
      dst[i] = static_cast<float>(lo + std::pow(u, gamma) * (hi - lo));
    }
    // Endpoints are fixed exactly, independent of rounding.
    dst[static_cast<std::size_t>(lo_it - src.begin())] = static_cast<float>(lo);
    dst[static_cast<std::size_t>(hi_it - src.begin())] = static_cast<float>(hi);
  }
  return out;
}

inline Sample apply_gamma(const Sample& in, const AugmentationConfig& cfg, Rng& rng) {
  validate(cfg);
  const double gamma = rng.uniform(cfg.gamma_low, cfg.gamma_high);
  return {apply_gamma(in.image, gamma), in.label};
}

inline Sample augment_sample(const Sample& in, const AugmentationConfig& cfg, Rng& rng) {
  return apply_gamma(apply_spatial(in, cfg, rng), cfg, rng);
}

enum class Morphology { erode, dilate, open, close };

struct CorruptionConfig {
  double morphology_probability = 0.4;
  double removal_probability = 0.2;
};

// Structuring element of radius r: offsets with max |o_a| <= r and
// sum o_a^2 <= r^2 + dims - 1, i.e. the full 3^d neighbourhood for r = 1 and
// a rounded cube beyond.
inline std::vector<std::vector<int>> ball_offsets(std::size_t dims, int radius) {
  require(radius >= 1, "ball radius must be positive");
  std::vector<std::vector<int>> out;
  const Extent box(dims, static_cast<std::size_t>(2 * radius + 1));
  const int limit = radius * radius + static_cast<int>(dims) - 1;
  for_each_coord(box, [&](const Extent& c) {
    std::vector<int> o(dims);
    int sq = 0;
    for (std::size_t a = 0; a < dims; ++a) {
      o[a] = static_cast<int>(c[a]) - radius;
      sq += o[a] * o[a];
    }
    if (sq <= limit) out.push_back(o);
  });
  return out;
}

// Binary morphology; voxels outside the grid count as background.
inline Mask morphology(const Mask& mask, const Extent& extent, Morphology op, int radius) {
  require(mask.size() == product(extent), "mask does not match its extent");
  const auto ball = ball_offsets(extent.size(), radius);
  const Extent strides = strides_of(extent);
  auto pass = [&](const Mask& m, bool dilate) {
    Mask out(m.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const Extent c = unravel(i, extent);
      bool any = false, all = true;
      for (const auto& o : ball) {
        bool set = false;
        bool inside = true;
        std::size_t j = 0;
        for (std::size_t a = 0; a < c.size(); ++a) {
          const long long p = static_cast<long long>(c[a]) + o[a];
          if (p < 0 || p >= static_cast<long long>(extent[a])) {
            inside = false;
            break;
          }
          j += static_cast<std::size_t>(p) * strides[a];
        }
        if (inside) set = m[j] != 0;
        any = any || set;
        all = all && set;
        if (dilate ? any : !all) break;
      }
      out[i] = dilate ? any : all;
    }
    return out;
  };
  switch (op) {
    case Morphology::dilate:
      return pass(mask, true);
    case Morphology::erode:
      return pass(mask, false);
    case Morphology::open:
      return pass(pass(mask, false), true);
    case Morphology::close:
      return pass(pass(mask, true), false);
  }
  return mask;
}

// Perturbs a one-hot segmentation used as cascade input: per foreground
// class, a random morphological operator and removal of a random connected
// component (never the only one). Classes are processed in ascending order;
// grown voxels take the class, shrunk voxels become background.
inline Volume corrupt_cascade_input(const Volume& onehot, Rng& rng, const CorruptionConfig& cfg = {}) {
  const std::size_t K = onehot.channels;
  require(K >= 1, "one-hot input needs channels");
  const std::size_t n = onehot.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    float sum = 0.0f;
    for (std::size_t k = 0; k < K; ++k) {
      const float v = onehot.at(k, i);
      require(v == 0.0f || v == 1.0f, "cascade input is not one-hot");
      sum += v;
    }
    require(sum == 1.0f, "cascade input is not one-hot");
  }
  Volume labels = argmax(onehot);
  const int connectivity = full_connectivity(onehot.dims());
  for (std::size_t k = 1; k < K; ++k) {
    const int cls = static_cast<int>(k);
    Mask m = class_mask(labels, cls);
    if (rng.bernoulli(cfg.morphology_probability)) {
      const auto op = static_cast<Morphology>(rng.index(4));
      const int radius = 1 + static_cast<int>(rng.index(3));
      m = morphology(m, labels.extent, op, radius);
    }
    if (rng.bernoulli(cfg.removal_probability)) {
      const auto comps = connected_components(m, labels.extent, connectivity);
      if (comps.size() >= 2) {
        for (std::size_t i : comps[rng.index(comps.size())].voxels) m[i] = 0;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i]) {
        labels.data[i] = static_cast<float>(cls);
      } else if (labels.label(i) == cls) {
        labels.data[i] = 0.0f;
      }
    }
  }
  Volume out = one_hot(labels, K);
  out.kind = onehot.kind;
  return out;
}

}  // namespace segplan

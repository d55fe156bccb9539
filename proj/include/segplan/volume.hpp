#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <span>
#include <string_view>
#include <vector>

#include "segplan/errors.hpp"
#include "segplan/geometry.hpp"

namespace segplan {

enum class VolumeKind { image, labelmap, softmax };

inline std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::image: return "image";
    case VolumeKind::labelmap: return "labelmap";
    case VolumeKind::softmax: return "softmax";
  }
  return "image";
}

inline VolumeKind parse_volume_kind(std::string_view text) {
  if (text == "image") return VolumeKind::image;
  if (text == "labelmap") return VolumeKind::labelmap;
  if (text == "softmax") return VolumeKind::softmax;
  throw ValidationError("unknown volume kind '" + std::string(text) + "'");
}

// Dense channel-major scalar field. Label maps keep integer class ids in the
// float payload; they are written to disk as u8.
struct Volume {
  VolumeKind kind = VolumeKind::image;
  std::size_t channels = 1;
  Extent extent;
  Spacing spacing;
  std::vector<float> data;

  Volume() = default;
  Volume(VolumeKind k, std::size_t num_channels, Extent ext, Spacing sp)
      : kind(k),
        channels(num_channels),
        extent(std::move(ext)),
        spacing(std::move(sp)),
        data(channels * product(extent), 0.0f) {}

  std::size_t voxels() const { return product(extent); }
  std::size_t dims() const { return extent.size(); }

  float& at(std::size_t channel, std::size_t voxel) {
    return data[channel * voxels() + voxel];
  }
  float at(std::size_t channel, std::size_t voxel) const {
    return data[channel * voxels() + voxel];
  }

  std::span<float> channel(std::size_t c) {
    return {data.data() + c * voxels(), voxels()};
  }
  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * voxels(), voxels()};
  }

  // Label value at a voxel (labelmaps only).
  int label(std::size_t voxel) const { return static_cast<int>(data[voxel]); }

  bool operator==(const Volume&) const = default;
};

inline Volume make_labelmap(Extent extent, Spacing spacing) {
  return Volume(VolumeKind::labelmap, 1, std::move(extent), std::move(spacing));
}

inline Spacing unit_spacing(std::size_t dims) { return Spacing(dims, 1.0); }

inline void validate_geometry(const Volume& v) {
  require(!v.extent.empty(), "volume has no spatial axes");
  require(v.spacing.size() == v.extent.size(),
          "spacing has " + std::to_string(v.spacing.size()) + " entries for " +
              std::to_string(v.extent.size()) + " spatial axes");
  for (double s : v.spacing) {
    require(std::isfinite(s) && s > 0.0, "spacing must be positive and finite");
  }
  for (std::size_t e : v.extent) require(e > 0, "extent must be positive");
  require(v.channels > 0, "volume must have at least one channel");
  require(v.data.size() == v.channels * v.voxels(),
          "payload size does not match shape");
}

// Checks every invariant of the volume's kind. `num_classes` is required for
// labelmap and softmax volumes.
inline void validate(const Volume& v, std::size_t num_classes = 0) {
  validate_geometry(v);
  switch (v.kind) {
    case VolumeKind::image:
      for (float x : v.data) require(std::isfinite(x), "non-finite image value");
      break;
    case VolumeKind::labelmap:
      require(v.channels == 1, "labelmap must have exactly one channel");
      for (float x : v.data) {
        require(x >= 0.0f && x == std::floor(x),
                "labelmap values must be non-negative integers");
        if (num_classes > 0) {
          require(static_cast<std::size_t>(x) < num_classes,
                  "labelmap value " + std::to_string(static_cast<int>(x)) +
                      " outside [0, " + std::to_string(num_classes) + ")");
        }
      }
      break;
    case VolumeKind::softmax: {
      if (num_classes > 0) {
        require(v.channels == num_classes,
                "softmax channel count does not match class count");
      }
      const std::size_t n = v.voxels();
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < v.channels; ++c) sum += v.at(c, i);
        require(std::abs(sum - 1.0) <= 1e-5, "softmax channels do not sum to 1");
      }
      break;
    }
  }
}

// Highest label value + 1.
inline std::size_t label_count(const Volume& labels) {
  float hi = 0.0f;
  for (float x : labels.data) hi = std::max(hi, x);
  return static_cast<std::size_t>(hi) + 1;
}

inline Volume argmax(const Volume& probs) {
  Volume out = make_labelmap(probs.extent, probs.spacing);
  const std::size_t n = probs.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.channels; ++c) {
      if (probs.at(c, i) > probs.at(best, i)) best = c;
    }
    out.data[i] = static_cast<float>(best);
  }
  return out;
}

inline Volume one_hot(const Volume& labels, std::size_t num_classes) {
  Volume out(VolumeKind::softmax, num_classes, labels.extent, labels.spacing);
  const std::size_t n = labels.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels.data[i]);
    require(k < num_classes, "label outside class range in one_hot");
    out.at(k, i) = 1.0f;
  }
  return out;
}

// Extracts `box` from every channel.
inline Volume crop(const Volume& v, const Box& box) {
  Volume out(v.kind, v.channels, box.extent(), v.spacing);
  const Extent src_strides = strides_of(v.extent);
  const std::size_t out_voxels = out.voxels();
  std::size_t o = 0;
  Extent src(v.dims());
  for_each_coord(out.extent, [&](const Extent& c) {
    for (std::size_t a = 0; a < c.size(); ++a) src[a] = c[a] + box.begin[a];
    const std::size_t s = ravel(src, src_strides);
    for (std::size_t ch = 0; ch < v.channels; ++ch) {
      out.data[ch * out_voxels + o] = v.data[ch * v.voxels() + s];
    }
    ++o;
  });
  return out;
}

// Places `v` at offset `before` inside a zero volume of extent `target`.
inline Volume pad(const Volume& v, const Extent& target, const Extent& before) {
  Volume out(v.kind, v.channels, target, v.spacing);
  const Extent dst_strides = strides_of(target);
  std::size_t i = 0;
  Extent dst(v.dims());
  for_each_coord(v.extent, [&](const Extent& c) {
    for (std::size_t a = 0; a < c.size(); ++a) dst[a] = c[a] + before[a];
    const std::size_t d = ravel(dst, dst_strides);
    for (std::size_t ch = 0; ch < v.channels; ++ch) {
      out.data[ch * out.voxels() + d] = v.data[ch * v.voxels() + i];
    }
    ++i;
  });
  return out;
}

// Concatenates channels of volumes sharing a spatial grid.
inline Volume concat_channels(const Volume& a, const Volume& b) {
  require(a.extent == b.extent, "channel concatenation needs equal extents");
  Volume out(VolumeKind::image, a.channels + b.channels, a.extent, a.spacing);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

// Reverses the given axis in every channel.
inline Volume flip(const Volume& v, std::size_t axis) {
  Volume out = v;
  const Extent strides = strides_of(v.extent);
  const std::size_t n = v.voxels();
  const std::size_t len = v.extent[axis];
  const std::size_t stride = strides[axis];
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t coord = (i / stride) % len;
    const std::size_t j = i + (len - 1 - 2 * coord) * stride;
    for (std::size_t c = 0; c < v.channels; ++c) {
      out.data[c * n + j] = v.data[c * n + i];
    }
  }
  return out;
}

}  // namespace segplan

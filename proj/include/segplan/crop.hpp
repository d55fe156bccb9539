#pragma once

#include <optional>

#include "segplan/components.hpp"
#include "segplan/volume.hpp"

namespace segplan {

struct CropResult {
  Volume image;
  std::optional<Volume> label;
  Box bbox;          // in original voxel indices, half-open
  Mask nonzero_mask;  // over the cropped grid
  bool all_zero = false;
};

// Tight bounding box of voxels that are nonzero in any channel.
inline std::optional<Box> nonzero_bbox(const Volume& image) {
  const std::size_t dims = image.dims();
  const std::size_t n = image.voxels();
  Box box{Extent(dims, SIZE_MAX), Extent(dims, 0)};
  bool any = false;
  const Extent strides = strides_of(image.extent);
  for (std::size_t i = 0; i < n; ++i) {
    bool nonzero = false;
    for (std::size_t c = 0; c < image.channels && !nonzero; ++c) nonzero = image.at(c, i) != 0.0f;
    if (!nonzero) continue;
    any = true;
    std::size_t rem = i;
    for (std::size_t a = 0; a < dims; ++a) {
      const std::size_t coord = rem / strides[a];
      rem %= strides[a];
      box.begin[a] = std::min(box.begin[a], coord);
      box.end[a] = std::max(box.end[a], coord + 1);
    }
  }
  if (!any) return std::nullopt;
  return box;
}

inline CropResult crop_to_nonzero(const Volume& image, const std::optional<Volume>& label = std::nullopt) {
  validate_geometry(image);
  if (label) {
    require(label->extent == image.extent, "image and label shapes differ");
  }
  CropResult out;
  const auto box = nonzero_bbox(image);
  out.all_zero = !box.has_value();
  out.bbox = box.value_or(Box{Extent(image.dims(), 0), image.extent});
  out.image = crop(image, out.bbox);
  if (label) out.label = crop(*label, out.bbox);
  const std::size_t n = out.image.voxels();
  out.nonzero_mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < out.image.channels; ++c) {
      if (out.image.at(c, i) != 0.0f) {
        out.nonzero_mask[i] = 1;
        break;
      }
    }
  }
  return out;
}

}  // namespace segplan

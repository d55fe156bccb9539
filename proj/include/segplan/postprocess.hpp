#pragma once

#include <vector>

#include "segplan/components.hpp"
#include "segplan/volume.hpp"

namespace segplan {

// For each listed class keep only its largest connected component; the rest
// of that class becomes background.
inline Volume apply_postprocessing(const Volume& pred, const std::vector<int>& classes) {
  require(pred.kind == VolumeKind::labelmap && pred.channels == 1, "postprocessing needs a labelmap");
  Volume out = pred;
  const int connectivity = full_connectivity(pred.dims());
  for (int k : classes) {
    require(k > 0, "postprocessing class ids must be foreground");
    const Mask m = class_mask(pred, k);
    const auto comps = connected_components(m, pred.extent, connectivity);
    for (std::size_t c = 1; c < comps.size(); ++c) {
      for (std::size_t i : comps[c].voxels) out.data[i] = 0.0f;
    }
  }
  return out;
}

}  // namespace segplan

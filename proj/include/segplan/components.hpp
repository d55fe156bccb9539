#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "segplan/errors.hpp"
#include "segplan/geometry.hpp"
#include "segplan/volume.hpp"

namespace segplan {

using Mask = std::vector<std::uint8_t>;

struct Component {
  std::vector<std::size_t> voxels;  // ascending linear indices
  std::size_t size() const { return voxels.size(); }
  std::size_t min_index() const { return voxels.front(); }
};

// Full connectivity for the dimensionality: 26 in 3D, 8 in 2D.
inline int full_connectivity(std::size_t dims) {
  int n = 1;
  for (std::size_t a = 0; a < dims; ++a) n *= 3;
  return n - 1;
}

namespace detail {

// Neighbour offsets in {-1,0,1}^d. Face connectivity keeps only offsets with
// a single non-zero entry.
inline std::vector<std::vector<int>> neighbour_offsets(std::size_t dims, int connectivity) {
  const bool full = connectivity == full_connectivity(dims);
  require(full || connectivity == static_cast<int>(2 * dims),
          "unsupported connectivity " + std::to_string(connectivity) + " for " +
              std::to_string(dims) + "D");
  std::vector<std::vector<int>> out;
  std::vector<int> off(dims, -1);
  while (true) {
    int nonzero = 0;
    for (int o : off) nonzero += o != 0;
    if (nonzero > 0 && (full || nonzero == 1)) out.push_back(off);
    std::size_t a = dims;
    while (a > 0) {
      --a;
      if (++off[a] <= 1) break;
      off[a] = -1;
      if (a == 0) return out;
    }
  }
}

}  // namespace detail

// Partitions the true voxels of `mask` into connected components, largest
// first; equal sizes ordered by smallest minimum linear index.
inline std::vector<Component> connected_components(std::span<const std::uint8_t> mask,
                                                   const Extent& extent, int connectivity) {
  require(mask.size() == product(extent), "mask size does not match extent");
  const std::size_t dims = extent.size();
  const auto offsets = detail::neighbour_offsets(dims, connectivity);
  const Extent strides = strides_of(extent);

  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<Component> out;
  std::deque<std::size_t> queue;
  Extent coord(dims);
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || seen[seed]) continue;
    Component comp;
    seen[seed] = 1;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      comp.voxels.push_back(i);
      std::size_t rem = i;
      for (std::size_t a = 0; a < dims; ++a) {
        coord[a] = rem / strides[a];
        rem %= strides[a];
      }
      for (const auto& off : offsets) {
        std::size_t j = 0;
        bool inside = true;
        for (std::size_t a = 0; a < dims && inside; ++a) {
          const auto c = static_cast<long long>(coord[a]) + off[a];
          inside = c >= 0 && c < static_cast<long long>(extent[a]);
          j += static_cast<std::size_t>(c) * strides[a];
        }
        if (inside && mask[j] && !seen[j]) {
          seen[j] = 1;
          queue.push_back(j);
        }
      }
    }
    std::sort(comp.voxels.begin(), comp.voxels.end());
    out.push_back(std::move(comp));
  }
  // Seeds are visited in index order, so a stable sort by size keeps the
  // min-index tie-break.
  std::stable_sort(out.begin(), out.end(),
                   [](const Component& a, const Component& b) { return a.size() > b.size(); });
  return out;
}

inline Mask class_mask(const Volume& labels, int class_id) {
  Mask m(labels.voxels());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = labels.label(i) == class_id;
  return m;
}

}  // namespace segplan

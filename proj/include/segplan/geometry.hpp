#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace segplan {

// Spatial extent in voxels, axes ordered (z, y, x) or (y, x).
using Extent = std::vector<std::size_t>;
// Physical voxel size in millimetres, same axis order as Extent.
using Spacing = std::vector<double>;

inline std::size_t product(const Extent& extent) {
  return std::accumulate(extent.begin(), extent.end(), std::size_t{1},
                         std::multiplies<>());
}

// C-order strides (last axis fastest).
inline Extent strides_of(const Extent& extent) {
  Extent strides(extent.size(), 1);
  for (std::size_t a = extent.size(); a-- > 1;) {
    strides[a - 1] = strides[a] * extent[a];
  }
  return strides;
}

inline Extent unravel(std::size_t index, const Extent& extent) {
  Extent coord(extent.size());
  for (std::size_t a = extent.size(); a-- > 0;) {
    coord[a] = index % extent[a];
    index /= extent[a];
  }
  return coord;
}

inline std::size_t ravel(const Extent& coord, const Extent& strides) {
  std::size_t index = 0;
  for (std::size_t a = 0; a < coord.size(); ++a) index += coord[a] * strides[a];
  return index;
}

inline std::string to_string(const Extent& extent) {
  std::string out;
  for (std::size_t a = 0; a < extent.size(); ++a) {
    if (a) out += 'x';
    out += std::to_string(extent[a]);
  }
  return out;
}

// Calls fn(coord) for every coordinate of `extent` in C order. `coord` is
// reused between calls.
template <typename Fn>
void for_each_coord(const Extent& extent, Fn&& fn) {
  if (product(extent) == 0) return;
  Extent coord(extent.size(), 0);
  while (true) {
    fn(static_cast<const Extent&>(coord));
    std::size_t a = extent.size();
    while (a > 0) {
      --a;
      if (++coord[a] < extent[a]) break;
      coord[a] = 0;
      if (a == 0) return;
    }
    if (extent.empty()) return;
  }
}

// Half-open per-axis index range.
struct Box {
  Extent begin;
  Extent end;

  Extent extent() const {
    Extent e(begin.size());
    for (std::size_t a = 0; a < e.size(); ++a) e[a] = end[a] - begin[a];
    return e;
  }
  bool operator==(const Box&) const = default;
};

}  // namespace segplan

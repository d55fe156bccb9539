#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "segplan/errors.hpp"
#include "segplan/geometry.hpp"
#include "segplan/planner.hpp"
#include "segplan/rng.hpp"
#include "segplan/volume.hpp"

namespace segplan {

// Where a patch handed to a predictor sits in the (unpadded) case image.
// origin is per image axis and may be negative when the case was padded.
// Patch axis j runs along image axis axes[j], reversed when mirrored[j].
struct PatchLocation {
  std::vector<long long> origin;
  std::vector<std::size_t> axes;
  std::vector<bool> mirrored;
  Extent image_extent;

  // Image coordinate of a patch voxel, or nullopt for padding.
  std::optional<Extent> image_coord(const Extent& patch_extent, const Extent& p) const {
    Extent out(image_extent.size());
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = static_cast<std::size_t>(std::max<long long>(origin[a], 0));
    for (std::size_t j = 0; j < axes.size(); ++j) {
      const std::size_t q = mirrored[j] ? patch_extent[j] - 1 - p[j] : p[j];
      const long long c = origin[axes[j]] + static_cast<long long>(q);
      if (c < 0 || c >= static_cast<long long>(image_extent[axes[j]])) return std::nullopt;
      out[axes[j]] = static_cast<std::size_t>(c);
    }
    return out;
  }
};

// Stand-in for a trained network: maps an image patch to per-class
// probabilities on the same grid.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Volume predict(const Volume& patch, const PatchLocation& where) const = 0;
};

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> axis_offsets(std::size_t extent, std::size_t patch) {
  require(patch >= 1 && extent >= patch, "tiling needs extent >= patch");
  const std::size_t step = std::max<std::size_t>(1, patch / 2);
  std::vector<std::size_t> out;
  for (std::size_t o = 0;; o += step) {
    if (o + patch >= extent) {
      out.push_back(extent - patch);
      break;
    }
    out.push_back(o);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Cartesian product of per-axis offsets, C order.
inline std::vector<Extent> tile_positions(const Extent& extent, const Extent& patch) {
  require(extent.size() == patch.size(), "tiling: dimensionality mismatch");
  std::vector<std::vector<std::size_t>> per_axis;
  Extent counts;
  for (std::size_t a = 0; a < extent.size(); ++a) {
    per_axis.push_back(axis_offsets(extent[a], patch[a]));
    counts.push_back(per_axis.back().size());
  }
  std::vector<Extent> out;
  for_each_coord(counts, [&](const Extent& c) {
    Extent pos(c.size());
    for (std::size_t a = 0; a < c.size(); ++a) pos[a] = per_axis[a][c[a]];
    out.push_back(pos);
  });
  return out;
}

// Separable Gaussian, sigma = patch/8 per axis, peak scaled to 1, floor 1e-3.
inline std::vector<double> gaussian_weights(const Extent& patch) {
  std::vector<std::vector<double>> axis(patch.size());
  for (std::size_t a = 0; a < patch.size(); ++a) {
    const double sigma = static_cast<double>(patch[a]) / 8.0;
    const double centre = (static_cast<double>(patch[a]) - 1.0) / 2.0;
    for (std::size_t i = 0; i < patch[a]; ++i) {
      const double d = static_cast<double>(i) - centre;
      axis[a].push_back(std::exp(-d * d / (2.0 * sigma * sigma)));
    }
  }
  std::vector<double> w(product(patch));
  double peak = 0.0;
  std::size_t i = 0;
  for_each_coord(patch, [&](const Extent& c) {
    double v = 1.0;
    for (std::size_t a = 0; a < c.size(); ++a) v *= axis[a][c[a]];
    w[i++] = v;
    peak = std::max(peak, v);
  });
  for (double& v : w) v = std::max(v / peak, 1e-3);
  return w;
}

// ---------------------------------------------------------------------------
// Case prediction
// ---------------------------------------------------------------------------

struct InferenceOptions {
  bool mirror_tta = true;
  std::vector<std::size_t> mirror_axes;  // patch axes; empty = all
};

struct CasePrediction {
  Volume probabilities;              // softmax over the case grid
  std::vector<std::uint32_t> counts;  // predictions aggregated per voxel
};

namespace detail {

inline std::vector<std::vector<std::size_t>> mirror_variants(std::size_t dims, const InferenceOptions& opt) {
  std::vector<std::size_t> axes = opt.mirror_axes;
  if (axes.empty()) {
    for (std::size_t a = 0; a < dims; ++a) axes.push_back(a);
  }
  std::vector<std::vector<std::size_t>> out{{}};
  if (!opt.mirror_tta) return out;
  out.clear();
  for (std::size_t mask = 0; mask < (std::size_t{1} << axes.size()); ++mask) {
    std::vector<std::size_t> subset;
    for (std::size_t b = 0; b < axes.size(); ++b) {
      if (mask & (std::size_t{1} << b)) subset.push_back(axes[b]);
    }
    out.push_back(subset);
  }
  return out;
}

// Tiled prediction of an image whose dimensionality equals the patch's.
// `origin`/`axes` place it inside the full case for the predictor.
inline CasePrediction predict_dense(const Volume& image, const Predictor& predictor, const Extent& patch,
                                    const InferenceOptions& opt, const PatchLocation& base) {
  const std::size_t dims = image.dims();
  require(patch.size() == dims, "patch dimensionality does not match image");
  const std::size_t K = predictor.num_classes();

  Extent padded_extent(dims), before(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    padded_extent[a] = std::max(image.extent[a], patch[a]);
    before[a] = (padded_extent[a] - image.extent[a]) / 2;
  }
  const Volume padded = padded_extent == image.extent ? image : pad(image, padded_extent, before);
  const std::vector<double> weights = gaussian_weights(patch);
  const auto variants = mirror_variants(dims, opt);
  const std::size_t n = padded.voxels();
  const std::size_t pn = product(patch);
  const Extent strides = strides_of(padded_extent);

  std::vector<double> num(K * n, 0.0), den(n, 0.0);
  std::vector<std::uint32_t> count(n, 0);
  std::vector<std::size_t> offsets(pn);

  for (const Extent& pos : tile_positions(padded_extent, patch)) {
    Box box{pos, pos};
    for (std::size_t a = 0; a < dims; ++a) box.end[a] = pos[a] + patch[a];
    std::size_t k = 0;
    for_each_coord(patch, [&](const Extent& c) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < dims; ++a) off += (c[a] + pos[a]) * strides[a];
      offsets[k++] = off;
    });
    const Volume tile = crop(padded, box);
    for (const auto& subset : variants) {
      Volume input = tile;
      PatchLocation where = base;
      where.mirrored.assign(dims, false);
      for (std::size_t a : subset) {
        input = flip(input, a);
        where.mirrored[a] = true;
      }
      for (std::size_t a = 0; a < dims; ++a) {
        where.origin[base.axes[a]] = base.origin[base.axes[a]] + static_cast<long long>(pos[a]) -
                                     static_cast<long long>(before[a]);
      }
      Volume out = predictor.predict(input, where);
      if (out.extent != patch || out.channels != K) {
        throw ValidationError("predictor output shape " + to_string(out.extent) + " x" +
                              std::to_string(out.channels) + " does not match patch " + to_string(patch) +
                              " x" + std::to_string(K));
      }
      for (std::size_t a : subset) out = flip(out, a);
      for (std::size_t i = 0; i < pn; ++i) {
        const std::size_t o = offsets[i];
        for (std::size_t c = 0; c < K; ++c) num[c * n + o] += weights[i] * out.data[c * pn + i];
        den[o] += weights[i];
        ++count[o];
      }
    }
  }

  CasePrediction result;
  result.probabilities = Volume(VolumeKind::softmax, K, image.extent, image.spacing);
  result.counts.resize(image.voxels());
  const std::size_t m = image.voxels();
  const Extent img_strides = strides_of(image.extent);
  // Renormalize only voxels whose sum drifted beyond 1e-6; rescaling sums
  // that are already 1 up to float rounding would perturb exact inputs.
  std::vector<double> q(K);
  for_each_coord(image.extent, [&](const Extent& c) {
    std::size_t src = 0;
    for (std::size_t a = 0; a < dims; ++a) src += (c[a] + before[a]) * strides[a];
    const std::size_t dst = ravel(c, img_strides);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += (q[k] = num[k * n + src] / den[src]);
    const double scale = std::abs(sum - 1.0) > 1e-6 ? 1.0 / sum : 1.0;
    for (std::size_t k = 0; k < K; ++k) result.probabilities.data[k * m + dst] = static_cast<float>(q[k] * scale);
    result.counts[dst] = count[src];
  });
  return result;
}

// Copies slice `index` along `axis` out of every channel.
inline Volume extract_slice(const Volume& v, std::size_t axis, std::size_t index) {
  Box box{Extent(v.dims(), 0), v.extent};
  box.begin[axis] = index;
  box.end[axis] = index + 1;
  Volume s = crop(v, box);
  s.extent.erase(s.extent.begin() + static_cast<std::ptrdiff_t>(axis));
  s.spacing.erase(s.spacing.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}

}  // namespace detail

// Sliding-window prediction with Gaussian-weighted aggregation and optional
// mirror TTA. 2D topologies run slice by slice along the axis they omit.
inline CasePrediction predict_case(const Volume& image, const Predictor& predictor, const TopologySpec& topo,
                                   const InferenceOptions& opt = {}) {
  validate_geometry(image);
  const std::size_t dims = image.dims();
  PatchLocation base;
  base.origin.assign(dims, 0);
  base.image_extent = image.extent;
  if (topo.dims == dims) {
    for (std::size_t a = 0; a < dims; ++a) base.axes.push_back(a);
    return detail::predict_dense(image, predictor, topo.patch_size, opt, base);
  }
  require(topo.dims + 1 == dims, "topology dimensionality does not fit the image");
  base.axes = topo.axes;
  std::size_t slice_axis = 0;
  while (std::find(topo.axes.begin(), topo.axes.end(), slice_axis) != topo.axes.end()) ++slice_axis;
  require(slice_axis < dims, "topology axes leave no slicing axis");

  const std::size_t K = predictor.num_classes();
  CasePrediction result;
  result.probabilities = Volume(VolumeKind::softmax, K, image.extent, image.spacing);
  result.counts.assign(image.voxels(), 0);
  const Extent strides = strides_of(image.extent);
  const std::size_t n = image.voxels();
  for (std::size_t s = 0; s < image.extent[slice_axis]; ++s) {
    base.origin[slice_axis] = static_cast<long long>(s);
    const Volume slice = detail::extract_slice(image, slice_axis, s);
    const CasePrediction part = detail::predict_dense(slice, predictor, topo.patch_size, opt, base);
    const std::size_t sn = slice.voxels();
    std::size_t i = 0;
    Extent full(dims);
    for_each_coord(slice.extent, [&](const Extent& c) {
      for (std::size_t j = 0; j < c.size(); ++j) full[topo.axes[j]] = c[j];
      full[slice_axis] = s;
      const std::size_t dst = ravel(full, strides);
      for (std::size_t k = 0; k < K; ++k) result.probabilities.data[k * n + dst] = part.probabilities.data[k * sn + i];
      result.counts[dst] = part.counts[i];
      ++i;
    });
  }
  return result;
}

// Per-voxel, per-class arithmetic mean.
inline Volume ensemble(const std::vector<Volume>& maps) {
  require(!maps.empty(), "ensemble of zero predictions");
  for (const Volume& m : maps) {
    require(m.extent == maps.front().extent && m.channels == maps.front().channels,
            "ensemble members have different shapes");
  }
  Volume out = maps.front();
  out.kind = VolumeKind::softmax;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double sum = 0.0;
    for (const Volume& m : maps) sum += m.data[i];
    out.data[i] = static_cast<float>(sum / static_cast<double>(maps.size()));
  }
  return out;
}

// 2|A n B| / (|A| + |B|); 1 when both are empty.
inline double dice_score(const Volume& pred, const Volume& gt, int class_id) {
  require(pred.extent == gt.extent, "dice: prediction and reference shapes differ");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.voxels(); ++i) {
    const bool p = pred.label(i) == class_id;
    const bool g = gt.label(i) == class_id;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

// ---------------------------------------------------------------------------
// Model selection and cross-validation folds
// ---------------------------------------------------------------------------

inline std::string ensemble_id(ModelKind a, ModelKind b) { return model_id(a) + "+" + model_id(b); }

// Candidate ids in tie-break order: 3d, cascade, 2d, then every pair of the
// available models in declaration order.
inline std::vector<std::string> candidate_order(const std::vector<ModelKind>& models) {
  std::vector<std::string> out;
  for (ModelKind m : {ModelKind::u3d, ModelKind::cascade, ModelKind::u2d}) {
    if (std::find(models.begin(), models.end(), m) != models.end()) out.push_back(model_id(m));
  }
  const std::vector<ModelKind> decl{ModelKind::u2d, ModelKind::u3d, ModelKind::cascade};
  for (std::size_t i = 0; i < decl.size(); ++i) {
    for (std::size_t j = i + 1; j < decl.size(); ++j) {
      const bool has_i = std::find(models.begin(), models.end(), decl[i]) != models.end();
      const bool has_j = std::find(models.begin(), models.end(), decl[j]) != models.end();
      if (has_i && has_j) out.push_back(ensemble_id(decl[i], decl[j]));
    }
  }
  return out;
}

inline int candidate_rank(const std::string& id) {
  static const std::vector<std::string> order{"3d", "cascade", "2d", "2d+3d", "2d+cascade", "3d+cascade"};
  const auto it = std::find(order.begin(), order.end(), id);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

inline double mean_of(const std::vector<double>& v) {
  require(!v.empty(), "mean of an empty list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Argmax of the mean foreground dice; exact ties resolved by candidate order.
inline std::string select_model(const std::map<std::string, std::vector<double>>& foreground_dice) {
  require(!foreground_dice.empty(), "model selection: no candidates");
  std::vector<std::string> ids;
  for (const auto& [id, _] : foreground_dice) ids.push_back(id);
  std::stable_sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
    return candidate_rank(a) < candidate_rank(b);
  });
  std::string best = ids.front();
  double best_score = mean_of(foreground_dice.at(best));
  for (const std::string& id : ids) {
    const double s = mean_of(foreground_dice.at(id));
    if (s > best_score) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

// Sorted ids, shuffled with the seed, dealt round-robin into min(5, n) folds.
inline std::vector<std::vector<std::string>> make_folds(std::vector<std::string> ids, std::uint64_t seed,
                                                        std::size_t num_folds = 5) {
  require(!ids.empty(), "cross-validation needs at least one case");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);
  const std::size_t k = std::min(num_folds, ids.size());
  std::vector<std::vector<std::string>> folds(k);
  for (std::size_t i = 0; i < ids.size(); ++i) folds[i % k].push_back(ids[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

}  // namespace segplan

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segplan/augment_config.hpp"
#include "segplan/errors.hpp"
#include "segplan/fingerprint.hpp"
#include "segplan/geometry.hpp"
#include "segplan/io.hpp"

namespace segplan {

inline constexpr const char* kPlanSchema = "segplan-1";

// Fixed hardware budgets the topology rules are calibrated against.
struct PlannerConfig {
  std::size_t base_patch_2d = 256;  // per axis
  std::size_t base_batch_2d = 42;
  std::uint64_t patch_budget_3d = 128ull * 128 * 128;
  std::size_t base_batch_3d = 2;
  std::size_t max_pools_2d = 6;
  std::size_t max_pools_3d = 5;
  std::size_t min_batch = 2;
  std::uint64_t dataset_fraction_divisor = 20;  // at most 5% of the dataset per step
  double anisotropy_threshold = 2.0;
  double cascade_factor = 4.0;
};

enum class ModelKind { u2d, u3d, cascade };

inline std::string model_id(ModelKind m) {
  switch (m) {
    case ModelKind::u2d: return "2d";
    case ModelKind::u3d: return "3d";
    case ModelKind::cascade: return "cascade";
  }
  return "3d";
}

inline ModelKind parse_model(const std::string& id) {
  if (id == "2d") return ModelKind::u2d;
  if (id == "3d") return ModelKind::u3d;
  if (id == "cascade") return ModelKind::cascade;
  throw ValidationError("unknown model '" + id + "'");
}

struct TopologySpec {
  std::size_t dims = 3;
  std::vector<std::size_t> axes;  // volume axes spanned by the patch
  Extent patch_size;
  std::size_t batch_size = 2;
  std::vector<std::size_t> pools_per_axis;
  std::size_t base_feature_maps = 30;
  std::size_t convs_per_level = 2;
  std::string nonlinearity = "leaky_relu";
  double negative_slope = 1e-2;
  std::string normalization = "instance";
  std::string upsampling = "transposed_convolution";

  bool operator==(const TopologySpec&) const = default;
};

enum class NormalizationScheme { ct_global, zscore_per_case };

struct PipelinePlan {
  std::string dataset_name;
  std::size_t num_classes = 2;
  Spacing target_spacing;
  Extent median_shape;
  std::vector<ModelKind> models;
  TopologySpec topo_2d;
  TopologySpec topo_3d;
  std::optional<TopologySpec> topo_lowres;
  std::optional<Spacing> lowres_spacing;
  std::optional<Extent> lowres_median_shape;
  NormalizationScheme normalization_scheme = NormalizationScheme::zscore_per_case;
  bool normalize_within_mask = false;
  std::optional<CtStats> ct_stats;
  bool use_2d_augmentation_for_3d = false;
  bool batch_dice_3d_fullvolume = true;
  std::vector<int> postprocess_classes;
  AugmentationConfig augmentation_2d = default_augmentation(2);
  AugmentationConfig augmentation_3d = default_augmentation(3);

  bool has(ModelKind m) const { return std::find(models.begin(), models.end(), m) != models.end(); }
  bool operator==(const PipelinePlan&) const = default;
};

// ---------------------------------------------------------------------------
// Per-axis rules
// ---------------------------------------------------------------------------

// Number of halvings until the axis is below 8 voxels, capped.
inline std::size_t pools_for_axis(double extent, std::size_t cap) {
  std::size_t pools = 0;
  while (extent >= 8.0 && pools < cap) {
    extent /= 2.0;
    ++pools;
  }
  return pools;
}

inline std::size_t round_to_multiple(double extent, std::size_t pools) {
  const double step = std::ldexp(1.0, static_cast<int>(pools));
  return static_cast<std::size_t>(std::ceil(extent / step) * step);
}

inline bool is_anisotropic(const Spacing& spacing, double threshold) {
  const auto [lo, hi] = std::minmax_element(spacing.begin(), spacing.end());
  return *hi / *lo > threshold;
}

// Axis dropped for 2D planes: largest spacing, first in (z, y, x) on ties.
inline std::size_t through_plane_axis(const Spacing& spacing) {
  return static_cast<std::size_t>(std::max_element(spacing.begin(), spacing.end()) - spacing.begin());
}

namespace detail {

inline std::size_t bounded_batch(std::uint64_t base_voxels, std::uint64_t dataset_voxels,
                                 std::uint64_t patch_voxels, const PlannerConfig& cfg) {
  const std::uint64_t by_memory = base_voxels / patch_voxels;
  const std::uint64_t by_dataset = dataset_voxels / (cfg.dataset_fraction_divisor * patch_voxels);
  return static_cast<std::size_t>(std::max<std::uint64_t>(cfg.min_batch, std::min(by_memory, by_dataset)));
}

inline std::size_t pow2(std::size_t p) { return std::size_t{1} << p; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Topologies
// ---------------------------------------------------------------------------

inline TopologySpec plan_2d(const DatasetFingerprint& fp, const PlannerConfig& cfg = {}) {
  const Extent& shape = fp.median_shape_resampled;
  TopologySpec t;
  t.dims = 2;
  if (shape.size() == 2) {
    t.axes = {0, 1};
  } else {
    const std::size_t drop = through_plane_axis(fp.median_spacing);
    for (std::size_t a = 0; a < shape.size(); ++a) {
      if (a != drop) t.axes.push_back(a);
    }
  }
  for (std::size_t a : t.axes) {
    const auto extent = static_cast<double>(shape[a]);
    const std::size_t patch = round_to_multiple(extent, pools_for_axis(extent, cfg.max_pools_2d));
    t.patch_size.push_back(patch);
    t.pools_per_axis.push_back(pools_for_axis(static_cast<double>(patch), cfg.max_pools_2d));
  }
  const std::uint64_t base = static_cast<std::uint64_t>(cfg.base_batch_2d) * cfg.base_patch_2d * cfg.base_patch_2d;
  t.batch_size = detail::bounded_batch(base, fp.dataset_voxels, product(t.patch_size), cfg);
  return t;
}

// 3D topology for an arbitrary median shape. `anisotropy_spacing` decides
// which axes are coarse; coarse axes keep their median extent while the fine
// axes are scaled to the voxel budget.
inline TopologySpec plan_3d_for(const Extent& shape, const Spacing& anisotropy_spacing,
                                std::size_t num_cases, const PlannerConfig& cfg = {}) {
  require(shape.size() == 3, "3D planning needs three spatial axes");
  const std::uint64_t budget = cfg.patch_budget_3d;
  const auto total = static_cast<double>(product(shape));

  std::vector<double> candidate(3);
  if (total <= static_cast<double>(budget)) {
    for (std::size_t a = 0; a < 3; ++a) candidate[a] = static_cast<double>(shape[a]);
  } else if (is_anisotropic(anisotropy_spacing, cfg.anisotropy_threshold)) {
    const double coarsest = *std::max_element(anisotropy_spacing.begin(), anisotropy_spacing.end());
    std::size_t fine = 0;
    for (double s : anisotropy_spacing) fine += s * cfg.anisotropy_threshold < coarsest;
    const double scale = std::pow(static_cast<double>(budget) / total, 1.0 / static_cast<double>(fine));
    for (std::size_t a = 0; a < 3; ++a) {
      const bool is_fine = anisotropy_spacing[a] * cfg.anisotropy_threshold < coarsest;
      candidate[a] = static_cast<double>(shape[a]) * (is_fine ? scale : 1.0);
    }
  } else {
    const double scale = std::cbrt(static_cast<double>(budget) / total);
    for (std::size_t a = 0; a < 3; ++a) candidate[a] = static_cast<double>(shape[a]) * scale;
  }

  TopologySpec t;
  t.dims = 3;
  t.axes = {0, 1, 2};
  t.patch_size.resize(3);
  t.pools_per_axis.resize(3);
  for (std::size_t a = 0; a < 3; ++a) {
    candidate[a] = std::max(candidate[a], 1.0);
    t.patch_size[a] = round_to_multiple(candidate[a], pools_for_axis(candidate[a], cfg.max_pools_3d));
    t.pools_per_axis[a] = pools_for_axis(static_cast<double>(t.patch_size[a]), cfg.max_pools_3d);
  }

  // Give back voxels from the axis that rounding inflated the most.
  while (product(t.patch_size) > budget) {
    std::optional<std::size_t> pick;
    double worst = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      if (t.patch_size[a] <= detail::pow2(t.pools_per_axis[a])) continue;
      const double overshoot = static_cast<double>(t.patch_size[a]) - candidate[a];
      if (!pick || overshoot >= worst) {
        pick = a;
        worst = overshoot;
      }
    }
    require(pick.has_value(), "cannot shrink patch below the voxel budget");
    const std::size_t a = *pick;
    t.patch_size[a] -= detail::pow2(t.pools_per_axis[a]);
    t.pools_per_axis[a] = pools_for_axis(static_cast<double>(t.patch_size[a]), cfg.max_pools_3d);
  }

  const std::uint64_t dataset_voxels = static_cast<std::uint64_t>(num_cases) * product(shape);
  t.batch_size = detail::bounded_batch(cfg.base_batch_3d * budget, dataset_voxels, product(t.patch_size), cfg);
  return t;
}

inline TopologySpec plan_3d(const DatasetFingerprint& fp, const PlannerConfig& cfg = {}) {
  TopologySpec t = plan_3d_for(fp.median_shape_resampled, fp.median_spacing, fp.num_cases, cfg);
  // The fingerprint's dataset_voxels is authoritative for the 5% cap.
  const std::uint64_t base = cfg.base_batch_3d * cfg.patch_budget_3d;
  t.batch_size = detail::bounded_batch(base, fp.dataset_voxels, product(t.patch_size), cfg);
  return t;
}

inline bool cascade_required(const DatasetFingerprint& fp, const TopologySpec& topo_3d,
                             const PlannerConfig& cfg = {}) {
  if (fp.median_shape_resampled.size() != 3) return false;
  return static_cast<double>(product(fp.median_shape_resampled)) >
         cfg.cascade_factor * static_cast<double>(product(topo_3d.patch_size));
}

struct LowresPlan {
  Spacing spacing;
  Extent median_shape;
  TopologySpec topology;
};

// Halves resolution until the median case fits into `cascade_factor` patch
// budgets. Anisotropic data first coarsens its fine axes toward the coarse one.
inline LowresPlan plan_lowres(const DatasetFingerprint& fp, const TopologySpec& topo_3d,
                              const PlannerConfig& cfg = {}) {
  require(cascade_required(fp, topo_3d, cfg), "plan_lowres called although the cascade is not required");
  Spacing spacing = fp.median_spacing;
  Extent shape = fp.median_shape_resampled;
  const double limit = cfg.cascade_factor * static_cast<double>(cfg.patch_budget_3d);
  auto halve = [&](std::size_t a) {
    spacing[a] *= 2.0;
    shape[a] = std::max<std::size_t>(1, (shape[a] + 1) / 2);
  };
  do {
    if (is_anisotropic(spacing, cfg.anisotropy_threshold)) {
      const double coarsest = *std::max_element(spacing.begin(), spacing.end());
      for (std::size_t a = 0; a < 3; ++a) {
        if (spacing[a] * cfg.anisotropy_threshold < coarsest) halve(a);
      }
    } else {
      for (std::size_t a = 0; a < 3; ++a) halve(a);
    }
  } while (static_cast<double>(product(shape)) > limit);

  LowresPlan out;
  out.spacing = spacing;
  out.median_shape = shape;
  out.topology = plan_3d_for(shape, fp.median_spacing, fp.num_cases, cfg);
  return out;
}

inline PipelinePlan make_plan(const DatasetFingerprint& fp, const PlannerConfig& cfg = {}) {
  PipelinePlan plan;
  plan.dataset_name = fp.name;
  plan.num_classes = fp.num_classes;
  plan.target_spacing = fp.median_spacing;
  plan.median_shape = fp.median_shape_resampled;
  plan.topo_2d = plan_2d(fp, cfg);
  plan.models = {ModelKind::u2d};
  const bool volumetric = fp.median_shape_resampled.size() == 3;
  bool cascade = false;
  if (volumetric) {
    plan.topo_3d = plan_3d(fp, cfg);
    plan.models.push_back(ModelKind::u3d);
    cascade = cascade_required(fp, plan.topo_3d, cfg);
    if (cascade) {
      LowresPlan low = plan_lowres(fp, plan.topo_3d, cfg);
      plan.models.push_back(ModelKind::cascade);
      plan.topo_lowres = low.topology;
      plan.lowres_spacing = low.spacing;
      plan.lowres_median_shape = low.median_shape;
    }
    const auto [lo, hi] = std::minmax_element(plan.topo_3d.patch_size.begin(), plan.topo_3d.patch_size.end());
    plan.use_2d_augmentation_for_3d = static_cast<double>(*hi) > cfg.anisotropy_threshold * static_cast<double>(*lo);
  }
  plan.batch_dice_3d_fullvolume = !cascade;
  plan.normalization_scheme = fp.is_ct ? NormalizationScheme::ct_global : NormalizationScheme::zscore_per_case;
  plan.ct_stats = fp.ct_stats;
  plan.normalize_within_mask = fp.crop_reduction <= 0.75;
  plan.postprocess_classes = fp.single_component_classes;
  return plan;
}

// Which nets compute the dice over the batch as one pseudo-volume. Nets that
// see (nearly) whole patients use per-sample dice instead.
inline bool uses_batch_dice(const PipelinePlan& plan, ModelKind model, bool lowres_stage) {
  if (lowres_stage) return false;
  if (model == ModelKind::u3d) return !plan.batch_dice_3d_fullvolume;
  return true;
}

// ---------------------------------------------------------------------------
// plan.json
// ---------------------------------------------------------------------------

inline ordered_json to_json(const TopologySpec& t) {
  ordered_json doc;
  doc["dims"] = t.dims;
  doc["axes"] = t.axes;
  doc["patch_size"] = t.patch_size;
  doc["batch_size"] = t.batch_size;
  doc["pools_per_axis"] = t.pools_per_axis;
  doc["base_feature_maps"] = t.base_feature_maps;
  doc["convs_per_level"] = t.convs_per_level;
  doc["nonlinearity"] = t.nonlinearity;
  doc["negative_slope"] = t.negative_slope;
  doc["normalization"] = t.normalization;
  doc["upsampling"] = t.upsampling;
  return doc;
}

inline TopologySpec topology_from_json(const json& doc) {
  TopologySpec t;
  t.dims = doc.at("dims").get<std::size_t>();
  t.axes = doc.at("axes").get<std::vector<std::size_t>>();
  t.patch_size = doc.at("patch_size").get<Extent>();
  t.batch_size = doc.at("batch_size").get<std::size_t>();
  t.pools_per_axis = doc.at("pools_per_axis").get<std::vector<std::size_t>>();
  t.base_feature_maps = doc.value("base_feature_maps", std::size_t{30});
  t.convs_per_level = doc.value("convs_per_level", std::size_t{2});
  t.nonlinearity = doc.value("nonlinearity", std::string("leaky_relu"));
  t.negative_slope = doc.value("negative_slope", 1e-2);
  t.normalization = doc.value("normalization", std::string("instance"));
  t.upsampling = doc.value("upsampling", std::string("transposed_convolution"));
  require(t.dims == t.patch_size.size() && t.dims == t.pools_per_axis.size() && t.dims == t.axes.size(),
          "topology: inconsistent dimensionality");
  return t;
}

inline ordered_json to_json(const PipelinePlan& p) {
  ordered_json doc;
  doc["schema"] = kPlanSchema;
  doc["dataset_name"] = p.dataset_name;
  doc["num_classes"] = p.num_classes;
  doc["target_spacing"] = p.target_spacing;
  doc["median_shape"] = p.median_shape;
  std::vector<std::string> models;
  for (ModelKind m : p.models) models.push_back(model_id(m));
  doc["models"] = models;
  doc["topo_2d"] = to_json(p.topo_2d);
  doc["topo_3d"] = p.has(ModelKind::u3d) ? to_json(p.topo_3d) : ordered_json(nullptr);
  doc["topo_lowres"] = p.topo_lowres ? to_json(*p.topo_lowres) : ordered_json(nullptr);
  doc["lowres_spacing"] = p.lowres_spacing ? ordered_json(*p.lowres_spacing) : ordered_json(nullptr);
  doc["lowres_median_shape"] = p.lowres_median_shape ? ordered_json(*p.lowres_median_shape) : ordered_json(nullptr);
  doc["normalization_scheme"] =
      p.normalization_scheme == NormalizationScheme::ct_global ? "ct_global" : "zscore_per_case";
  doc["normalize_within_mask"] = p.normalize_within_mask;
  if (p.ct_stats) {
    doc["ct_stats"] = {{"mean", p.ct_stats->mean}, {"sd", p.ct_stats->sd},
                       {"p0_5", p.ct_stats->p0_5}, {"p99_5", p.ct_stats->p99_5}};
  } else {
    doc["ct_stats"] = nullptr;
  }
  doc["use_2d_augmentation_for_3d"] = p.use_2d_augmentation_for_3d;
  doc["batch_dice_3d_fullvolume"] = p.batch_dice_3d_fullvolume;
  doc["postprocess_classes"] = p.postprocess_classes;
  doc["augmentation"] = {{"2d", to_json(p.augmentation_2d)}, {"3d", to_json(p.augmentation_3d)}};
  return doc;
}

inline PipelinePlan plan_from_json(const json& doc) {
  PipelinePlan p;
  try {
    require(doc.at("schema").get<std::string>() == kPlanSchema, "plan: unsupported schema");
    p.dataset_name = doc.value("dataset_name", std::string{});
    p.num_classes = doc.at("num_classes").get<std::size_t>();
    p.target_spacing = doc.at("target_spacing").get<Spacing>();
    p.median_shape = doc.at("median_shape").get<Extent>();
    for (const auto& m : doc.at("models")) p.models.push_back(parse_model(m.get<std::string>()));
    p.topo_2d = topology_from_json(doc.at("topo_2d"));
    if (!doc.at("topo_3d").is_null()) p.topo_3d = topology_from_json(doc.at("topo_3d"));
    if (!doc.at("topo_lowres").is_null()) p.topo_lowres = topology_from_json(doc.at("topo_lowres"));
    if (!doc.at("lowres_spacing").is_null()) p.lowres_spacing = doc.at("lowres_spacing").get<Spacing>();
    if (!doc.at("lowres_median_shape").is_null()) p.lowres_median_shape = doc.at("lowres_median_shape").get<Extent>();
    const std::string scheme = doc.at("normalization_scheme").get<std::string>();
    require(scheme == "ct_global" || scheme == "zscore_per_case", "plan: unknown normalization scheme");
    p.normalization_scheme = scheme == "ct_global" ? NormalizationScheme::ct_global : NormalizationScheme::zscore_per_case;
    p.normalize_within_mask = doc.at("normalize_within_mask").get<bool>();
    if (!doc.at("ct_stats").is_null()) {
      const json& s = doc.at("ct_stats");
      p.ct_stats = CtStats{s.at("mean").get<double>(), s.at("sd").get<double>(),
                           s.at("p0_5").get<double>(), s.at("p99_5").get<double>()};
    }
    p.use_2d_augmentation_for_3d = doc.at("use_2d_augmentation_for_3d").get<bool>();
    p.batch_dice_3d_fullvolume = doc.at("batch_dice_3d_fullvolume").get<bool>();
    p.postprocess_classes = doc.at("postprocess_classes").get<std::vector<int>>();
    p.augmentation_2d = augmentation_from_json(doc.at("augmentation").at("2d"));
    p.augmentation_3d = augmentation_from_json(doc.at("augmentation").at("3d"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("plan: ") + e.what());
  }
  require(p.has(ModelKind::cascade) == p.topo_lowres.has_value(), "plan: cascade model without lowres topology");
  require(p.normalization_scheme != NormalizationScheme::ct_global || p.ct_stats.has_value(),
          "plan: ct_global normalization needs ct_stats");
  return p;
}

}  // namespace segplan

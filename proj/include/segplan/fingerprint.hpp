#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "segplan/components.hpp"
#include "segplan/crop.hpp"
#include "segplan/io.hpp"
#include "segplan/parallel.hpp"
#include "segplan/volume.hpp"

namespace segplan {

struct LabeledCase {
  std::string id;
  Volume image;
  Volume label;
};

struct CtStats {
  double mean = 0.0;
  double sd = 1.0;
  double p0_5 = 0.0;
  double p99_5 = 0.0;
  bool operator==(const CtStats&) const = default;
};

struct DatasetFingerprint {
  std::string name;
  std::size_t num_cases = 0;
  std::size_t num_classes = 2;
  Spacing median_spacing;
  Extent median_shape_resampled;
  double crop_reduction = 1.0;
  bool is_ct = false;
  std::optional<CtStats> ct_stats;
  std::vector<int> single_component_classes;
  std::uint64_t dataset_voxels = 0;

  bool operator==(const DatasetFingerprint&) const = default;
};

// Element at index floor((n-1)/2) of the sorted values.
template <typename T>
T lower_median(std::vector<T> values) {
  require(!values.empty(), "median of an empty list");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

// Quantile with linear interpolation between order statistics
// (position q*(n-1)). Reorders `values`.
inline double quantile(std::vector<double>& values, double q) {
  require(!values.empty(), "quantile of an empty list");
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  auto lo_it = values.begin() + static_cast<std::ptrdiff_t>(lo);
  std::nth_element(values.begin(), lo_it, values.end());
  const double lo_value = *lo_it;
  if (frac == 0.0 || lo + 1 >= values.size()) return lo_value;
  const double hi_value = *std::min_element(lo_it + 1, values.end());
  return lo_value + frac * (hi_value - lo_value);
}

// Classes that form exactly one connected component in every case containing
// them. Classes absent from every case are excluded.
inline std::vector<int> class_single_component(std::span<const Volume> labels, std::size_t num_classes) {
  std::vector<int> out;
  for (std::size_t k = 1; k < num_classes; ++k) {
    bool present_anywhere = false;
    bool single = true;
    for (const Volume& lab : labels) {
      const Mask m = class_mask(lab, static_cast<int>(k));
      if (std::none_of(m.begin(), m.end(), [](std::uint8_t x) { return x != 0; })) continue;
      present_anywhere = true;
      if (connected_components(m, lab.extent, full_connectivity(lab.dims())).size() != 1) {
        single = false;
        break;
      }
    }
    if (present_anywhere && single) out.push_back(static_cast<int>(k));
  }
  return out;
}

inline Extent resampled_extent(const Extent& extent, const Spacing& spacing, const Spacing& target) {
  Extent out(extent.size());
  for (std::size_t a = 0; a < extent.size(); ++a) {
    const double e = std::round(static_cast<double>(extent[a]) * spacing[a] / target[a]);
    out[a] = std::max<std::size_t>(1, static_cast<std::size_t>(e));
  }
  return out;
}

inline DatasetFingerprint extract_fingerprint(const DatasetDescriptor& descriptor,
                                              std::span<const LabeledCase> cases,
                                              std::size_t jobs = 1) {
  require(!cases.empty(), "fingerprint needs at least one case");
  const std::size_t dims = cases.front().image.dims();
  const std::size_t num_classes = std::max<std::size_t>(descriptor.num_classes(), 2);

  struct CaseStats {
    Extent cropped;
    double original_voxels = 0;
  };
  std::vector<CaseStats> stats(cases.size());
  parallel_for(cases.size(), jobs, [&](std::size_t i) {
    const LabeledCase& c = cases[i];
    validate_geometry(c.image);
    require(c.image.dims() == dims, "case '" + c.id + "' has a different dimensionality");
    require(c.label.extent == c.image.extent,
            "shape mismatch between image and label in case '" + c.id + "'");
    validate(c.label, num_classes);
    const auto box = nonzero_bbox(c.image);
    stats[i].cropped = box ? box->extent() : c.image.extent;
    stats[i].original_voxels = static_cast<double>(c.image.voxels());
  });

  DatasetFingerprint fp;
  fp.name = descriptor.name;
  fp.num_cases = cases.size();
  fp.num_classes = num_classes;

  fp.median_spacing.resize(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    std::vector<double> axis;
    for (const auto& c : cases) axis.push_back(c.image.spacing[a]);
    fp.median_spacing[a] = lower_median(axis);
  }

  std::vector<Extent> resampled;
  double cropped_sum = 0.0;
  double original_sum = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    resampled.push_back(resampled_extent(stats[i].cropped, cases[i].image.spacing, fp.median_spacing));
    cropped_sum += static_cast<double>(product(stats[i].cropped));
    original_sum += stats[i].original_voxels;
  }
  fp.median_shape_resampled.resize(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    std::vector<std::size_t> axis;
    for (const auto& e : resampled) axis.push_back(e[a]);
    fp.median_shape_resampled[a] = lower_median(axis);
  }
  fp.crop_reduction = cropped_sum / original_sum;
  fp.dataset_voxels = static_cast<std::uint64_t>(fp.num_cases) * product(fp.median_shape_resampled);

  fp.is_ct = descriptor.is_ct();
  if (fp.is_ct) {
    std::vector<double> values;
    for (const auto& c : cases) {
      const std::size_t n = c.image.voxels();
      for (std::size_t ch = 0; ch < c.image.channels; ++ch) {
        for (std::size_t i = 0; i < n; ++i) {
          if (c.label.data[i] > 0.0f) values.push_back(c.image.at(ch, i));
        }
      }
    }
    require(!values.empty(), "CT dataset has no foreground voxels; normalization undefined");
    // Summing in sorted order keeps the statistics independent of case order.
    std::sort(values.begin(), values.end());
    CtStats ct;
    double sum = 0.0;
    for (double v : values) sum += v;
    ct.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - ct.mean) * (v - ct.mean);
    ct.sd = std::sqrt(sq / static_cast<double>(values.size()));
    ct.p0_5 = quantile(values, 0.005);
    ct.p99_5 = quantile(values, 0.995);
    fp.ct_stats = ct;
  }

  std::vector<Volume> labels;
  labels.reserve(cases.size());
  for (const auto& c : cases) labels.push_back(c.label);
  fp.single_component_classes = class_single_component(labels, num_classes);
  return fp;
}

inline ordered_json to_json(const DatasetFingerprint& fp) {
  ordered_json doc;
  doc["name"] = fp.name;
  doc["num_cases"] = fp.num_cases;
  doc["num_classes"] = fp.num_classes;
  doc["median_spacing"] = fp.median_spacing;
  doc["median_shape_resampled"] = fp.median_shape_resampled;
  doc["crop_reduction"] = fp.crop_reduction;
  doc["is_ct"] = fp.is_ct;
  if (fp.ct_stats) {
    doc["ct_stats"] = {{"mean", fp.ct_stats->mean},
                       {"sd", fp.ct_stats->sd},
                       {"p0_5", fp.ct_stats->p0_5},
                       {"p99_5", fp.ct_stats->p99_5}};
  } else {
    doc["ct_stats"] = nullptr;
  }
  doc["single_component_classes"] = fp.single_component_classes;
  doc["dataset_voxels"] = fp.dataset_voxels;
  return doc;
}

inline DatasetFingerprint fingerprint_from_json(const json& doc) {
  DatasetFingerprint fp;
  try {
    fp.name = doc.value("name", std::string{});
    fp.num_cases = doc.at("num_cases").get<std::size_t>();
    fp.num_classes = doc.value("num_classes", std::size_t{2});
    fp.median_spacing = doc.at("median_spacing").get<Spacing>();
    fp.median_shape_resampled = doc.at("median_shape_resampled").get<Extent>();
    fp.crop_reduction = doc.value("crop_reduction", 1.0);
    fp.is_ct = doc.at("is_ct").get<bool>();
    if (doc.contains("ct_stats") && !doc.at("ct_stats").is_null()) {
      const json& s = doc.at("ct_stats");
      fp.ct_stats = CtStats{s.at("mean").get<double>(), s.at("sd").get<double>(),
                            s.at("p0_5").get<double>(), s.at("p99_5").get<double>()};
    }
    fp.single_component_classes = doc.value("single_component_classes", std::vector<int>{});
    fp.dataset_voxels = doc.contains("dataset_voxels")
                            ? doc.at("dataset_voxels").get<std::uint64_t>()
                            : fp.num_cases * product(fp.median_shape_resampled);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("fingerprint: ") + e.what());
  }
  require(fp.num_cases > 0, "fingerprint: num_cases must be positive");
  require(fp.median_spacing.size() == fp.median_shape_resampled.size(),
          "fingerprint: spacing and shape have different lengths");
  for (double s : fp.median_spacing) require(std::isfinite(s) && s > 0, "fingerprint: bad spacing");
  for (std::size_t e : fp.median_shape_resampled) require(e >= 1, "fingerprint: bad median shape");
  require(fp.ct_stats.has_value() == fp.is_ct, "fingerprint: ct_stats present iff is_ct");
  if (fp.ct_stats) require(fp.ct_stats->p0_5 <= fp.ct_stats->p99_5, "fingerprint: p0_5 > p99_5");
  return fp;
}

}  // namespace segplan

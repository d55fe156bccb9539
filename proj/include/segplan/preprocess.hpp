#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "segplan/crop.hpp"
#include "segplan/io.hpp"
#include "segplan/planner.hpp"
#include "segplan/resample.hpp"
#include "segplan/volume.hpp"

namespace segplan {

enum class Resolution { fullres, lowres };

inline std::string to_string(Resolution r) { return r == Resolution::fullres ? "fullres" : "lowres"; }

struct NormalizationRecord {
  std::string scheme;
  bool within_mask = false;
  std::vector<double> mean;  // per channel
  std::vector<double> sd;
  bool sd_substituted = false;
};

struct PreprocessedCase {
  std::string id;
  Volume image;
  std::optional<Volume> label;
  Mask nonzero_mask;
  Box crop_bbox;
  Extent original_extent;
  Spacing original_spacing;
  Resolution resolution = Resolution::fullres;
  NormalizationRecord normalization;
  bool all_zero = false;
};

// Per-case z-score or dataset-level CT scheme. With `within_mask` only the
// nonzero region is normalized and everything outside becomes exactly 0.
inline Volume normalize(const Volume& image, const PipelinePlan& plan, const Mask& nonzero_mask,
                        NormalizationRecord* record = nullptr) {
  require(nonzero_mask.size() == image.voxels(), "mask does not match image");
  const bool within = plan.normalize_within_mask;
  NormalizationRecord rec;
  rec.within_mask = within;
  Volume out = image;
  const std::size_t n = image.voxels();
  auto in_region = [&](std::size_t i) { return !within || nonzero_mask[i] != 0; };

  if (plan.normalization_scheme == NormalizationScheme::ct_global) {
    require(plan.ct_stats.has_value(), "CT normalization needs dataset intensity statistics");
    const CtStats& s = *plan.ct_stats;
    rec.scheme = "ct_global";
    double sd = s.sd;
    if (!(sd > 0.0)) {
      sd = 1.0;
      rec.sd_substituted = true;
    }
    for (std::size_t c = 0; c < image.channels; ++c) {
      rec.mean.push_back(s.mean);
      rec.sd.push_back(sd);
      for (std::size_t i = 0; i < n; ++i) {
        if (!in_region(i)) {
          out.at(c, i) = 0.0f;
          continue;
        }
        const double x = std::clamp(static_cast<double>(image.at(c, i)), s.p0_5, s.p99_5);
        out.at(c, i) = static_cast<float>((x - s.mean) / sd);
      }
    }
  } else {
    rec.scheme = "zscore_per_case";
    for (std::size_t c = 0; c < image.channels; ++c) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (in_region(i)) {
          sum += image.at(c, i);
          ++count;
        }
      }
      const double mean = count ? sum / static_cast<double>(count) : 0.0;
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (in_region(i)) sq += (image.at(c, i) - mean) * (image.at(c, i) - mean);
      }
      double sd = count ? std::sqrt(sq / static_cast<double>(count)) : 0.0;
      if (!(sd > 0.0)) {
        sd = 1.0;
        rec.sd_substituted = true;
      }
      rec.mean.push_back(mean);
      rec.sd.push_back(sd);
      for (std::size_t i = 0; i < n; ++i) {
        out.at(c, i) = in_region(i) ? static_cast<float>((image.at(c, i) - mean) / sd) : 0.0f;
      }
    }
  }
  if (record) *record = rec;
  return out;
}

inline Spacing spacing_for(const PipelinePlan& plan, Resolution r) {
  if (r == Resolution::lowres) {
    require(plan.lowres_spacing.has_value(), "plan has no lowres resolution");
    return *plan.lowres_spacing;
  }
  return plan.target_spacing;
}

// crop -> resample -> normalize.
inline PreprocessedCase preprocess_case(const std::string& id, const Volume& image,
                                        const std::optional<Volume>& label, const PipelinePlan& plan,
                                        Resolution resolution = Resolution::fullres) {
  PreprocessedCase out;
  out.id = id;
  out.resolution = resolution;
  out.original_extent = image.extent;
  out.original_spacing = image.spacing;
  CropResult cropped = crop_to_nonzero(image, label);
  out.crop_bbox = cropped.bbox;
  out.all_zero = cropped.all_zero;

  const Spacing target = spacing_for(plan, resolution);
  require(target.size() == image.dims(), "plan spacing does not match image dimensionality");
  Volume resampled = resample(cropped.image, target);
  if (cropped.label) out.label = resample(*cropped.label, target);

  Volume mask_volume = make_labelmap(cropped.image.extent, cropped.image.spacing);
  for (std::size_t i = 0; i < cropped.nonzero_mask.size(); ++i) mask_volume.data[i] = cropped.nonzero_mask[i];
  mask_volume = resample(mask_volume, target);
  out.nonzero_mask.resize(mask_volume.voxels());
  for (std::size_t i = 0; i < out.nonzero_mask.size(); ++i) out.nonzero_mask[i] = mask_volume.data[i] != 0.0f;

  out.image = normalize(resampled, plan, out.nonzero_mask, &out.normalization);
  return out;
}

inline ordered_json case_record(const PreprocessedCase& c) {
  ordered_json doc;
  doc["id"] = c.id;
  doc["resolution"] = to_string(c.resolution);
  ordered_json bbox = ordered_json::array();
  for (std::size_t a = 0; a < c.crop_bbox.begin.size(); ++a) bbox.push_back({c.crop_bbox.begin[a], c.crop_bbox.end[a]});
  doc["crop_bbox"] = bbox;
  doc["original_extent"] = c.original_extent;
  doc["original_spacing"] = c.original_spacing;
  doc["extent"] = c.image.extent;
  doc["spacing"] = c.image.spacing;
  doc["all_zero"] = c.all_zero;
  doc["normalization"] = {{"scheme", c.normalization.scheme},
                          {"within_mask", c.normalization.within_mask},
                          {"mean", c.normalization.mean},
                          {"sd", c.normalization.sd},
                          {"sd_substituted", c.normalization.sd_substituted}};
  return doc;
}

// Layout: <root>/<resolution>/<id>/{image.mvox,label.mvox,mask.mvox,case.json}
inline fs::path case_dir(const fs::path& root, Resolution r, const std::string& id) {
  return root / to_string(r) / id;
}

inline void write_preprocessed(const PreprocessedCase& c, const fs::path& root) {
  const fs::path dir = case_dir(root, c.resolution, c.id);
  write_volume(c.image, dir / "image.mvox");
  if (c.label) write_volume(*c.label, dir / "label.mvox");
  Volume mask = make_labelmap(c.image.extent, c.image.spacing);
  for (std::size_t i = 0; i < c.nonzero_mask.size(); ++i) mask.data[i] = c.nonzero_mask[i];
  write_volume(mask, dir / "mask.mvox");
  write_json(dir / "case.json", case_record(c));
}

inline PreprocessedCase read_preprocessed(const fs::path& root, Resolution r, const std::string& id) {
  const fs::path dir = case_dir(root, r, id);
  if (!fs::exists(dir / "case.json")) {
    throw IoError("missing preprocessed " + to_string(r) + " case '" + id + "' under " + root.string());
  }
  PreprocessedCase c;
  const json doc = read_json(dir / "case.json");
  c.id = id;
  c.resolution = r;
  c.image = read_volume(dir / "image.mvox");
  if (fs::exists(dir / "label.mvox")) c.label = read_volume(dir / "label.mvox");
  const Volume mask = read_volume(dir / "mask.mvox");
  c.nonzero_mask.resize(mask.voxels());
  for (std::size_t i = 0; i < mask.voxels(); ++i) c.nonzero_mask[i] = mask.data[i] != 0.0f;
  for (const auto& pair : doc.at("crop_bbox")) {
    c.crop_bbox.begin.push_back(pair.at(0).get<std::size_t>());
    c.crop_bbox.end.push_back(pair.at(1).get<std::size_t>());
  }
  c.original_extent = doc.at("original_extent").get<Extent>();
  c.original_spacing = doc.at("original_spacing").get<Spacing>();
  c.all_zero = doc.value("all_zero", false);
  const json& norm = doc.at("normalization");
  c.normalization.scheme = norm.at("scheme").get<std::string>();
  c.normalization.within_mask = norm.at("within_mask").get<bool>();
  c.normalization.mean = norm.at("mean").get<std::vector<double>>();
  c.normalization.sd = norm.at("sd").get<std::vector<double>>();
  c.normalization.sd_substituted = norm.at("sd_substituted").get<bool>();
  return c;
}

}  // namespace segplan

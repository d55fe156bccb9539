#pragma once

#include <cstdint>
#include <vector>

#include "segplan/errors.hpp"
#include "segplan/io.hpp"

namespace segplan {

struct ElasticConfig {
  double probability = 0.2;
  double magnitude_mm = 10.0;
  double sigma_mm = 12.0;
  bool operator==(const ElasticConfig&) const = default;
};

// Global augmentation parameters; identical for every dataset.
struct AugmentationConfig {
  std::size_t dims = 3;
  std::vector<double> rotation_deg;  // +- range per rotation plane
  double scale_low = 0.85;
  double scale_high = 1.25;
  ElasticConfig elastic;
  double gamma_low = 0.7;
  double gamma_high = 1.5;
  std::vector<std::size_t> mirror_axes;
  std::uint64_t seed = 0;

  bool operator==(const AugmentationConfig&) const = default;
};

inline AugmentationConfig default_augmentation(std::size_t dims) {
  AugmentationConfig c;
  c.dims = dims;
  if (dims == 3) {
    c.rotation_deg = {15.0, 15.0, 15.0};
    c.mirror_axes = {0, 1, 2};
  } else {
    c.rotation_deg = {180.0};
    c.mirror_axes = {0, 1};
  }
  return c;
}

inline void validate(const AugmentationConfig& c) {
  require(c.dims == 2 || c.dims == 3, "augmentation dims must be 2 or 3");
  require(c.scale_low > 0 && c.scale_high >= c.scale_low, "invalid scale range");
  require(c.gamma_low > 0 && c.gamma_high >= c.gamma_low, "invalid gamma range");
  require(c.elastic.probability >= 0 && c.elastic.probability <= 1, "elastic probability outside [0,1]");
  require(c.elastic.sigma_mm > 0 && c.elastic.magnitude_mm >= 0, "invalid elastic parameters");
  for (std::size_t a : c.mirror_axes) require(a < c.dims, "mirror axis out of range");
}

inline ordered_json to_json(const AugmentationConfig& c) {
  ordered_json doc;
  doc["dims"] = c.dims;
  doc["rotation_deg"] = c.rotation_deg;
  doc["scale_range"] = {c.scale_low, c.scale_high};
  doc["elastic"] = {{"probability", c.elastic.probability},
                    {"magnitude_mm", c.elastic.magnitude_mm},
                    {"sigma_mm", c.elastic.sigma_mm}};
  doc["gamma_range"] = {c.gamma_low, c.gamma_high};
  doc["mirror_axes"] = c.mirror_axes;
  doc["seed"] = c.seed;
  return doc;
}

inline AugmentationConfig augmentation_from_json(const json& doc) {
  AugmentationConfig c;
  c.dims = doc.at("dims").get<std::size_t>();
  c.rotation_deg = doc.at("rotation_deg").get<std::vector<double>>();
  c.scale_low = doc.at("scale_range").at(0).get<double>();
  c.scale_high = doc.at("scale_range").at(1).get<double>();
  const json& e = doc.at("elastic");
  c.elastic = {e.at("probability").get<double>(), e.at("magnitude_mm").get<double>(),
               e.at("sigma_mm").get<double>()};
  c.gamma_low = doc.at("gamma_range").at(0).get<double>();
  c.gamma_high = doc.at("gamma_range").at(1).get<double>();
  c.mirror_axes = doc.at("mirror_axes").get<std::vector<std::size_t>>();
  c.seed = doc.value("seed", std::uint64_t{0});
  validate(c);
  return c;
}

}  // namespace segplan

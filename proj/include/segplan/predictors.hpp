#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segplan/fingerprint.hpp"
#include "segplan/inference.hpp"

namespace segplan {

enum class ToyKind { oracle, constant, threshold };

inline std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::oracle: return "oracle";
    case ToyKind::constant: return "constant";
    case ToyKind::threshold: return "threshold";
  }
  return "?";
}

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "oracle") return ToyKind::oracle;
  if (s == "constant") return ToyKind::constant;
  if (s == "threshold") return ToyKind::threshold;
  throw ValidationError("unknown predictor '" + s + "' (expected oracle, constant or threshold)");
}

// Same distribution everywhere; background by default.
class ConstantPredictor : public Predictor {
 public:
  explicit ConstantPredictor(std::vector<float> probs) : probs_(std::move(probs)) {
    require(!probs_.empty(), "constant predictor needs at least one class");
  }
  static ConstantPredictor background(std::size_t num_classes) {
    std::vector<float> p(num_classes, 0.0f);
    p[0] = 1.0f;
    return ConstantPredictor(std::move(p));
  }
  std::size_t num_classes() const override { return probs_.size(); }
  Volume predict(const Volume& patch, const PatchLocation&) const override {
    Volume out(VolumeKind::softmax, probs_.size(), patch.extent, patch.spacing);
    const std::size_t n = out.voxels();
    for (std::size_t k = 0; k < probs_.size(); ++k) std::fill_n(out.data.begin() + k * n, n, probs_[k]);
    return out;
  }

 private:
  std::vector<float> probs_;
};

// One-hot of the reference segmentation at the patch location; padding is
// background.
class OraclePredictor : public Predictor {
 public:
  OraclePredictor(Volume reference, std::size_t num_classes)
      : reference_(std::move(reference)), num_classes_(num_classes) {}
  std::size_t num_classes() const override { return num_classes_; }
  Volume predict(const Volume& patch, const PatchLocation& where) const override {
    require(where.image_extent == reference_.extent, "oracle reference does not match the case grid");
    Volume out(VolumeKind::softmax, num_classes_, patch.extent, patch.spacing);
    const Extent strides = strides_of(reference_.extent);
    const std::size_t n = out.voxels();
    std::size_t i = 0;
    for_each_coord(patch.extent, [&](const Extent& p) {
      const auto c = where.image_coord(patch.extent, p);
      const std::size_t k = c ? static_cast<std::size_t>(reference_.data[ravel(*c, strides)]) : 0;
      out.data[k * n + i] = 1.0f;
      ++i;
    });
    return out;
  }

 private:
  Volume reference_;
  std::size_t num_classes_;
};

// Per foreground class an intensity window on channel 0: logit +4 inside,
// -4 outside, background fixed at 0.
struct ThresholdModel {
  std::vector<std::optional<std::pair<double, double>>> windows;  // index = class id; [0] unused

  std::size_t num_classes() const { return windows.size(); }
};

inline constexpr double kThresholdLogit = 4.0;

// Windows are the [p25, p75] range of training foreground intensities.
inline ThresholdModel fit_threshold(const std::vector<const Volume*>& images, const std::vector<const Volume*>& labels,
                                    std::size_t num_classes) {
  require(images.size() == labels.size(), "threshold fit: image/label count mismatch");
  std::vector<std::vector<double>> values(num_classes);
  for (std::size_t c = 0; c < images.size(); ++c) {
    require(images[c]->extent == labels[c]->extent, "threshold fit: image/label shape mismatch");
    for (std::size_t i = 0; i < labels[c]->voxels(); ++i) {
      const auto k = static_cast<std::size_t>(labels[c]->data[i]);
      if (k > 0 && k < num_classes) values[k].push_back(images[c]->at(0, i));
    }
  }
  ThresholdModel m;
  m.windows.resize(num_classes);
  for (std::size_t k = 1; k < num_classes; ++k) {
    if (values[k].empty()) continue;
    const double lo = quantile(values[k], 0.25);
    const double hi = quantile(values[k], 0.75);
    m.windows[k] = std::pair{lo, hi};
  }
  return m;
}

inline ordered_json to_json(const ThresholdModel& m) {
  ordered_json w = ordered_json::array();
  for (std::size_t k = 0; k < m.windows.size(); ++k) {
    if (m.windows[k]) w.push_back({m.windows[k]->first, m.windows[k]->second});
    else w.push_back(nullptr);
  }
  return w;
}

// Softmax of the window logits for an intensity.
inline void threshold_probs(const ThresholdModel& m, double x, std::vector<double>& p) {
  const std::size_t K = m.num_classes();
  p.assign(K, 0.0);
  double peak = 0.0;
  for (std::size_t k = 1; k < K; ++k) {
    const bool inside = m.windows[k] && x >= m.windows[k]->first && x <= m.windows[k]->second;
    p[k] = inside ? kThresholdLogit : -kThresholdLogit;
    peak = std::max(peak, p[k]);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) sum += (p[k] = std::exp(p[k] - peak));
  for (double& v : p) v /= sum;
}

class ThresholdPredictor : public Predictor {
 public:
  explicit ThresholdPredictor(ThresholdModel model) : model_(std::move(model)) {}
  std::size_t num_classes() const override { return model_.num_classes(); }
  Volume predict(const Volume& patch, const PatchLocation&) const override {
    Volume out(VolumeKind::softmax, num_classes(), patch.extent, patch.spacing);
    const std::size_t n = out.voxels();
    std::vector<double> p;
    for (std::size_t i = 0; i < n; ++i) {
      threshold_probs(model_, patch.at(0, i), p);
      for (std::size_t k = 0; k < p.size(); ++k) out.data[k * n + i] = static_cast<float>(p[k]);
    }
    return out;
  }

 private:
  ThresholdModel model_;
};

// Second cascade stage: the input carries the image channels followed by the
// one-hot stage-1 segmentation; the output mixes the base prediction on the
// image channels with that segmentation.
class CascadeRefinePredictor : public Predictor {
 public:
  CascadeRefinePredictor(std::shared_ptr<const Predictor> base, std::size_t image_channels, double mix = 0.5)
      : base_(std::move(base)), image_channels_(image_channels), mix_(mix) {}
  std::size_t num_classes() const override { return base_->num_classes(); }
  Volume predict(const Volume& patch, const PatchLocation& where) const override {
    const std::size_t K = num_classes();
    require(patch.channels == image_channels_ + K, "cascade input must carry the stage-1 one-hot channels");
    const std::size_t n = patch.voxels();
    Volume image(VolumeKind::image, image_channels_, patch.extent, patch.spacing);
    std::copy_n(patch.data.begin(), image_channels_ * n, image.data.begin());
    Volume out = base_->predict(image, where);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = (1.0 - mix_) * out.data[k * n + i] + mix_ * patch.data[(image_channels_ + k) * n + i];
        out.data[k * n + i] = static_cast<float>(v);
      }
    }
    return out;
  }

 private:
  std::shared_ptr<const Predictor> base_;
  std::size_t image_channels_;
  double mix_;
};

}  // namespace segplan

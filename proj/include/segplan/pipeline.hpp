#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "segplan/augment.hpp"
#include "segplan/fingerprint.hpp"
#include "segplan/inference.hpp"
#include "segplan/io.hpp"
#include "segplan/losses.hpp"
#include "segplan/parallel.hpp"
#include "segplan/planner.hpp"
#include "segplan/postprocess.hpp"
#include "segplan/predictors.hpp"
#include "segplan/preprocess.hpp"
#include "segplan/scheduler.hpp"

namespace segplan {

#ifdef SEGPLAN_VERSION
inline constexpr const char* kToolVersion = SEGPLAN_VERSION;
#else
inline constexpr const char* kToolVersion = "0.0.0";
#endif

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

// Accepts a dataset directory (containing dataset.json) or the descriptor file.
inline fs::path descriptor_path(const fs::path& dataset) {
  return fs::is_directory(dataset) ? dataset / "dataset.json" : dataset;
}

inline std::vector<LabeledCase> load_cases(const DatasetDescriptor& d, std::size_t jobs = 1) {
  std::vector<LabeledCase> cases(d.training_cases.size());
  parallel_for(cases.size(), jobs, [&](std::size_t i) {
    const auto& tc = d.training_cases[i];
    cases[i] = {tc.id, read_volume(tc.image), read_volume(tc.label)};
    require(cases[i].image.kind == VolumeKind::image, "case '" + tc.id + "': image file is not an image volume");
    require(cases[i].label.kind == VolumeKind::labelmap, "case '" + tc.id + "': label file is not a labelmap");
  });
  return cases;
}

inline DatasetFingerprint cmd_fingerprint(const fs::path& dataset, const fs::path& out, std::size_t jobs = 1) {
  const DatasetDescriptor d = read_descriptor(descriptor_path(dataset));
  const auto cases = load_cases(d, jobs);
  const DatasetFingerprint fp = extract_fingerprint(d, cases, jobs);
  write_json(out, to_json(fp));
  return fp;
}

inline PipelinePlan cmd_plan(const fs::path& fingerprint, const fs::path& out, const PlannerConfig& cfg = {}) {
  const PipelinePlan plan = make_plan(fingerprint_from_json(read_json(fingerprint)), cfg);
  write_json(out, to_json(plan));
  return plan;
}

inline PipelinePlan read_plan(const fs::path& path) { return plan_from_json(read_json(path)); }

// Layout: <out>/cases.json plus <out>/<resolution>/<id>/ per case.
inline void cmd_preprocess(const fs::path& dataset, const fs::path& plan_path, const fs::path& out,
                           std::size_t jobs = 1) {
  const PipelinePlan plan = read_plan(plan_path);
  const DatasetDescriptor d = read_descriptor(descriptor_path(dataset));
  std::vector<Resolution> resolutions{Resolution::fullres};
  if (plan.has(ModelKind::cascade)) resolutions.push_back(Resolution::lowres);
  parallel_for(d.training_cases.size(), jobs, [&](std::size_t i) {
    const auto& tc = d.training_cases[i];
    const Volume image = read_volume(tc.image);
    const Volume label = read_volume(tc.label);
    for (Resolution r : resolutions) write_preprocessed(preprocess_case(tc.id, image, label, plan, r), out);
  });
  ordered_json index;
  index["dataset"] = d.name;
  index["num_classes"] = plan.num_classes;
  ordered_json ids = ordered_json::array();
  for (const auto& tc : d.training_cases) ids.push_back(tc.id);
  index["cases"] = ids;
  ordered_json res = ordered_json::array();
  for (Resolution r : resolutions) res.push_back(to_string(r));
  index["resolutions"] = res;
  write_json(out / "cases.json", index);
}

// ---------------------------------------------------------------------------
// Toy predictor fitting
// ---------------------------------------------------------------------------

// A fitted toy model. Oracles need the case's reference at prediction time.
struct ToyFit {
  ToyKind kind = ToyKind::constant;
  std::size_t num_classes = 2;
  std::optional<ThresholdModel> threshold;

  std::shared_ptr<const Predictor> for_case(const Volume* reference) const {
    switch (kind) {
      case ToyKind::oracle:
        require(reference != nullptr, "the oracle predictor needs a reference segmentation");
        return std::make_shared<OraclePredictor>(*reference, num_classes);
      case ToyKind::constant:
        return std::make_shared<ConstantPredictor>(ConstantPredictor::background(num_classes));
      case ToyKind::threshold:
        return std::make_shared<ThresholdPredictor>(*threshold);
    }
    return nullptr;
  }
};

inline ToyFit fit_toy(ToyKind kind, std::size_t num_classes, const std::vector<const Volume*>& images,
                      const std::vector<const Volume*>& labels) {
  ToyFit fit{kind, num_classes, std::nullopt};
  if (kind == ToyKind::threshold) fit.threshold = fit_threshold(images, labels, num_classes);
  return fit;
}

inline ordered_json to_json(const ToyFit& fit) {
  ordered_json doc;
  doc["kind"] = to_string(fit.kind);
  if (fit.threshold) doc["windows"] = to_json(*fit.threshold);
  return doc;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct RunCvOptions {
  ToyKind predictor = ToyKind::threshold;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool tta = true;
  std::size_t max_epochs = 1000;
};

// Preprocessed case with both resolutions where available.
struct CvCase {
  std::string id;
  Volume image;
  Volume label;
  std::optional<Volume> low_image;
  std::optional<Volume> low_label;
};

inline std::vector<CvCase> load_preprocessed(const fs::path& root, bool lowres, std::size_t jobs = 1) {
  const json index = read_json(root / "cases.json");
  const auto ids = index.at("cases").get<std::vector<std::string>>();
  std::vector<CvCase> cases(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t i) {
    PreprocessedCase full = read_preprocessed(root, Resolution::fullres, ids[i]);
    require(full.label.has_value(), "preprocessed case '" + ids[i] + "' has no label");
    cases[i].id = ids[i];
    cases[i].image = std::move(full.image);
    cases[i].label = std::move(*full.label);
    if (lowres) {
      PreprocessedCase low = read_preprocessed(root, Resolution::lowres, ids[i]);
      require(low.label.has_value(), "preprocessed lowres case '" + ids[i] + "' has no label");
      cases[i].low_image = std::move(low.image);
      cases[i].low_label = std::move(*low.label);
    }
  });
  return cases;
}

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for a tuple of integer tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix(base);
  for (std::uint64_t t : tags) h = splitmix(h ^ t);
  return h;
}

inline std::uint64_t model_tag(ModelKind m) { return static_cast<std::uint64_t>(m) + 1; }

}  // namespace detail

// Fitted predictors for one model in one fold, plus how to run them.
struct FoldModel {
  ModelKind model = ModelKind::u3d;
  ToyFit fullres;
  std::optional<ToyFit> lowres;  // cascade stage 1
};

inline FoldModel fit_fold_model(ModelKind model, ToyKind kind, std::size_t K, const std::vector<const CvCase*>& train) {
  std::vector<const Volume*> images, labels, low_images, low_labels;
  for (const CvCase* c : train) {
    images.push_back(&c->image);
    labels.push_back(&c->label);
    if (c->low_image) {
      low_images.push_back(&*c->low_image);
      low_labels.push_back(&*c->low_label);
    }
  }
  FoldModel fm;
  fm.model = model;
  fm.fullres = fit_toy(kind, K, images, labels);
  if (model == ModelKind::cascade) {
    require(low_images.size() == train.size(), "cascade needs the preprocessed lowres resolution");
    fm.lowres = fit_toy(kind, K, low_images, low_labels);
  }
  return fm;
}

// Stage-2 predictor of the cascade. Oracle and constant models gain nothing
// from the stage-1 channels, so they are used as they are.
inline std::shared_ptr<const Predictor> cascade_stage2(const ToyFit& fit, const Volume* reference,
                                                       std::size_t image_channels) {
  auto base = fit.for_case(reference);
  if (fit.kind != ToyKind::threshold) return base;
  return std::make_shared<CascadeRefinePredictor>(base, image_channels);
}

// Upsampled stage-1 segmentation as one-hot channels on the fullres grid.
inline Volume stage1_channels(const Volume& stage1_labels, const Volume& fullres_image, std::size_t K) {
  const Volume up = resample_to_shape(stage1_labels, fullres_image.extent, fullres_image.spacing);
  return one_hot(up, K);
}

inline Volume predict_with(const FoldModel& fm, const PipelinePlan& plan, const Volume& image,
                           const std::optional<Volume>& low_image, const Volume* reference,
                           const Volume* low_reference, const InferenceOptions& opt) {
  switch (fm.model) {
    case ModelKind::u2d:
      return predict_case(image, *fm.fullres.for_case(reference), plan.topo_2d, opt).probabilities;
    case ModelKind::u3d:
      return predict_case(image, *fm.fullres.for_case(reference), plan.topo_3d, opt).probabilities;
    case ModelKind::cascade: {
      require(low_image.has_value() && plan.topo_lowres.has_value(), "cascade needs the lowres resolution");
      const Volume stage1 =
          argmax(predict_case(*low_image, *fm.lowres->for_case(low_reference), *plan.topo_lowres, opt).probabilities);
      const Volume input = concat_channels(image, stage1_channels(stage1, image, plan.num_classes));
      const auto stage2 = cascade_stage2(fm.fullres, reference, image.channels);
      if (fm.fullres.kind == ToyKind::threshold) return predict_case(input, *stage2, plan.topo_3d, opt).probabilities;
      return predict_case(image, *stage2, plan.topo_3d, opt).probabilities;
    }
  }
  return {};
}

// Mean total loss (dice + CE) of a predictor over a batch.
inline double batch_loss(const Predictor& pred, const std::vector<Volume>& images, const std::vector<Volume>& targets,
                         bool batch_dice, ToyKind kind, std::size_t K) {
  require(!images.empty(), "empty batch");
  LossInput in;
  in.batch = images.size();
  in.classes = K;
  in.voxels = images.front().voxels();
  in.batch_dice = batch_dice;
  in.target.assign(in.batch * K * in.voxels, 0.0);
  std::vector<double> probs(in.target.size());
  for (std::size_t b = 0; b < in.batch; ++b) {
    const Volume& img = images[b];
    PatchLocation where;
    where.origin.assign(img.dims(), 0);
    for (std::size_t a = 0; a < img.dims(); ++a) where.axes.push_back(a);
    where.mirrored.assign(img.dims(), false);
    where.image_extent = img.extent;
    // An oracle on a training patch reads that patch's own target.
    const OraclePredictor patch_oracle(targets[b], K);
    const Predictor& p = kind == ToyKind::oracle ? static_cast<const Predictor&>(patch_oracle) : pred;
    const Volume u = p.predict(img, where);
    for (std::size_t i = 0; i < in.voxels; ++i) {
      in.target[in.index(b, static_cast<std::size_t>(targets[b].data[i]), i)] = 1.0;
      for (std::size_t k = 0; k < K; ++k) probs[in.index(b, k, i)] = u.at(k, i);
    }
  }
  return dice_loss_from_probs(in, probs) + ce_loss_from_probs(in, probs);
}

struct EpochLog {
  std::size_t epochs = 0;
  std::string jsonl;
};

// Replays the scheduler on per-epoch losses of the fitted toy predictor: an
// augmented training batch and an unaugmented held-out batch per epoch.
inline EpochLog simulate_epochs(const FoldModel& fm, const PipelinePlan& plan, const std::vector<const CvCase*>& train,
                                const std::vector<const CvCase*>& val, const RunCvOptions& opt, std::size_t fold) {
  const std::size_t K = plan.num_classes;
  const bool cascade = fm.model == ModelKind::cascade;
  const TopologySpec& topo = fm.model == ModelKind::u2d ? plan.topo_2d : plan.topo_3d;
  const std::uint64_t tag = detail::model_tag(fm.model);

  auto stage_inputs = [&](const std::vector<const CvCase*>& cases, bool corrupt) {
    std::vector<LoadedCase> out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const CvCase& c = *cases[i];
      if (!cascade) {
        out.push_back({c.image, c.label});
        continue;
      }
      // Training input for stage 2: the lowres reference upsampled, one-hot,
      // and corrupted for the training split.
      Volume seg = stage1_channels(*c.low_label, c.image, K);
      if (corrupt) {
        Rng rng(detail::derive_seed(opt.seed, {tag, fold, 1000 + i}));
        seg = corrupt_cascade_input(seg, rng);
      }
      out.push_back({concat_channels(c.image, seg), c.label});
    }
    return out;
  };
  const std::vector<LoadedCase> train_inputs = stage_inputs(train, true);
  const std::vector<LoadedCase> val_inputs = stage_inputs(val, false);
  const std::size_t image_channels = train.front()->image.channels;
  const auto predictor = cascade ? cascade_stage2(fm.fullres, nullptr, image_channels)
                                 : (fm.fullres.kind == ToyKind::oracle ? nullptr : fm.fullres.for_case(nullptr));
  const AugmentationConfig aug = fm.model == ModelKind::u2d || plan.use_2d_augmentation_for_3d
                                     ? plan.augmentation_2d
                                     : plan.augmentation_3d;
  const bool batch_dice = uses_batch_dice(plan, fm.model, false);

  EpochLog log;
  SchedulerState state = initial_scheduler_state();
  for (std::size_t e = 0; e < opt.max_epochs; ++e) {
    Batch tb = sample_batch(train_inputs, topo, detail::derive_seed(opt.seed, {tag, fold, 2 * e}));
    Rng aug_rng(detail::derive_seed(opt.seed, {tag, fold, 2 * e, 7}));
    for (std::size_t s = 0; s < tb.size(); ++s) {
      Sample sample = augment_sample({tb.images[s], tb.targets[s]}, aug, aug_rng);
      tb.images[s] = std::move(sample.image);
      tb.targets[s] = std::move(sample.label);
    }
    const Batch vb = sample_batch(val_inputs, topo, detail::derive_seed(opt.seed, {tag, fold, 2 * e + 1}));
    const ConstantPredictor unused = ConstantPredictor::background(K);
    const Predictor& p = predictor ? *predictor : static_cast<const Predictor&>(unused);
    const double train_loss = batch_loss(p, tb.images, tb.targets, batch_dice, fm.fullres.kind, K);
    const double val_loss = batch_loss(p, vb.images, vb.targets, batch_dice, fm.fullres.kind, K);
    const SchedulerAction a = scheduler_step(state, train_loss, val_loss);
    log.jsonl += scheduler_log_line(state, a) + "\n";
    ++log.epochs;
    if (a == SchedulerAction::stop) break;
  }
  return log;
}

struct CandidateResult {
  std::vector<double> per_class;                              // mean over cases, foreground classes
  std::map<std::string, std::vector<double>> per_case;        // case id -> foreground dice
};

inline std::vector<double> foreground_dice(const Volume& pred, const Volume& gt, std::size_t K) {
  std::vector<double> out;
  for (std::size_t k = 1; k < K; ++k) out.push_back(dice_score(pred, gt, static_cast<int>(k)));
  return out;
}

inline CandidateResult summarize(const std::vector<std::string>& ids, const std::vector<std::vector<double>>& dice,
                                 std::size_t K) {
  CandidateResult r;
  r.per_class.assign(K - 1, 0.0);
  for (std::size_t c = 0; c < ids.size(); ++c) {
    r.per_case[ids[c]] = dice[c];
    for (std::size_t k = 0; k + 1 < K; ++k) r.per_class[k] += dice[c][k];
  }
  for (double& v : r.per_class) v /= static_cast<double>(ids.size());
  return r;
}

inline ordered_json to_json(const CandidateResult& r) {
  ordered_json doc;
  doc["per_class"] = r.per_class;
  doc["mean_foreground"] = mean_of(r.per_class);
  ordered_json cases;
  for (const auto& [id, d] : r.per_case) cases[id] = d;
  doc["per_case"] = cases;
  return doc;
}

inline std::vector<ModelKind> ensemble_members(const std::string& id) {
  std::vector<ModelKind> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t plus = id.find('+', start);
    out.push_back(parse_model(id.substr(start, plus - start)));
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return out;
}

struct RunCvResult {
  std::string selected;
  ordered_json metrics;
  ordered_json manifest;
};

class StageTimer {
 public:
  void start(const std::string& stage) {
    stage_ = stage;
    t0_ = std::chrono::steady_clock::now();
  }
  void stop() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    timings_[stage_] = s;
  }
  const ordered_json& timings() const { return timings_; }

 private:
  std::string stage_;
  std::chrono::steady_clock::time_point t0_;
  ordered_json timings_ = ordered_json::object();
};

// Five-fold CV of every planned model and every pairwise ensemble with toy
// predictors, model selection and postprocessing of the winner.
// Writes metrics.json, manifest.json, timings.json, logs/ and cv_predictions/.
inline RunCvResult cmd_run_cv(const fs::path& plan_path, const fs::path& preprocessed, const fs::path& out,
                              const RunCvOptions& opt) {
  StageTimer timer;
  timer.start("load");
  const PipelinePlan plan = read_plan(plan_path);
  const std::size_t K = plan.num_classes;
  const bool cascade = plan.has(ModelKind::cascade);
  const std::vector<CvCase> cases = load_preprocessed(preprocessed, cascade, opt.jobs);
  std::map<std::string, std::size_t> index_of;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    index_of[cases[i].id] = i;
    ids.push_back(cases[i].id);
  }
  const auto folds = make_folds(ids, opt.seed);
  timer.stop();

  InferenceOptions inf;
  inf.mirror_tta = opt.tta;
  std::vector<std::string> artifacts{"metrics.json", "timings.json"};
  ordered_json epochs = ordered_json::object();
  ordered_json fitted = ordered_json::object();
  // softmax[model][case index]
  std::map<std::string, std::vector<Volume>> softmax;

  timer.start("cross_validation");
  for (ModelKind model : plan.models) {
    const std::string mid = model_id(model);
    softmax[mid].resize(cases.size());
    ordered_json model_epochs = ordered_json::array();
    ordered_json model_fits = ordered_json::array();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<const CvCase*> train, val;
      std::vector<std::size_t> val_index;
      for (const CvCase& c : cases) {
        const bool in_val = std::find(folds[f].begin(), folds[f].end(), c.id) != folds[f].end();
        (in_val ? val : train).push_back(&c);
        if (in_val) val_index.push_back(index_of.at(c.id));
      }
      // A single-case dataset trains on its only case.
      if (train.empty()) train = val;
      const FoldModel fm = fit_fold_model(model, opt.predictor, K, train);
      ordered_json fit_doc = to_json(fm.fullres);
      if (fm.lowres) fit_doc["lowres"] = to_json(*fm.lowres);
      model_fits.push_back(fit_doc);

      const EpochLog log = simulate_epochs(fm, plan, train, val, opt, f);
      const std::string log_name = "logs/" + mid + "_fold" + std::to_string(f) + ".jsonl";
      write_file(out / log_name, log.jsonl);
      artifacts.push_back(log_name);
      model_epochs.push_back(log.epochs);

      parallel_for(val.size(), opt.jobs, [&](std::size_t v) {
        const CvCase& c = *val[v];
        softmax[mid][val_index[v]] =
            predict_with(fm, plan, c.image, c.low_image, &c.label, c.low_label ? &*c.low_label : nullptr, inf);
      });
    }
    epochs[mid] = model_epochs;
    fitted[mid] = model_fits;
  }
  timer.stop();

  timer.start("evaluation");
  std::map<std::string, CandidateResult> results;
  std::map<std::string, std::vector<Volume>> labels_of;
  for (const std::string& cid : candidate_order(plan.models)) {
    const auto members = ensemble_members(cid);
    std::vector<Volume> preds(cases.size());
    std::vector<std::vector<double>> dice(cases.size());
    parallel_for(cases.size(), opt.jobs, [&](std::size_t c) {
      std::vector<Volume> maps;
      for (ModelKind m : members) maps.push_back(softmax.at(model_id(m))[c]);
      preds[c] = argmax(members.size() == 1 ? maps.front() : ensemble(maps));
      dice[c] = foreground_dice(preds[c], cases[c].label, K);
    });
    results[cid] = summarize(ids, dice, K);
    labels_of[cid] = std::move(preds);
  }
  std::map<std::string, std::vector<double>> for_selection;
  for (const auto& [cid, r] : results) for_selection[cid] = r.per_class;
  const std::string selected = select_model(for_selection);

  std::vector<std::vector<double>> post_dice(cases.size());
  std::vector<Volume> post(cases.size());
  parallel_for(cases.size(), opt.jobs, [&](std::size_t c) {
    post[c] = apply_postprocessing(labels_of.at(selected)[c], plan.postprocess_classes);
    post_dice[c] = foreground_dice(post[c], cases[c].label, K);
  });
  const CandidateResult post_result = summarize(ids, post_dice, K);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const std::string name = "cv_predictions/" + cases[c].id + ".mvox";
    write_volume(post[c], out / name);
    artifacts.push_back(name);
  }
  timer.stop();

  RunCvResult result;
  result.selected = selected;
  ordered_json& m = result.metrics;
  m["dataset"] = plan.dataset_name;
  m["predictor"] = to_string(opt.predictor);
  m["seed"] = opt.seed;
  m["tta"] = opt.tta;
  m["num_classes"] = K;
  ordered_json fold_doc = ordered_json::array();
  for (const auto& f : folds) fold_doc.push_back(f);
  m["folds"] = fold_doc;
  m["epochs"] = epochs;
  m["fitted"] = fitted;
  ordered_json cand = ordered_json::object();
  for (const std::string& cid : candidate_order(plan.models)) cand[cid] = to_json(results.at(cid));
  m["candidates"] = cand;
  m["selected"] = selected;
  ordered_json pp;
  pp["classes"] = plan.postprocess_classes;
  pp["before"] = to_json(results.at(selected));
  pp["after"] = to_json(post_result);
  m["postprocessing"] = pp;
  write_json(out / "metrics.json", m);

  ordered_json& man = result.manifest;
  man["tool_version"] = kToolVersion;
  man["dataset"] = plan.dataset_name;
  man["plan"] = plan_path.generic_string();
  man["preprocessed"] = preprocessed.generic_string();
  man["predictor"] = to_string(opt.predictor);
  man["seeds"] = {{"cross_validation", opt.seed}};
  man["tta"] = opt.tta;
  man["selected_model"] = selected;
  man["timings"] = "timings.json";
  man["artifacts"] = artifacts;
  write_json(out / "manifest.json", man);
  write_json(out / "timings.json", timer.timings());
  return result;
}

// ---------------------------------------------------------------------------
// Prediction of a new case
// ---------------------------------------------------------------------------

struct PredictOptions {
  ToyKind predictor = ToyKind::threshold;
  std::string model = "auto";            // 2d | 3d | cascade | a+b | auto
  std::optional<fs::path> metrics;       // for model = auto
  std::optional<fs::path> reference;     // label for the oracle predictor
  std::uint64_t seed = 0;
  bool tta = true;
  std::size_t jobs = 1;
};

// Places a preprocessed-space softmax back onto the original image grid.
inline Volume revert_softmax(const Volume& soft, const PreprocessedCase& pc) {
  const Box& box = pc.crop_bbox;
  Volume cropped = resample_to_shape(soft, box.extent(), pc.original_spacing);
  Volume out(VolumeKind::softmax, soft.channels, pc.original_extent, pc.original_spacing);
  const std::size_t n = out.voxels();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = 1.0f;  // background outside the crop
  const Volume placed = pad(cropped, pc.original_extent, box.begin);
  const Extent strides = strides_of(pc.original_extent);
  for_each_coord(box.extent(), [&](const Extent& c) {
    Extent g(c.size());
    for (std::size_t a = 0; a < c.size(); ++a) g[a] = c[a] + box.begin[a];
    const std::size_t i = ravel(g, strides);
    for (std::size_t k = 0; k < soft.channels; ++k) out.at(k, i) = placed.at(k, i);
  });
  return out;
}

inline std::string resolve_model(const PredictOptions& opt, const PipelinePlan& plan) {
  std::string id = opt.model;
  if (id == "auto") {
    if (!opt.metrics) throw ValidationError("--model auto needs --metrics from a run-cv output");
    id = read_json(*opt.metrics).at("selected").get<std::string>();
  }
  for (ModelKind m : ensemble_members(id)) {
    require(plan.has(m), "model '" + model_id(m) + "' is not part of the plan");
  }
  return id;
}

// Fold ensemble of toy predictors fitted on the preprocessed training set.
// Writes <out>/<id>.mvox (labelmap) and <out>/<id>_softmax.mvox on the
// original image grid.
inline std::string cmd_predict(const fs::path& image_path, const fs::path& plan_path, const fs::path& preprocessed,
                               const fs::path& out, const PredictOptions& opt) {
  const PipelinePlan plan = read_plan(plan_path);
  const std::string model = resolve_model(opt, plan);
  const auto members = ensemble_members(model);
  const bool need_low = std::find(members.begin(), members.end(), ModelKind::cascade) != members.end();
  const std::vector<CvCase> train = load_preprocessed(preprocessed, need_low, opt.jobs);
  std::vector<std::string> ids;
  for (const auto& c : train) ids.push_back(c.id);
  const auto folds = make_folds(ids, opt.seed);

  const Volume image = read_volume(image_path);
  require(image.kind == VolumeKind::image, "input is not an image volume");
  std::optional<Volume> reference;
  if (opt.reference) reference = read_volume(*opt.reference);
  if (opt.predictor == ToyKind::oracle && !reference) {
    throw ValidationError("the oracle predictor needs --label with the reference segmentation");
  }
  const PreprocessedCase full = preprocess_case("input", image, reference, plan, Resolution::fullres);
  std::optional<PreprocessedCase> low;
  if (need_low) low = preprocess_case("input", image, reference, plan, Resolution::lowres);

  InferenceOptions inf;
  inf.mirror_tta = opt.tta;
  std::vector<Volume> maps;
  for (ModelKind m : members) {
    std::vector<Volume> per_fold(folds.size());
    parallel_for(folds.size(), opt.jobs, [&](std::size_t f) {
      std::vector<const CvCase*> fold_train;
      for (const auto& c : train) {
        if (std::find(folds[f].begin(), folds[f].end(), c.id) == folds[f].end()) fold_train.push_back(&c);
      }
      if (fold_train.empty()) {
        for (const auto& c : train) fold_train.push_back(&c);
      }
      const FoldModel fm = fit_fold_model(m, opt.predictor, plan.num_classes, fold_train);
      per_fold[f] = predict_with(fm, plan, full.image, low ? std::optional<Volume>(low->image) : std::nullopt,
                                 full.label ? &*full.label : nullptr,
                                 low && low->label ? &*low->label : nullptr, inf);
    });
    maps.push_back(ensemble(per_fold));
  }
  const Volume soft = revert_softmax(ensemble(maps), full);
  const std::string id = case_id_from_path(image_path);
  write_volume(soft, out / (id + "_softmax.mvox"));
  write_volume(argmax(soft), out / (id + ".mvox"));
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation and postprocessing of prediction files
// ---------------------------------------------------------------------------

inline std::vector<fs::path> volume_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir.string() + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > 5 && name.ends_with(".mvox") && !name.ends_with("_softmax.mvox")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Dice per foreground class for every reference file with a prediction of
// the same name. `num_classes` = 0 derives it from the highest label seen.
inline ordered_json cmd_evaluate(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out,
                                 std::size_t num_classes = 0, std::size_t jobs = 1) {
  const auto gt_files = volume_files(gt_dir);
  require(!gt_files.empty(), "no reference volumes in '" + gt_dir.string() + "'");
  std::vector<Volume> preds(gt_files.size()), gts(gt_files.size());
  parallel_for(gt_files.size(), jobs, [&](std::size_t i) {
    const fs::path p = pred_dir / gt_files[i].filename();
    if (!fs::exists(p)) throw IoError("missing prediction '" + p.string() + "'");
    preds[i] = read_volume(p);
    gts[i] = read_volume(gt_files[i]);
    require(preds[i].kind == VolumeKind::labelmap && gts[i].kind == VolumeKind::labelmap,
            "evaluation needs labelmaps ('" + gt_files[i].filename().string() + "')");
    require(preds[i].extent == gts[i].extent, "shape mismatch for '" + gt_files[i].filename().string() + "'");
  });
  std::size_t K = num_classes;
  if (K == 0) {
    for (std::size_t i = 0; i < gts.size(); ++i) K = std::max({K, label_count(gts[i]), label_count(preds[i])});
    K = std::max<std::size_t>(K, 2);
  }
  std::vector<std::string> ids;
  std::vector<std::vector<double>> dice;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    ids.push_back(case_id_from_path(gt_files[i]));
    dice.push_back(foreground_dice(preds[i], gts[i], K));
  }
  ordered_json doc;
  doc["num_classes"] = K;
  doc["num_cases"] = ids.size();
  const ordered_json summary = to_json(summarize(ids, dice, K));
  for (const auto& [key, value] : summary.items()) doc[key] = value;
  write_json(out, doc);
  return doc;
}

// Applies largest-component filtering to one labelmap file or every
// labelmap in a directory.
inline std::size_t cmd_postprocess(const fs::path& input, const std::vector<int>& classes, const fs::path& out) {
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(input)) {
    for (const auto& f : volume_files(input)) jobs.emplace_back(f, out / f.filename());
  } else {
    jobs.emplace_back(input, out);
  }
  for (const auto& [src, dst] : jobs) write_volume(apply_postprocessing(read_volume(src), classes), dst);
  return jobs.size();
}

}  // namespace segplan

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "segplan/pipeline.hpp"
#include "segplan/report.hpp"
#include "segplan/synth.hpp"

namespace {

using namespace segplan;

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

int fail(const char* kind, const std::string& message, int code) {
  nlohmann::json doc{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << doc.dump() << std::endl;
  return code;
}

void emit(const nlohmann::ordered_json& summary) { std::cout << summary.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segplan: self-configuring segmentation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  std::size_t jobs = 1;
  auto add_jobs = [&](CLI::App* cmd) {
    cmd->add_option("--jobs", jobs, "worker threads for case-level parallelism")->check(CLI::PositiveNumber);
  };
  const std::map<std::string, std::string> predictor_names{
      {"oracle", "oracle"}, {"constant", "constant"}, {"threshold", "threshold"}};

  // synth
  SynthConfig synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic labelled dataset");
  c_synth->add_option("-o,--output", synth_out, "dataset directory")->required();
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_option("--cases", synth.num_cases, "number of cases");
  c_synth->add_option("--classes", synth.num_classes, "number of classes including background");
  c_synth->add_option("--extent", synth.extent, "nominal extent per axis")->delimiter(',');
  c_synth->add_option("--spacing", synth.spacing, "nominal spacing per axis (mm)")->delimiter(',');
  c_synth->add_option("--modality", synth.modality, "modality name, e.g. MRI or CT");
  c_synth->add_option("--name", synth.name, "dataset name");
  c_synth->add_option("--noise", synth.noise_sd, "intensity noise standard deviation");
  c_synth->add_flag("--distractor", synth.distractor, "plant an unlabelled blob with class-1 intensity");

  // fingerprint
  std::string fp_dataset, fp_out;
  auto* c_fp = app.add_subcommand("fingerprint", "extract dataset statistics");
  c_fp->add_option("dataset", fp_dataset, "dataset directory or dataset.json")->required();
  c_fp->add_option("-o,--output", fp_out, "fingerprint.json")->required();
  add_jobs(c_fp);

  // plan
  std::string plan_fp, plan_out;
  PlannerConfig planner;
  auto* c_plan = app.add_subcommand("plan", "derive the pipeline plan from a fingerprint");
  c_plan->add_option("fingerprint", plan_fp, "fingerprint.json")->required();
  c_plan->add_option("-o,--output", plan_out, "plan.json")->required();
  c_plan->add_option("--patch-budget", planner.patch_budget_3d, "3D patch voxel budget")->check(CLI::PositiveNumber);

  // preprocess
  std::string pp_dataset, pp_plan, pp_out;
  auto* c_pre = app.add_subcommand("preprocess", "crop, resample and normalize all training cases");
  c_pre->add_option("dataset", pp_dataset, "dataset directory or dataset.json")->required();
  c_pre->add_option("plan", pp_plan, "plan.json")->required();
  c_pre->add_option("-o,--output", pp_out, "preprocessed directory")->required();
  add_jobs(c_pre);

  // run-cv
  std::string cv_plan, cv_pre, cv_out, cv_predictor = "threshold";
  RunCvOptions cv;
  bool cv_no_tta = false;
  auto* c_cv = app.add_subcommand("run-cv", "five-fold cross-validation with toy predictors");
  c_cv->add_option("plan", cv_plan, "plan.json")->required();
  c_cv->add_option("preprocessed", cv_pre, "preprocessed directory")->required();
  c_cv->add_option("-o,--output", cv_out, "output directory")->required();
  c_cv->add_option("--predictor", cv_predictor, "toy predictor")->transform(CLI::IsMember(predictor_names));
  c_cv->add_option("--seed", cv.seed, "fold and sampling seed");
  c_cv->add_option("--max-epochs", cv.max_epochs, "cap on simulated epochs")->check(CLI::PositiveNumber);
  c_cv->add_flag("--no-tta", cv_no_tta, "disable mirror test-time augmentation");
  add_jobs(c_cv);

  // predict
  std::string pr_image, pr_plan, pr_pre, pr_out, pr_predictor = "threshold", pr_metrics, pr_label;
  PredictOptions pr;
  bool pr_no_tta = false;
  auto* c_pr = app.add_subcommand("predict", "segment a new case with the fold ensemble");
  c_pr->add_option("image", pr_image, "image volume")->required();
  c_pr->add_option("plan", pr_plan, "plan.json")->required();
  c_pr->add_option("preprocessed", pr_pre, "preprocessed training directory")->required();
  c_pr->add_option("-o,--output", pr_out, "output directory")->required();
  c_pr->add_option("--predictor", pr_predictor, "toy predictor")->transform(CLI::IsMember(predictor_names));
  c_pr->add_option("--model", pr.model, "2d, 3d, cascade, an ensemble like 2d+3d, or auto");
  c_pr->add_option("--metrics", pr_metrics, "run-cv metrics.json for --model auto");
  c_pr->add_option("--label", pr_label, "reference labelmap for the oracle predictor");
  c_pr->add_option("--seed", pr.seed, "fold seed; must match run-cv");
  c_pr->add_flag("--no-tta", pr_no_tta, "disable mirror test-time augmentation");
  add_jobs(c_pr);

  // evaluate
  std::string ev_pred, ev_gt, ev_out;
  std::size_t ev_classes = 0;
  auto* c_ev = app.add_subcommand("evaluate", "dice of predicted labelmaps against references");
  c_ev->add_option("predictions", ev_pred, "directory of predicted labelmaps")->required();
  c_ev->add_option("references", ev_gt, "directory of reference labelmaps")->required();
  c_ev->add_option("-o,--output", ev_out, "metrics.json")->required();
  c_ev->add_option("--classes", ev_classes, "number of classes including background (default: inferred)");
  add_jobs(c_ev);

  // postprocess
  std::string po_in, po_out, po_plan;
  std::vector<int> po_classes;
  auto* c_po = app.add_subcommand("postprocess", "keep the largest component of selected classes");
  c_po->add_option("input", po_in, "labelmap file or directory")->required();
  c_po->add_option("-o,--output", po_out, "output file or directory")->required();
  auto* po_plan_opt = c_po->add_option("--plan", po_plan, "take the classes from plan.json");
  c_po->add_option("--classes", po_classes, "comma-separated classes")->delimiter(',')->excludes(po_plan_opt);

  // report
  std::string rp_kind, rp_out, rp_format = "text", rp_notes;
  std::vector<std::string> rp_inputs;
  auto* c_rp = app.add_subcommand("report", "render topology or dice tables");
  c_rp->add_option("--kind", rp_kind, "topology or dice")->required()->check(CLI::IsMember({"topology", "dice"}));
  c_rp->add_option("inputs", rp_inputs, "plan.json files (topology) or metrics.json files (dice)");
  c_rp->add_option("-o,--output", rp_out, "output file (default: stdout)");
  c_rp->add_option("--format", rp_format, "text or csv")->check(CLI::IsMember({"text", "csv"}));
  c_rp->add_option("--notes", rp_notes, "JSON with per-row deviation notes (topology)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitValidation);
  }

  try {
    if (c_synth->parsed()) {
      const DatasetDescriptor d = write_synth_dataset(synth, synth_out);
      emit({{"dataset", d.name}, {"cases", d.num_training}, {"output", synth_out}});
    } else if (c_fp->parsed()) {
      const DatasetFingerprint fp = cmd_fingerprint(fp_dataset, fp_out, jobs);
      emit({{"dataset", fp.name}, {"output", fp_out}});
    } else if (c_plan->parsed()) {
      const PipelinePlan plan = cmd_plan(plan_fp, plan_out, planner);
      std::vector<std::string> models;
      for (ModelKind m : plan.models) models.push_back(model_id(m));
      emit({{"dataset", plan.dataset_name}, {"models", models}, {"output", plan_out}});
    } else if (c_pre->parsed()) {
      cmd_preprocess(pp_dataset, pp_plan, pp_out, jobs);
      emit({{"output", pp_out}});
    } else if (c_cv->parsed()) {
      cv.predictor = parse_toy_kind(cv_predictor);
      cv.tta = !cv_no_tta;
      cv.jobs = jobs;
      const RunCvResult r = cmd_run_cv(cv_plan, cv_pre, cv_out, cv);
      emit({{"selected", r.selected},
            {"mean_foreground", r.metrics.at("postprocessing").at("after").at("mean_foreground")},
            {"output", cv_out}});
    } else if (c_pr->parsed()) {
      pr.predictor = parse_toy_kind(pr_predictor);
      pr.tta = !pr_no_tta;
      pr.jobs = jobs;
      if (!pr_metrics.empty()) pr.metrics = pr_metrics;
      if (!pr_label.empty()) pr.reference = pr_label;
      const std::string model = cmd_predict(pr_image, pr_plan, pr_pre, pr_out, pr);
      emit({{"model", model}, {"output", pr_out}});
    } else if (c_ev->parsed()) {
      const auto doc = cmd_evaluate(ev_pred, ev_gt, ev_out, ev_classes, jobs);
      emit({{"mean_foreground", doc.at("mean_foreground")}, {"output", ev_out}});
    } else if (c_po->parsed()) {
      std::vector<int> classes = po_classes;
      if (!po_plan.empty()) classes = read_plan(po_plan).postprocess_classes;
      const std::size_t n = cmd_postprocess(po_in, classes, po_out);
      emit({{"files", n}, {"classes", classes}, {"output", po_out}});
    } else if (c_rp->parsed()) {
      std::string text;
      if (rp_kind == "topology") {
        std::vector<PipelinePlan> plans;
        for (const auto& p : rp_inputs) plans.push_back(read_plan(p));
        const TopologyNotes notes = rp_notes.empty() ? TopologyNotes{} : topology_notes_from_json(read_json(rp_notes));
        text = rp_format == "csv" ? render_topology_csv(plans, notes) : render_topology_table(plans, notes);
      } else {
        std::vector<json> metrics;
        for (const auto& p : rp_inputs) metrics.push_back(read_json(p));
        text = rp_format == "csv" ? render_dice_csv(metrics) : render_dice_table(metrics);
      }
      if (rp_out.empty()) {
        std::cout << text;
      } else {
        write_file(rp_out, text);
      }
    }
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const nlohmann::json::exception& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const IoError& e) {
    return fail("io", e.what(), kExitIo);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what(), kExitIo);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}

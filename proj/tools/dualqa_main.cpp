// dualqa: train desk-scale models, run single black-box attacks, produce
// full dual-norm robustness assessments, and evaluate transferability.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dualqa/dualqa.hpp"

namespace fs = std::filesystem;
using namespace dualqa;

namespace {

struct SynthSpec {
  int classes = 2;
  int per_class = 200;
  int h = 8, w = 8, c = 3;
};

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec s;
  char sep;
  std::istringstream in(text);
  if (!(in >> s.classes >> sep >> s.per_class >> sep >> s.h >> sep >> s.w >>
        sep >> s.c) ||
      !in.eof())
    throw CLI::ValidationError("--synth",
                               "expected CLASSESxPER_CLASSxHxWxC, e.g. "
                               "2x200x8x8x3");
  return s;
}

struct ShapeSpec {
  int h = 0, w = 0, c = 0;
};

ShapeSpec parse_shape(const std::string& text) {
  ShapeSpec s;
  char sep;
  std::istringstream in(text);
  if (!(in >> s.h >> sep >> s.w >> sep >> s.c) || !in.eof())
    throw CLI::ValidationError("--shape", "expected HxWxC, e.g. 32x32x3");
  return s;
}

Dataset load_cifar_files(const std::vector<std::string>& paths) {
  Dataset all;
  all.num_classes = 10;
  all.class_names = cifar10_class_names();
  std::int64_t offset = 0;
  for (const auto& p : paths) {
    Dataset d = parse_cifar10_file(p);
    for (auto& s : d.samples) {
      s.id += offset;
      all.samples.push_back(std::move(s));
    }
    offset = static_cast<std::int64_t>(all.samples.size());
  }
  return all;
}

AttackNorm parse_norm(const std::string& name) {
  if (name == "l0") return AttackNorm::L0;
  if (name == "linf") return AttackNorm::Linf;
  throw CLI::ValidationError("--norm", "expected l0 or linf");
}

// Owns whatever predictors a run needs: a loaded builtin shared across
// workers, or one external subprocess per worker.
struct ModelPool {
  std::vector<std::unique_ptr<Predictor>> owned;
  std::vector<Predictor*> pool;
  std::string model_id;

  Predictor& primary() { return *pool.front(); }
};

ModelPool open_model(const std::string& weights, const std::string& external,
                     const std::string& shape_text, int classes, int workers,
                     double timeout, const std::string& model_id_flag) {
  ModelPool mp;
  if (!weights.empty()) {
    auto model = load_weights(weights);
    mp.model_id = model_id_flag.empty() ? fs::path(weights).stem().string()
                                        : model_id_flag;
    mp.owned.push_back(std::move(model));
    for (int i = 0; i < workers; ++i) mp.pool.push_back(mp.owned[0].get());
  } else {
    if (shape_text.empty() || classes <= 0)
      throw CLI::ValidationError(
          "--external", "external models need --shape and --classes");
    ShapeSpec sh = parse_shape(shape_text);
    ExternalPredictorOptions opt;
    opt.timeout_seconds = timeout;
    for (int i = 0; i < workers; ++i)
      mp.owned.push_back(std::make_unique<ExternalPredictor>(
          external, sh.h, sh.w, sh.c, classes, opt));
    for (auto& p : mp.owned) mp.pool.push_back(p.get());
    mp.model_id = model_id_flag.empty() ? "external" : model_id_flag;
  }
  return mp;
}

void write_json_atomic(const fs::path& path, const ordered_json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

int run(int argc, char** argv) {
  CLI::App app{"Dual-norm (L0 / L-inf) black-box robustness assessment"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train a built-in model");
  std::string tr_synth, tr_out, tr_metrics, tr_model = "linear";
  std::vector<std::string> tr_cifar;
  double tr_lr = 0.5, tr_separation = 200.0, tr_test_fraction = 0.2;
  int tr_epochs = 50, tr_hidden = 32, tr_batch = 32;
  std::uint64_t tr_seed = 0;
  train_cmd->add_option("--synth", tr_synth,
                        "Synthetic dataset CLASSESxPER_CLASSxHxWxC");
  train_cmd->add_option("--cifar", tr_cifar, "CIFAR-10 binary file(s)");
  train_cmd->add_option("--model", tr_model, "linear | mlp")
      ->check(CLI::IsMember({"linear", "mlp"}));
  train_cmd->add_option("--hidden", tr_hidden, "MLP hidden width");
  train_cmd->add_option("--epochs", tr_epochs, "Training epochs");
  train_cmd->add_option("--lr", tr_lr, "Learning rate");
  train_cmd->add_option("--batch", tr_batch, "Mini-batch size");
  train_cmd->add_option("--test-fraction", tr_test_fraction,
                        "Held-out fraction for test accuracy");
  train_cmd->add_option("--separation", tr_separation,
                        "Synthetic class separation");
  train_cmd->add_option("--seed", tr_seed, "Seed");
  train_cmd->add_option("--out", tr_out, "Weight file to write")->required();
  train_cmd->add_option("--metrics", tr_metrics,
                        "Metrics JSON path (default <out>.metrics.json)");

  // ---- attack ----
  auto* attack_cmd = app.add_subcommand("attack", "Attack one sample");
  std::string at_weights, at_external, at_shape, at_synth, at_norm = "linf",
              at_optimizer = "cmaes", at_out, at_model_id;
  std::vector<std::string> at_cifar;
  int at_classes = 0, at_index = 0, at_th = 10, at_generations = 100;
  std::optional<std::uint64_t> at_budget;
  std::optional<int> at_np;
  std::optional<double> at_sigma;
  double at_scale = 1.0, at_timeout = 10.0, at_separation = 200.0;
  std::uint64_t at_seed = 0;
  attack_cmd->add_option("--weights", at_weights, "Built-in weight file");
  attack_cmd->add_option("--external", at_external,
                         "External model command line");
  attack_cmd->add_option("--shape", at_shape, "External model shape HxWxC");
  attack_cmd->add_option("--classes", at_classes, "External model classes");
  attack_cmd->add_option("--timeout", at_timeout,
                         "External response timeout (s)");
  attack_cmd->add_option("--cifar", at_cifar, "CIFAR-10 binary file(s)");
  attack_cmd->add_option("--synth", at_synth, "Synthetic dataset spec");
  attack_cmd->add_option("--separation", at_separation,
                         "Synthetic class separation");
  attack_cmd->add_option("--index", at_index, "Sample index in the dataset");
  attack_cmd->add_option("--norm", at_norm, "l0 | linf")
      ->check(CLI::IsMember({"l0", "linf"}));
  attack_cmd->add_option("--th", at_th, "Norm threshold")->required();
  attack_cmd->add_option("--optimizer", at_optimizer, "cmaes | de")
      ->check(CLI::IsMember({"cmaes", "de"}));
  attack_cmd->add_option("--budget", at_budget, "Evaluation budget override");
  attack_cmd->add_option("--scale", at_scale,
                         "Budget scale applied to the reference budgets");
  attack_cmd->add_option("--np", at_np, "DE population size");
  attack_cmd->add_option("--generations", at_generations, "DE generations");
  attack_cmd->add_option("--sigma", at_sigma, "CMA-ES initial sigma");
  attack_cmd->add_option("--seed", at_seed, "Seed");
  attack_cmd->add_option("--model-id", at_model_id, "Model id for artifacts");
  attack_cmd->add_option("--out", at_out, "Output directory")->required();

  // ---- assess ----
  auto* assess_cmd =
      app.add_subcommand("assess", "Full dual quality assessment");
  std::string as_weights, as_external, as_shape, as_synth,
      as_norm = "both", as_optimizer = "cmaes", as_out, as_model_id;
  std::vector<std::string> as_cifar;
  std::vector<int> as_levels = {1, 3, 5, 10};
  int as_classes = 0, as_samples = 100, as_workers = 0, as_generations = 100,
      as_full_curve = 0;
  std::optional<std::uint64_t> as_budget;
  std::optional<int> as_np;
  std::optional<double> as_sigma;
  double as_scale = 1.0, as_timeout = 10.0, as_separation = 200.0;
  std::uint64_t as_seed = 0;
  bool as_svg = false, as_independent = false, as_include_mis = false;
  assess_cmd->add_option("--weights", as_weights, "Built-in weight file");
  assess_cmd->add_option("--external", as_external,
                         "External model command line");
  assess_cmd->add_option("--shape", as_shape, "External model shape HxWxC");
  assess_cmd->add_option("--classes", as_classes, "External model classes");
  assess_cmd->add_option("--timeout", as_timeout,
                         "External response timeout (s)");
  assess_cmd->add_option("--cifar", as_cifar, "CIFAR-10 binary file(s)");
  assess_cmd->add_option("--synth", as_synth, "Synthetic dataset spec");
  assess_cmd->add_option("--separation", as_separation,
                         "Synthetic class separation");
  assess_cmd->add_option("--samples", as_samples,
                         "Evaluation samples to select");
  assess_cmd->add_option("--levels", as_levels,
                         "Threshold levels (ascending)");
  assess_cmd->add_option("--full-curve", as_full_curve,
                         "Assess every threshold 1..N instead of --levels");
  assess_cmd->add_option("--norm", as_norm, "l0 | linf | both")
      ->check(CLI::IsMember({"l0", "linf", "both"}));
  assess_cmd->add_option("--optimizer", as_optimizer, "cmaes | de")
      ->check(CLI::IsMember({"cmaes", "de"}));
  assess_cmd->add_option("--budget", as_budget, "Evaluation budget override");
  assess_cmd->add_option("--scale", as_scale,
                         "Budget scale applied to the reference budgets");
  assess_cmd->add_option("--np", as_np, "DE population size");
  assess_cmd->add_option("--generations", as_generations, "DE generations");
  assess_cmd->add_option("--sigma", as_sigma, "CMA-ES initial sigma");
  assess_cmd->add_option("--workers", as_workers, "Attack worker count")
      ->envname("DUALQA_WORKERS");
  assess_cmd->add_option("--seed", as_seed, "Seed");
  assess_cmd->add_option("--model-id", as_model_id, "Model id for artifacts");
  assess_cmd->add_flag("--svg", as_svg, "Write curve SVG charts");
  assess_cmd->add_flag("--independent-runs", as_independent,
                       "Re-attack every level instead of carrying successes");
  assess_cmd->add_flag("--include-misclassified", as_include_mis,
                       "Do not filter to correctly classified samples");
  assess_cmd->add_option("--out", as_out, "Output directory")->required();

  // ---- transfer ----
  auto* transfer_cmd = app.add_subcommand(
      "transfer", "Evaluate stored adversarial samples on other models");
  std::vector<std::string> tf_outcomes, tf_weights, tf_external;
  std::string tf_norm = "both", tf_out;
  double tf_timeout = 10.0;
  std::uint64_t tf_seed = 0;
  transfer_cmd->add_option("--outcomes", tf_outcomes,
                           "Outcome JSON file(s) from assess runs")
      ->required();
  transfer_cmd->add_option("--weights", tf_weights,
                           "Target built-in weight file(s)");
  transfer_cmd->add_option("--target-external", tf_external,
                           "Target external model command line(s)");
  transfer_cmd->add_option("--norm", tf_norm, "l0 | linf | both")
      ->check(CLI::IsMember({"l0", "linf", "both"}));
  transfer_cmd->add_option("--timeout", tf_timeout,
                           "External response timeout (s)");
  transfer_cmd->add_option("--seed", tf_seed, "Seed recorded in artifacts");
  transfer_cmd->add_option("--out", tf_out, "Output directory")->required();

  // ---- export ----
  auto* export_cmd = app.add_subcommand(
      "export", "Write a synthetic dataset in the CIFAR-10 binary layout");
  std::string ex_synth, ex_out;
  double ex_separation = 200.0;
  std::uint64_t ex_seed = 0;
  export_cmd->add_option("--synth", ex_synth, "Synthetic dataset spec")
      ->required();
  export_cmd->add_option("--separation", ex_separation,
                         "Synthetic class separation");
  export_cmd->add_option("--seed", ex_seed, "Seed");
  export_cmd->add_option("--out", ex_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 2;
  }

  auto make_dataset = [&](const std::string& synth,
                          const std::vector<std::string>& cifar,
                          double separation, std::uint64_t seed) {
    if (!synth.empty() && !cifar.empty())
      throw CLI::ValidationError("--synth",
                                 "pick exactly one of --synth / --cifar");
    if (!synth.empty()) {
      SynthSpec s = parse_synth_spec(synth);
      return synth_blobs(s.classes, s.per_class, s.h, s.w, s.c, separation,
                         seed);
    }
    if (!cifar.empty()) return load_cifar_files(cifar);
    throw CLI::ValidationError("--synth", "a dataset source is required");
  };

  if (*train_cmd) {
    Dataset d = make_dataset(tr_synth, tr_cifar, tr_separation, tr_seed);
    TrainOptions opt;
    opt.epochs = tr_epochs;
    opt.lr = tr_lr;
    opt.batch_size = tr_batch;
    opt.test_fraction = tr_test_fraction;
    opt.hidden = tr_hidden;
    opt.seed = tr_seed;
    TrainResult res =
        train(tr_model == "mlp" ? ModelKind::Mlp : ModelKind::Linear, d, opt);
    save_weights(*res.model, tr_out);
    ordered_json metrics;
    metrics["schema"] = "dualqa-train-metrics/1";
    metrics["model"] = tr_model;
    metrics["train_acc"] = res.train_accuracy;
    metrics["test_acc"] = res.test_accuracy;
    metrics["epochs"] = res.epochs;
    metrics["seed"] = res.seed;
    metrics["weights"] = tr_out;
    fs::path metrics_path =
        tr_metrics.empty() ? fs::path(tr_out + ".metrics.json")
                           : fs::path(tr_metrics);
    write_json_atomic(metrics_path, metrics);
    std::cout << "train_acc=" << res.train_accuracy
              << " test_acc=" << res.test_accuracy << " -> " << tr_out
              << "\n";
    return 0;
  }

  if (*attack_cmd) {
    ModelPool mp = open_model(at_weights, at_external, at_shape, at_classes,
                              1, at_timeout, at_model_id);
    Dataset d = make_dataset(at_synth, at_cifar, at_separation, at_seed);
    if (at_index < 0 || static_cast<std::size_t>(at_index) >= d.size())
      throw Error("--index outside dataset");
    const LabeledSample& sample = d.samples[at_index];

    AttackSpec spec(parse_norm(at_norm), at_th);
    spec.optimizer =
        at_optimizer == "de" ? OptimizerKind::De : OptimizerKind::Cmaes;
    spec.budget_scale = at_scale;
    spec.max_evaluations = at_budget;
    spec.de_np = at_np;
    spec.de_generations = at_generations;
    spec.cmaes_sigma0 = at_sigma;
    spec.seed = at_seed;

    AttackOutcome out = attack(mp.primary(), sample, spec);

    fs::create_directories(at_out);
    ordered_json j;
    j["schema"] = "dualqa-attack/1";
    j["model_id"] = mp.model_id;
    j["sample_id"] = sample.id;
    j["norm"] = at_norm;
    j["th"] = at_th;
    j["optimizer"] = at_optimizer;
    j["seed"] = at_seed;
    j["success"] = out.success;
    j["original_label"] = out.original_label;
    j["adversarial_label"] = out.adversarial_label;
    j["confidence_before"] = out.confidence_before;
    j["confidence_after"] = out.confidence_after;
    j["evaluations_used"] = out.evaluations_used;
    if (out.distance) {
      j["l0_pixels"] = out.distance->l0_pixels;
      j["l1"] = out.distance->l1;
      j["l2"] = out.distance->l2;
      j["linf"] = out.distance->linf;
    }
    write_json_atomic(fs::path(at_out) / "outcome.json", j);
    std::string comment = "seed=" + std::to_string(at_seed);
    {
      auto png = encode_png(sample.image, comment);
      write_file_atomic(fs::path(at_out) / "original.png",
                        std::string(png.begin(), png.end()));
    }
    if (out.success) {
      auto png = encode_png(*out.adversarial, comment);
      write_file_atomic(fs::path(at_out) / "adversarial.png",
                        std::string(png.begin(), png.end()));
    }
    std::cout << (out.success ? "success" : "failure") << " evaluations="
              << out.evaluations_used << "\n";
    return 0;
  }

  if (*assess_cmd) {
    int workers = as_workers > 0
                      ? as_workers
                      : static_cast<int>(std::max(
                            1u, std::thread::hardware_concurrency()));
    ModelPool mp = open_model(as_weights, as_external, as_shape, as_classes,
                              workers, as_timeout, as_model_id);
    Dataset d = make_dataset(as_synth, as_cifar, as_separation, as_seed);
    auto samples = select_eval_samples(d, mp.primary(), as_samples, as_seed,
                                       !as_include_mis);

    AssessConfig cfg;
    if (as_full_curve > 0) {
      cfg.levels.clear();
      for (int th = 1; th <= std::min(as_full_curve, 127); ++th)
        cfg.levels.push_back(th);
    } else {
      cfg.levels = as_levels;
    }
    if (as_norm == "l0")
      cfg.norms = {AttackNorm::L0};
    else if (as_norm == "linf")
      cfg.norms = {AttackNorm::Linf};
    cfg.optimizer =
        as_optimizer == "de" ? OptimizerKind::De : OptimizerKind::Cmaes;
    cfg.budget_scale = as_scale;
    cfg.max_evaluations = as_budget;
    cfg.de_np = as_np;
    cfg.de_generations = as_generations;
    cfg.cmaes_sigma0 = as_sigma;
    cfg.seed = as_seed;
    cfg.carry_successes = !as_independent;
    cfg.model_id = mp.model_id;

    RobustnessReport report = assess(mp.pool, samples, cfg);

    fs::create_directories(as_out);
    write_json_atomic(fs::path(as_out) / "report.json",
                      report_to_json(report));
    write_file_atomic(fs::path(as_out) / "levels.csv", levels_csv(report));
    write_file_atomic(fs::path(as_out) / "class_matrix.csv",
                      class_matrix_csv(report));
    if (!report.overlap_by_th.empty())
      write_file_atomic(fs::path(as_out) / "overlap.csv",
                        overlap_csv(report));
    const Image& shape_ref = samples.front().image;
    OutcomesFile of = outcomes_from_report(
        report, shape_ref.height(), shape_ref.width(), shape_ref.channels(),
        mp.primary().num_classes());
    write_json_atomic(fs::path(as_out) / "outcomes.json",
                      outcomes_to_json(of));
    if (as_svg)
      for (AttackNorm norm : cfg.norms)
        if (report.curves.at(norm).size() >= 2)
          write_file_atomic(fs::path(as_out) /
                                (std::string("curve_") + norm_name(norm) +
                                 ".svg"),
                            curve_svg(report, norm));

    for (const auto& lv : report.levels)
      std::cout << norm_name(lv.norm) << " th=" << lv.th
                << " adversarial_accuracy=" << lv.adversarial_accuracy
                << " (" << lv.successes << "/" << lv.attacked
                << ", errored " << lv.errored << ")\n";
    return 0;
  }

  if (*transfer_cmd) {
    std::vector<OutcomesFile> files;
    for (const auto& p : tf_outcomes) files.push_back(load_outcomes(p));

    std::optional<AttackNorm> norm_filter;
    if (tf_norm != "both") norm_filter = parse_norm(tf_norm);

    std::vector<SourceOutcomes> sources;
    for (const auto& f : files)
      sources.push_back(source_from_outcomes(f, norm_filter));

    std::vector<std::unique_ptr<Predictor>> owned;
    std::vector<Predictor*> targets;
    std::vector<std::string> target_ids;
    for (const auto& w : tf_weights) {
      owned.push_back(load_weights(w));
      targets.push_back(owned.back().get());
      target_ids.push_back(fs::path(w).stem().string());
    }
    const auto& shape_src = files.front();
    ExternalPredictorOptions eopt;
    eopt.timeout_seconds = tf_timeout;
    int ext_index = 0;
    for (const auto& cmd : tf_external) {
      owned.push_back(std::make_unique<ExternalPredictor>(
          cmd, shape_src.height, shape_src.width, shape_src.channels,
          shape_src.num_classes, eopt));
      targets.push_back(owned.back().get());
      target_ids.push_back("external" + std::to_string(ext_index++));
    }
    if (targets.empty())
      throw CLI::ValidationError("--weights",
                                 "at least one target model is required");

    TransferMatrix tm = transfer(sources, targets, target_ids);
    fs::create_directories(tf_out);
    write_file_atomic(fs::path(tf_out) / "transfer.csv",
                      transfer_csv(tm, tf_seed));
    write_json_atomic(fs::path(tf_out) / "transfer.json",
                      transfer_to_json(tm, tf_seed));
    for (std::size_t i = 0; i < tm.source_ids.size(); ++i) {
      std::cout << tm.source_ids[i] << ":";
      for (double v : tm.rates[i]) std::cout << " " << v;
      std::cout << "\n";
    }
    return 0;
  }

  if (*export_cmd) {
    SynthSpec s = parse_synth_spec(ex_synth);
    if (s.h != kCifarDim || s.w != kCifarDim || s.c != kCifarChannels)
      throw Error("export: CIFAR layout requires 32x32x3");
    Dataset d = synth_blobs(s.classes, s.per_class, s.h, s.w, s.c,
                            ex_separation, ex_seed);
    std::ostringstream out(std::ios::binary);
    serialize_cifar10_binary(d, out);
    write_file_atomic(ex_out, out.str());
    std::cout << "wrote " << d.size() << " records to " << ex_out << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help / --version
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

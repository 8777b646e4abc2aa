#pragma once

// prunekit command-line front end.
//
//   validate       check a bundle directory
//   score          bundle -> scores.json (all metrics; --metric picks the default column)
//   prune          scores.json -> prune manifest
//   synth          write a synthetic Gaussian-mixture dataset
//   train-experts  synthetic dataset -> bundle (K tiny MLP experts)
//   eval           train a logistic regression on a manifest's retained samples
//   sweep          alpha x method x seed grid -> CSV
//
// Exit codes: 0 success, 1 validation or usage error, 2 runtime error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prunekit/container.hpp"
#include "prunekit/evaluate.hpp"
#include "prunekit/expert.hpp"
#include "prunekit/io.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/sampling.hpp"
#include "prunekit/synth.hpp"

namespace prunekit::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Input problem the user can fix (bad flag value, inconsistent inputs).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kSyntheticPrefix = "synthetic:";

/// "start:stop:step" (inclusive) or a comma-separated list.
inline std::vector<double> parse_alphas(const std::string& spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<double> parts;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(std::stod(tok));
    if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
      throw UsageError("--alphas expects start:stop:step with step > 0 and stop >= start");
    }
    const auto count = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9)) + 1;
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(std::round((parts[0] + static_cast<double>(i) * parts[2]) * 1e12) / 1e12);
    }
  } else {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  }
  for (double a : out) {
    if (!(a >= 0.0 && a < 1.0)) throw UsageError("every alpha must lie in [0, 1)");
  }
  return out;
}

inline std::vector<Strategy> parse_methods(const std::string& spec) {
  std::vector<Strategy> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(parse_strategy(tok));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("--methods is empty");
  return out;
}

inline std::string format_short(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

namespace detail {

struct Options {
  // shared
  std::string bundle, scores, data, manifest, out;
  std::string metric = "sim";
  bool metric_given = false;
  std::string strategy = "sims";
  double alpha = 0.0;
  std::string alphas = "0.1:0.9:0.1";
  std::string methods = "sims,topk,random";
  double class_ratio = kDefaultClassRatio;
  double center_ratio = 0.1;
  std::uint64_t seed = 0;
  std::size_t seeds = 3;
  bool normalize_g = false;
  std::string csv, f32;
  bool indices_blob = false;
  bool timing = false;
  // synth
  synth::SynthConfig synth;
  // experts
  std::size_t experts = 5;
  ExpertConfig expert;
  // eval
  EvalConfig eval;
};

inline void log(const std::string& line) { std::cerr << "prunekit: " << line << "\n"; }

inline int cmd_validate(const Options& o) {
  DatasetBundle b;
  try {
    b = load_bundle(o.bundle);
  } catch (const BundleError& e) {
    std::cout << "INVALID " << o.bundle << "\n";
    for (const auto& p : e.problems()) std::cout << "  error: " << p << "\n";
    return kUsage;
  }
  const auto warn = warnings(b);
  std::cout << "OK " << o.bundle << " N=" << b.num_samples << " D=" << b.embed_dim
            << " C=" << b.num_classes << " K=" << b.num_experts()
            << " epochs=" << (b.correctness ? b.correctness->epochs : 0)
            << " warnings=" << warn.size() << "\n";
  for (const auto& w : warn) std::cout << "  warning: " << w << "\n";
  return kOk;
}

inline int cmd_score(const Options& o) {
  const auto metric = parse_metric(o.metric);
  const auto bundle = load_bundle(o.bundle);
  if (metric == Metric::Forgetting && !(bundle.correctness && bundle.correctness->epochs >= 2)) {
    throw UsageError("--metric forgetting needs a bundle with a correctness log of >= 2 epochs");
  }
  ScoreFile f;
  f.metric = metric;
  f.table = compute_scores(bundle, ScoreOptions{o.normalize_g});
  f.config = {{"command", "score"},
              {"bundle", o.bundle},
              {"metric", o.metric},
              {"normalize_g", o.normalize_g},
              {"epsilon", kSeparabilityEpsilon},
              {"num_experts", bundle.num_experts()},
              {"source_id", bundle.source_id}};
  save_scores(f, o.out);
  if (!o.csv.empty()) save_scores_csv(f.table, o.csv);
  if (!o.f32.empty()) save_scores_blob(f.table, o.f32);
  log("scored " + std::to_string(f.table.n) + " samples with K=" +
      std::to_string(bundle.num_experts()) + " -> " + o.out);
  return kOk;
}

inline int cmd_prune(const Options& o) {
  const auto file = load_scores(o.scores);
  const Metric metric = o.metric_given ? parse_metric(o.metric) : file.metric;
  PruneOptions opt;
  opt.strategy = parse_strategy(o.strategy);
  opt.alpha = o.alpha;
  opt.class_ratio = o.class_ratio;
  opt.center_ratio = o.center_ratio;
  opt.seed = o.seed;
  if (!(opt.alpha >= 0.0 && opt.alpha < 1.0)) throw UsageError("--alpha must lie in [0, 1)");
  const auto m = prune(file.table, metric, opt);
  const nlohmann::json extra = {
      {"metric", std::string(to_string(metric))},
      {"polarity", std::string(to_string(polarity_of(metric)))},
      {"config",
       {{"command", "prune"},
        {"scores", o.scores},
        {"metric", std::string(to_string(metric))},
        {"strategy", o.strategy},
        {"alpha", o.alpha},
        {"class_ratio", o.class_ratio},
        {"center_ratio", o.center_ratio},
        {"seed", o.seed}}}};
  save_manifest(m, o.out, extra, o.indices_blob);
  log("retained " + std::to_string(m.n_retain()) + "/" + std::to_string(m.n_total) + " (" +
      o.strategy + ", alpha=" + format_short(o.alpha) + ") -> " + o.out);
  return kOk;
}

inline int cmd_synth(const Options& o) {
  const auto data = synth::generate_synthetic(o.synth);
  synth::save_synthetic(data, o.out);
  log("wrote " + std::to_string(data.train.size()) + " train / " +
      std::to_string(data.test.size()) + " test samples -> " + o.out);
  return kOk;
}

inline int cmd_train_experts(const Options& o) {
  const auto data = synth::load_synthetic(o.data);
  if (o.experts < 1) throw UsageError("--experts must be >= 1");
  const auto configs = expert_configs(o.expert, o.experts);
  const std::string source =
      std::string(kSyntheticPrefix) + std::filesystem::absolute(o.data).lexically_normal().string();
  const auto bundle = build_bundle(data.train, configs, source);
  for (std::size_t k = 0; k < bundle.num_experts(); ++k) {
    std::size_t dead = 0;
    for (std::size_t i = 0; i < bundle.num_samples; ++i) {
      const auto e = bundle.experts[k].embeddings.row(i);
      dead += std::all_of(e.begin(), e.end(), [](float v) { return v == 0.0f; });
    }
    if (dead > 0) {
      log("warning: expert " + std::to_string(k) + " has " + std::to_string(dead) +
          " samples with all-zero hidden activations; sim scoring will reject them "
          "(try a larger --hidden or another --seed)");
    }
  }
  save_bundle(bundle, o.out);
  const nlohmann::json cfg = {{"command", "train-experts"},
                              {"data", o.data},
                              {"experts", o.experts},
                              {"expert", to_json(o.expert)},
                              {"seeds", [&] {
                                 std::vector<std::uint64_t> s;
                                 for (const auto& c : configs) s.push_back(c.seed);
                                 return s;
                               }()}};
  prunekit::detail::write_text(std::filesystem::path(o.out) / "train_config.json", cfg.dump(2) + "\n");
  log("trained " + std::to_string(o.experts) + " experts -> " + o.out);
  return kOk;
}

inline int cmd_eval(const Options& o) {
  const auto data = synth::load_synthetic(o.data);
  const auto manifest = load_manifest(o.manifest);
  if (manifest.n_total != data.train.size()) {
    throw UsageError("manifest n_total does not match the training set size");
  }
  const auto report = evaluate(data, manifest, o.eval);
  auto j = to_json(report, o.timing);
  j["config"] = {{"command", "eval"},
                 {"data", o.data},
                 {"manifest", o.manifest},
                 {"eval", to_json(o.eval)},
                 {"timing", o.timing}};
  prunekit::detail::write_text(o.out, j.dump(2) + "\n");
  log("accuracy " + format_short(report.accuracy) + " on " + std::to_string(data.test.size()) +
      " test samples (" + format_short(report.seconds) + " s)");
  return kOk;
}

inline std::string resolve_data_dir(const Options& o, const DatasetBundle& b) {
  if (!o.data.empty()) return o.data;
  if (b.source_id.rfind(kSyntheticPrefix, 0) == 0) return b.source_id.substr(kSyntheticPrefix.size());
  throw UsageError("sweep needs --data: the bundle does not reference a synthetic dataset");
}

inline int cmd_sweep(const Options& o) {
  const auto bundle = load_bundle(o.bundle);
  const std::string data_dir = resolve_data_dir(o, bundle);
  const auto data = synth::load_synthetic(data_dir);
  SweepConfig cfg;
  cfg.alphas = parse_alphas(o.alphas);
  cfg.methods = parse_methods(o.methods);
  cfg.seeds = o.seeds;
  cfg.base_seed = o.seed;
  cfg.metric = parse_metric(o.metric);
  cfg.class_ratio = o.class_ratio;
  cfg.center_ratio = o.center_ratio;
  cfg.eval = o.eval;
  if (cfg.seeds < 1) throw UsageError("--seeds must be >= 1");
  if (cfg.metric == Metric::Forgetting && !bundle.correctness) {
    throw UsageError("--metric forgetting needs a bundle with a correctness log");
  }

  const auto table = compute_scores(bundle, ScoreOptions{o.normalize_g});
  const auto rows = run_sweep(table, data, cfg);

  std::ostringstream csv;
  csv << "method,alpha,seed,accuracy,noisy_fraction\n";
  for (const auto& r : rows) {
    csv << to_string(r.method) << ',' << format_double(r.alpha) << ',' << r.seed << ','
        << format_double(r.accuracy) << ',' << format_double(r.noisy_fraction) << '\n';
  }
  prunekit::detail::write_text(o.out, csv.str());

  // Mean and sample standard deviation over seeds for each (method, alpha).
  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t j = 0; j < rows.size(); j += cfg.seeds) {
    double mean = 0.0, noisy = 0.0;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      mean += rows[j + s].accuracy;
      noisy += rows[j + s].noisy_fraction;
    }
    mean /= static_cast<double>(cfg.seeds);
    noisy /= static_cast<double>(cfg.seeds);
    double var = 0.0;
    for (std::size_t s = 0; s < cfg.seeds; ++s) var += std::pow(rows[j + s].accuracy - mean, 2);
    const double sd = cfg.seeds > 1 ? std::sqrt(var / static_cast<double>(cfg.seeds - 1)) : 0.0;
    summary.push_back({{"method", std::string(to_string(rows[j].method))},
                       {"alpha", rows[j].alpha},
                       {"accuracy_mean", mean},
                       {"accuracy_sd", sd},
                       {"noisy_fraction_mean", noisy}});
  }
  std::vector<std::string> method_names;
  for (auto m : cfg.methods) method_names.emplace_back(to_string(m));
  const nlohmann::json side = {{"config",
                                {{"command", "sweep"},
                                 {"bundle", o.bundle},
                                 {"data", data_dir},
                                 {"alphas", cfg.alphas},
                                 {"methods", method_names},
                                 {"seeds", cfg.seeds},
                                 {"base_seed", cfg.base_seed},
                                 {"metric", o.metric},
                                 {"normalize_g", o.normalize_g},
                                 {"class_ratio", cfg.class_ratio},
                                 {"center_ratio", cfg.center_ratio},
                                 {"eval", to_json(cfg.eval)}}},
                               {"summary", summary}};
  prunekit::detail::write_text(o.out + ".json", side.dump(2) + "\n");
  log("wrote " + std::to_string(rows.size()) + " sweep rows -> " + o.out);
  return kOk;
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  detail::Options o;
  CLI::App app{"prunekit: coreset selection with SIM scores and importance sampling"};
  app.name("prunekit");
  app.require_subcommand(1);

  const std::vector<std::string> metric_names = {"sim", "el2n", "prototype", "forgetting"};
  const std::vector<std::string> strategy_names = {"sims", "topk", "random", "center-mix"};

  auto* validate = app.add_subcommand("validate", "Check a bundle directory against the container format");
  validate->add_option("--bundle", o.bundle, "Bundle directory")->required();

  auto* score = app.add_subcommand(
      "score",
      "Compute SIM components and baseline scores (separability epsilon 1e-7; K taken from the bundle)");
  score->add_option("--bundle", o.bundle, "Bundle directory")->required();
  score->add_option("--metric", o.metric, "Default metric recorded in the score file")
      ->check(CLI::IsMember(metric_names))
      ->capture_default_str();
  score->add_flag("--normalize-g", o.normalize_g,
                  "Min-max normalize g before combining with integrity (default off)");
  score->add_option("--out", o.out, "Output scores.json")->required();
  score->add_option("--csv", o.csv, "Also write a per-sample CSV");
  score->add_option("--f32", o.f32, "Also write a float32 column blob (+ .json column manifest)");

  auto* prune = app.add_subcommand("prune", "Select a coreset from a score file");
  prune->add_option("--scores", o.scores, "scores.json from `score`")->required();
  auto* metric_opt = prune->add_option("--metric", o.metric,
                                       "Score column (default: the file's metric)")
                         ->check(CLI::IsMember(metric_names));
  prune->add_option("--strategy", o.strategy, "Selection strategy")
      ->check(CLI::IsMember(strategy_names))
      ->capture_default_str();
  prune->add_option("--alpha", o.alpha, "Pruning ratio in [0, 1)")->required();
  prune->add_option("--class-ratio", o.class_ratio,
                    "Fraction of the retained budget sampled within each class (sims)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  prune->add_option("--center-ratio", o.center_ratio,
                    "Fraction of the budget taken from the easiest samples (center-mix)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  prune->add_option("--seed", o.seed, "RNG seed")->capture_default_str();
  prune->add_flag("--indices-blob", o.indices_blob, "Always write the companion indices.u32 blob");
  prune->add_option("--out", o.out, "Output manifest JSON")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic Gaussian-mixture dataset");
  synth_cmd->add_option("--classes", o.synth.num_classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--samples-per-class", o.synth.samples_per_class, "Training samples per class")
      ->capture_default_str();
  synth_cmd->add_option("--class-counts", o.synth.class_counts,
                        "Per-class training counts (overrides --samples-per-class)")
      ->delimiter(',');
  synth_cmd->add_option("--test-per-class", o.synth.test_per_class, "Test samples per class")
      ->capture_default_str();
  synth_cmd->add_option("--dim", o.synth.feature_dim, "Feature dimension")->capture_default_str();
  synth_cmd->add_option("--spread", o.synth.spread, "Radius of the class-center sphere")
      ->capture_default_str();
  synth_cmd->add_option("--within-std", o.synth.within_std, "Within-class standard deviation")
      ->capture_default_str();
  synth_cmd->add_option("--label-noise", o.synth.label_noise_ratio, "Fraction of flipped labels")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth_cmd->add_option("--blur", o.synth.blur_ratio, "Fraction of samples pulled toward the mean")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth_cmd->add_option("--seed", o.synth.seed, "RNG seed")->capture_default_str();
  synth_cmd->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train-experts", "Train K expert MLPs and write a bundle");
  train->add_option("--data", o.data, "Synthetic dataset directory")->required();
  train->add_option("--experts", o.experts, "Number of experts K")->capture_default_str();
  train->add_option("--hidden", o.expert.hidden_dim, "Hidden width (embedding dimension)")
      ->capture_default_str();
  train->add_option("--epochs", o.expert.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", o.expert.learning_rate, "SGD learning rate")->capture_default_str();
  train->add_option("--batch-size", o.expert.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--seed", o.expert.seed, "Seed of expert 0 (expert k uses seed + k)")
      ->capture_default_str();
  train->add_option("--out", o.out, "Output bundle directory")->required();

  auto add_eval_opts = [&](CLI::App* sub, const std::string& prefix) {
    sub->add_option("--" + prefix + "epochs", o.eval.epochs, "Classifier epochs")->capture_default_str();
    sub->add_option("--" + prefix + "lr", o.eval.learning_rate, "Classifier learning rate")
        ->capture_default_str();
    sub->add_option("--" + prefix + "batch-size", o.eval.batch_size, "Classifier batch size (0 = full batch)")
        ->capture_default_str();
  };

  auto* eval = app.add_subcommand("eval", "Train a classifier on a manifest's retained samples");
  eval->add_option("--data", o.data, "Synthetic dataset directory")->required();
  eval->add_option("--manifest", o.manifest, "Prune manifest JSON")->required();
  add_eval_opts(eval, "");
  eval->add_option("--seed", o.eval.seed, "RNG seed")->capture_default_str();
  eval->add_flag("--timing", o.timing, "Include wall-clock seconds in the report");
  eval->add_option("--out", o.out, "Output report JSON")->required();

  auto* sweep = app.add_subcommand("sweep", "Evaluate an alpha x method x seed grid");
  sweep->add_option("--bundle", o.bundle, "Bundle directory")->required();
  sweep->add_option("--data", o.data,
                    "Synthetic dataset directory (default: the one the bundle was trained on)");
  sweep->add_option("--alphas", o.alphas, "start:stop:step or comma list")->capture_default_str();
  sweep->add_option("--methods", o.methods, "Comma list of strategies")->capture_default_str();
  sweep->add_option("--seeds", o.seeds, "Repeats per cell")->capture_default_str();
  sweep->add_option("--seed", o.seed, "First seed")->capture_default_str();
  sweep->add_option("--metric", o.metric, "Score column")
      ->check(CLI::IsMember(metric_names))
      ->capture_default_str();
  sweep->add_flag("--normalize-g", o.normalize_g, "Min-max normalize g (default off)");
  sweep->add_option("--class-ratio", o.class_ratio, "Class-dependent budget share (sims)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sweep->add_option("--center-ratio", o.center_ratio, "Easy-sample share (center-mix)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  add_eval_opts(sweep, "eval-");
  sweep->add_option("--out", o.out, "Output CSV (a .json summary is written alongside)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  o.metric_given = metric_opt->count() > 0;

  try {
    if (*validate) return detail::cmd_validate(o);
    if (*score) return detail::cmd_score(o);
    if (*prune) return detail::cmd_prune(o);
    if (*synth_cmd) return detail::cmd_synth(o);
    if (*train) return detail::cmd_train_experts(o);
    if (*eval) return detail::cmd_eval(o);
    if (*sweep) return detail::cmd_sweep(o);
  } catch (const BundleError& e) {
    std::cerr << "prunekit: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "prunekit: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "prunekit: " << e.what() << "\n";
    return kUsage;
  } catch (const SamplingError& e) {
    std::cerr << "prunekit: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "prunekit: error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"prunekit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace prunekit::cli

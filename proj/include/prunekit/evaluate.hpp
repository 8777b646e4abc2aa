#pragma once

// Downstream evaluation of a prune manifest: a multinomial logistic
// regression is trained on the retained samples only and scored on the clean
// test split. `run_sweep` repeats this over a grid of pruning ratios,
// strategies and seeds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunekit/expert.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/parallel.hpp"
#include "prunekit/sampling.hpp"
#include "prunekit/synth.hpp"

namespace prunekit {

struct EvalConfig {
  std::size_t epochs = 150;
  double learning_rate = 0.1;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const EvalConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

/// Affine -> softmax classifier.
class LogisticRegression {
 public:
  LogisticRegression(std::size_t inputs, std::size_t classes)
      : in_(inputs), out_(classes), w_(classes * inputs, 0.0), b_(classes, 0.0) {}

  void predict_proba(std::span<const float> x, std::span<double> probs) const {
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < out_; ++c) {
      double acc = b_[c];
      for (std::size_t i = 0; i < in_; ++i) acc += w_[c * in_ + i] * x[i];
      probs[c] = acc;
      zmax = std::max(zmax, acc);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < out_; ++c) {
      probs[c] = std::exp(probs[c] - zmax);
      denom += probs[c];
    }
    for (std::size_t c = 0; c < out_; ++c) probs[c] /= denom;
  }

  std::size_t predict(std::span<const float> x) const {
    std::vector<double> p(out_);
    predict_proba(x, p);
    return argmax(p);
  }

  /// One gradient step on `batch`; returns the mean cross-entropy before the step.
  double step(const Matrix& x, std::span<const std::uint32_t> labels,
              std::span<const std::size_t> batch, double lr) {
    std::vector<double> gw(w_.size(), 0.0), gb(out_, 0.0), p(out_);
    double loss = 0.0;
    for (std::size_t i : batch) {
      const auto xi = x.row(i);
      predict_proba(xi, p);
      loss -= std::log(std::max(p[labels[i]], std::numeric_limits<double>::min()));
      for (std::size_t c = 0; c < out_; ++c) {
        const double dz = p[c] - (c == labels[i] ? 1.0 : 0.0);
        gb[c] += dz;
        for (std::size_t k = 0; k < in_; ++k) gw[c * in_ + k] += dz * xi[k];
      }
    }
    const double scale = lr / static_cast<double>(batch.size());
    for (std::size_t j = 0; j < w_.size(); ++j) w_[j] -= scale * gw[j];
    for (std::size_t c = 0; c < out_; ++c) b_[c] -= scale * gb[c];
    return loss / static_cast<double>(batch.size());
  }

 private:
  std::size_t in_, out_;
  std::vector<double> w_, b_;
};

struct EvalReport {
  std::string method;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double noisy_fraction = 0.0;
  std::size_t n_retain = 0;
  std::vector<std::size_t> per_class_retained;
  std::vector<double> loss_history;  // one entry per epoch
  double seconds = 0.0;
};

/// Wall-clock time is reported only when `with_timing` is set, so that the
/// default artifact is byte-reproducible.
inline nlohmann::json to_json(const EvalReport& r, bool with_timing = false) {
  nlohmann::json j = {{"method", r.method},
                      {"alpha", r.alpha},
                      {"seed", r.seed},
                      {"accuracy", r.accuracy},
                      {"noisy_fraction", r.noisy_fraction},
                      {"n_retain", r.n_retain},
                      {"per_class_retained", r.per_class_retained}};
  if (with_timing) j["seconds"] = r.seconds;
  return j;
}

inline EvalReport evaluate(const synth::SyntheticData& data, const PruneManifest& manifest,
                           const EvalConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& train = data.train;
  if (manifest.retained_indices.empty()) throw std::invalid_argument("manifest retains no samples");
  if (manifest.n_total != train.size()) {
    throw std::invalid_argument("manifest n_total " + std::to_string(manifest.n_total) +
                                " does not match training set size " +
                                std::to_string(train.size()));
  }
  std::vector<std::size_t> retained(manifest.retained_indices.begin(),
                                     manifest.retained_indices.end());
  for (auto i : retained)
    if (i >= train.size()) throw std::invalid_argument("manifest index out of range");

  EvalReport r;
  r.method = std::string(to_string(manifest.method));
  r.alpha = manifest.alpha;
  r.seed = cfg.seed;
  r.n_retain = retained.size();
  r.per_class_retained.assign(train.num_classes, 0);
  std::size_t noisy = 0;
  for (auto i : retained) {
    ++r.per_class_retained[train.labels[i]];
    if (!data.noise_mask.empty() && data.noise_mask[i]) ++noisy;
  }
  r.noisy_fraction = static_cast<double>(noisy) / static_cast<double>(retained.size());

  LogisticRegression model(train.dim(), train.num_classes);
  Rng rng(cfg.seed);
  const std::size_t bs = cfg.batch_size == 0 ? retained.size() : cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (bs < retained.size()) {
      for (std::size_t i = retained.size(); i > 1; --i) {
        std::swap(retained[i - 1], retained[rng.next() % i]);
      }
    }
    double loss = 0.0;
    for (std::size_t start = 0; start < retained.size(); start += bs) {
      const std::size_t stop = std::min(retained.size(), start + bs);
      const std::span<const std::size_t> batch(retained.data() + start, stop - start);
      loss += model.step(train.features, train.labels, batch, cfg.learning_rate) *
              static_cast<double>(batch.size());
    }
    r.loss_history.push_back(loss / static_cast<double>(retained.size()));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    if (model.predict(data.test.features.row(i)) == data.test.labels[i]) ++correct;
  }
  r.accuracy = data.test.size() == 0 ? 0.0
                                     : static_cast<double>(correct) /
                                           static_cast<double>(data.test.size());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct SweepConfig {
  std::vector<double> alphas;
  std::vector<Strategy> methods;
  std::size_t seeds = 3;
  std::uint64_t base_seed = 0;
  Metric metric = Metric::Sim;
  double class_ratio = kDefaultClassRatio;
  double center_ratio = 0.1;
  EvalConfig eval;
};

struct SweepRow {
  Strategy method = Strategy::Sims;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double noisy_fraction = 0.0;
};

/// Rows ordered by method, then alpha, then seed. Cells run in parallel,
/// each with its own seed, so the output does not depend on scheduling.
inline std::vector<SweepRow> run_sweep(const ScoreTable& scores, const synth::SyntheticData& data,
                                       const SweepConfig& cfg) {
  if (scores.n != data.train.size()) {
    throw std::invalid_argument("score table and training set differ in size");
  }
  std::vector<SweepRow> rows;
  for (auto method : cfg.methods)
    for (double alpha : cfg.alphas)
      for (std::size_t s = 0; s < cfg.seeds; ++s)
        rows.push_back({method, alpha, cfg.base_seed + s, 0.0, 0.0});

  parallel_for(rows.size(), [&](std::size_t j) {
    auto& row = rows[j];
    PruneOptions opt;
    opt.strategy = row.method;
    opt.alpha = row.alpha;
    opt.class_ratio = cfg.class_ratio;
    opt.center_ratio = cfg.center_ratio;
    opt.seed = row.seed;
    const auto manifest = prune(scores, cfg.metric, opt);
    EvalConfig ec = cfg.eval;
    ec.seed = row.seed;
    const auto report = evaluate(data, manifest, ec);
    row.accuracy = report.accuracy;
    row.noisy_fraction = report.noisy_fraction;
  });
  return rows;
}

}  // namespace prunekit

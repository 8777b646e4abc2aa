#pragma once

// Tiny expert classifiers (affine -> ReLU -> affine -> softmax) trained with
// plain mini-batch SGD on cross-entropy. Their hidden activations and softmax
// outputs populate a DatasetBundle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunekit/container.hpp"
#include "prunekit/parallel.hpp"
#include "prunekit/sampling.hpp"
#include "prunekit/synth.hpp"

namespace prunekit {

struct ExpertConfig {
  std::size_t hidden_dim = 32;
  std::size_t epochs = 20;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const ExpertConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One-hidden-layer network. Parameters live in one flat vector laid out as
/// [W1 (H x I), b1 (H), W2 (C x H), b2 (C)].
class Mlp {
 public:
  Mlp(std::size_t inputs, std::size_t hidden, std::size_t classes)
      : in_(inputs), hid_(hidden), out_(classes),
        theta_(hidden * inputs + hidden + classes * hidden + classes, 0.0) {
    if (inputs == 0 || hidden == 0 || classes < 2) {
      throw std::invalid_argument("Mlp needs inputs >= 1, hidden >= 1, classes >= 2");
    }
  }

  /// Glorot-uniform weights; small positive hidden bias so ReLU units start alive.
  void init(Rng& rng) {
    const double a1 = std::sqrt(6.0 / static_cast<double>(in_ + hid_));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hid_ + out_));
    auto uni = [&](double a) { return a * (2.0 * rng.uniform_open0() - 1.0); };
    for (std::size_t j = 0; j < hid_ * in_; ++j) theta_[j] = uni(a1);
    for (std::size_t j = 0; j < hid_; ++j) theta_[off_b1() + j] = 0.1;
    for (std::size_t j = 0; j < out_ * hid_; ++j) theta_[off_w2() + j] = uni(a2);
    for (std::size_t j = 0; j < out_; ++j) theta_[off_b2() + j] = 0.0;
  }

  std::size_t inputs() const { return in_; }
  std::size_t hidden() const { return hid_; }
  std::size_t classes() const { return out_; }
  std::span<double> params() { return theta_; }
  std::span<const double> params() const { return theta_; }

  /// Forward pass for one sample. `pre` and `act` receive the hidden layer
  /// before/after ReLU, `probs` the softmax output. Returns -log p[label]
  /// when a label is given, else 0.
  double forward(std::span<const float> x, std::span<double> pre, std::span<double> act,
                 std::span<double> probs, std::uint32_t label = kNoLabel) const {
    const double* w1 = theta_.data();
    const double* b1 = theta_.data() + off_b1();
    const double* w2 = theta_.data() + off_w2();
    const double* b2 = theta_.data() + off_b2();
    for (std::size_t h = 0; h < hid_; ++h) {
      double acc = b1[h];
      const double* wr = w1 + h * in_;
      for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * x[i];
      pre[h] = acc;
      act[h] = acc > 0.0 ? acc : 0.0;
    }
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < out_; ++c) {
      double acc = b2[c];
      const double* wr = w2 + c * hid_;
      for (std::size_t h = 0; h < hid_; ++h) acc += wr[h] * act[h];
      probs[c] = acc;
      zmax = std::max(zmax, acc);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < out_; ++c) denom += std::exp(probs[c] - zmax);
    const double log_denom = std::log(denom);
    double loss = 0.0;
    if (label != kNoLabel) loss = -(probs[label] - zmax - log_denom);
    for (std::size_t c = 0; c < out_; ++c) probs[c] = std::exp(probs[c] - zmax - log_denom);
    return loss;
  }

  /// Mean cross-entropy over `batch` and its gradient w.r.t. params().
  double loss_and_gradient(const Matrix& x, std::span<const std::uint32_t> labels,
                           std::span<const std::size_t> batch, std::span<double> grad) const {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> pre(hid_), act(hid_), probs(out_), dh(hid_);
    double* gw1 = grad.data();
    double* gb1 = grad.data() + off_b1();
    double* gw2 = grad.data() + off_w2();
    double* gb2 = grad.data() + off_b2();
    const double* w2 = theta_.data() + off_w2();
    double loss = 0.0;
    for (std::size_t i : batch) {
      const auto xi = x.row(i);
      loss += forward(xi, pre, act, probs, labels[i]);
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t c = 0; c < out_; ++c) {
        const double dz = probs[c] - (c == labels[i] ? 1.0 : 0.0);
        gb2[c] += dz;
        double* g = gw2 + c * hid_;
        const double* w = w2 + c * hid_;
        for (std::size_t h = 0; h < hid_; ++h) {
          g[h] += dz * act[h];
          dh[h] += dz * w[h];
        }
      }
      for (std::size_t h = 0; h < hid_; ++h) {
        if (pre[h] <= 0.0) continue;
        gb1[h] += dh[h];
        double* g = gw1 + h * in_;
        for (std::size_t k = 0; k < in_; ++k) g[k] += dh[h] * xi[k];
      }
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= scale;
    return loss * scale;
  }

  static constexpr std::uint32_t kNoLabel = std::numeric_limits<std::uint32_t>::max();

 private:
  std::size_t off_b1() const { return hid_ * in_; }
  std::size_t off_w2() const { return off_b1() + hid_; }
  std::size_t off_b2() const { return off_w2() + out_ * hid_; }

  std::size_t in_, hid_, out_;
  std::vector<double> theta_;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < v.size(); ++c)
    if (v[c] > v[best]) best = c;
  return best;
}

struct TrainedExpert {
  ExpertDump dump;
  CorrectnessLog correctness;  // epochs x N
  std::vector<double> epoch_loss;
};

/// Trains one expert on the full training set and dumps its hidden
/// activations and softmax outputs computed with the final weights.
inline TrainedExpert train_expert(const synth::LabeledSet& train, const ExpertConfig& cfg) {
  if (cfg.hidden_dim < 1 || cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("expert config needs hidden_dim, epochs, batch_size >= 1");
  }
  const std::size_t N = train.size();
  const std::size_t C = train.num_classes;
  if (N == 0) throw std::invalid_argument("cannot train an expert on an empty set");

  Rng rng(cfg.seed);
  Mlp net(train.dim(), cfg.hidden_dim, C);
  net.init(rng);

  TrainedExpert out;
  out.correctness.epochs = cfg.epochs;
  out.correctness.samples = N;
  out.correctness.data.assign(cfg.epochs * N, 0);

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(net.params().size());
  std::vector<double> pre(cfg.hidden_dim), act(cfg.hidden_dim), probs(C);
  auto params = net.params();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = N; i > 1; --i) {
      std::swap(order[i - 1], order[rng.next() % i]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t stop = std::min(N, start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const double loss = net.loss_and_gradient(train.features, train.labels, batch, grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("expert training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch + 1));
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      for (std::size_t j = 0; j < params.size(); ++j) params[j] -= cfg.learning_rate * grad[j];
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(N));

    for (std::size_t i = 0; i < N; ++i) {
      net.forward(train.features.row(i), pre, act, probs);
      out.correctness.data[epoch * N + i] = argmax(probs) == train.labels[i] ? 1 : 0;
    }
  }

  out.dump.embeddings = Matrix(N, cfg.hidden_dim);
  out.dump.probs = Matrix(N, C);
  for (std::size_t i = 0; i < N; ++i) {
    net.forward(train.features.row(i), pre, act, probs);
    auto e = out.dump.embeddings.row(i);
    for (std::size_t h = 0; h < cfg.hidden_dim; ++h) e[h] = static_cast<float>(act[h]);
    auto p = out.dump.probs.row(i);
    for (std::size_t c = 0; c < C; ++c) p[c] = static_cast<float>(probs[c]);
  }
  return out;
}

/// K copies of `base` with seeds base.seed + k.
inline std::vector<ExpertConfig> expert_configs(const ExpertConfig& base, std::size_t k) {
  std::vector<ExpertConfig> out(k, base);
  for (std::size_t j = 0; j < k; ++j) out[j].seed = base.seed + j;
  return out;
}

/// Trains every expert (in parallel when allowed) and assembles a bundle.
/// The correctness log comes from expert 0.
inline DatasetBundle build_bundle(const synth::LabeledSet& train,
                                  std::span<const ExpertConfig> configs,
                                  std::string source_id = "synthetic") {
  if (configs.empty()) throw std::invalid_argument("build_bundle needs at least one expert");
  const std::size_t H = configs.front().hidden_dim;
  for (const auto& c : configs) {
    if (c.hidden_dim != H) throw std::invalid_argument("all experts must share hidden_dim");
  }
  std::vector<TrainedExpert> trained(configs.size());
  parallel_for(configs.size(), [&](std::size_t k) { trained[k] = train_expert(train, configs[k]); });

  DatasetBundle b;
  b.num_samples = train.size();
  b.embed_dim = H;
  b.num_classes = train.num_classes;
  b.labels = train.labels;
  b.source_id = std::move(source_id);
  b.correctness = std::move(trained.front().correctness);
  for (auto& t : trained) b.experts.push_back(std::move(t.dump));
  if (auto problems = validate(b); !problems.empty()) throw BundleError(std::move(problems));
  return b;
}

}  // namespace prunekit

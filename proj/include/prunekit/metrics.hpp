#pragma once

// Per-sample pruning scores computed from a DatasetBundle: the separability,
// integrity and certainty components, their SIM combination, and the EL2N,
// Prototype and Forgetting baselines.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/container.hpp"

namespace prunekit {

inline constexpr double kSeparabilityEpsilon = 1e-7;
inline constexpr double kDegenerateRange = 1e-12;

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Which end of a score marks an easy sample.
enum class Polarity { HighEasy, HighDifficult };

enum class Metric { Sim, El2n, Prototype, Forgetting };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Sim: return "sim";
    case Metric::El2n: return "el2n";
    case Metric::Prototype: return "prototype";
    case Metric::Forgetting: return "forgetting";
  }
  return "?";
}

inline Metric parse_metric(std::string_view name) {
  if (name == "sim") return Metric::Sim;
  if (name == "el2n") return Metric::El2n;
  if (name == "prototype") return Metric::Prototype;
  if (name == "forgetting") return Metric::Forgetting;
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

/// Fixed per metric; not user-configurable.
inline constexpr Polarity polarity_of(Metric m) {
  return m == Metric::Sim ? Polarity::HighEasy : Polarity::HighDifficult;
}

inline std::string_view to_string(Polarity p) {
  return p == Polarity::HighEasy ? "high_easy" : "high_difficult";
}

/// Class-mean embeddings for every expert.
struct CenterMatrix {
  std::size_t num_classes = 0;
  std::size_t embed_dim = 0;
  std::vector<std::vector<double>> centers;  // [expert][class * D + d]
  std::vector<std::size_t> counts;           // samples per class

  bool valid(std::size_t cls) const { return counts[cls] > 0; }

  std::span<const double> center(std::size_t expert, std::size_t cls) const {
    return {centers[expert].data() + cls * embed_dim, embed_dim};
  }
};

inline CenterMatrix class_centers(const DatasetBundle& b) {
  CenterMatrix cm;
  cm.num_classes = b.num_classes;
  cm.embed_dim = b.embed_dim;
  cm.counts.assign(b.num_classes, 0);
  for (auto y : b.labels) ++cm.counts[y];

  cm.centers.resize(b.num_experts());
  for (std::size_t k = 0; k < b.num_experts(); ++k) {
    auto& sums = cm.centers[k];
    sums.assign(b.num_classes * b.embed_dim, 0.0);
    const auto& emb = b.experts[k].embeddings;
    // Sequential index order keeps the sums bit-reproducible.
    for (std::size_t i = 0; i < b.num_samples; ++i) {
      double* dst = sums.data() + b.labels[i] * b.embed_dim;
      const auto row = emb.row(i);
      for (std::size_t d = 0; d < b.embed_dim; ++d) dst[d] += row[d];
    }
    for (std::size_t c = 0; c < b.num_classes; ++c) {
      if (cm.counts[c] == 0) continue;
      const double n = static_cast<double>(cm.counts[c]);
      for (std::size_t d = 0; d < b.embed_dim; ++d) sums[c * b.embed_dim + d] /= n;
    }
  }
  return cm;
}

namespace detail {

inline double l2_norm(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

inline double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double dot(std::span<const float> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

/// Entropy in nats with 0 log 0 = 0.
template <typename Range>
double entropy_nats(const Range& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace detail

/// Ratio of nearest-imposter cosine distance to own-class cosine distance,
/// for expert `k`. Empty classes are skipped as imposters.
inline std::vector<double> separability_per_expert(const DatasetBundle& b, const CenterMatrix& cm,
                                                   std::size_t k) {
  const std::size_t C = b.num_classes;
  std::vector<double> center_norm(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (!cm.valid(c)) continue;
    center_norm[c] = detail::l2_norm(cm.center(k, c));
    if (center_norm[c] == 0.0) {
      throw MetricError("expert " + std::to_string(k) + ": class " + std::to_string(c) +
                        " center has zero norm; cosine undefined");
    }
  }
  std::size_t nonempty = 0;
  for (std::size_t c = 0; c < C; ++c) nonempty += cm.valid(c) ? 1 : 0;
  if (nonempty < 2) throw MetricError("separability needs at least one non-empty imposter class");

  const auto& emb = b.experts[k].embeddings;
  std::vector<double> out(b.num_samples);
  for (std::size_t i = 0; i < b.num_samples; ++i) {
    const auto x = emb.row(i);
    const double xn = detail::l2_norm(x);
    if (xn == 0.0) {
      throw MetricError("expert " + std::to_string(k) + ": sample " + std::to_string(i) +
                        " has a zero-norm embedding; cosine undefined");
    }
    const std::size_t own = b.labels[i];
    double own_cos = 0.0;
    double best_imposter = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      if (!cm.valid(c)) continue;
      const double cosv = detail::dot(x, cm.center(k, c)) / (xn * center_norm[c]);
      if (c == own) {
        own_cos = cosv;
      } else {
        best_imposter = std::max(best_imposter, cosv);
      }
    }
    const double d_pos = 1.0 - own_cos;
    const double d_neg = 1.0 - best_imposter;
    out[i] = d_neg / (d_pos + kSeparabilityEpsilon);
  }
  return out;
}

/// Embedding L2 norm under expert `k`.
inline std::vector<double> integrity_per_expert(const DatasetBundle& b, std::size_t k) {
  const auto& emb = b.experts[k].embeddings;
  std::vector<double> out(b.num_samples);
  for (std::size_t i = 0; i < b.num_samples; ++i) out[i] = detail::l2_norm(emb.row(i));
  return out;
}

/// One minus the Jensen-Shannon divergence of the expert ensemble. Entropies
/// use base max(K, 2) so the divergence lies in [0, 1].
inline std::vector<double> certainty(const DatasetBundle& b) {
  const std::size_t K = b.num_experts();
  const std::size_t C = b.num_classes;
  std::vector<double> out(b.num_samples, 1.0);
  if (K == 1) return out;

  const double log_base = std::log(static_cast<double>(std::max<std::size_t>(K, 2)));
  std::vector<double> mix(C);
  std::vector<double> row(C);
  for (std::size_t i = 0; i < b.num_samples; ++i) {
    std::fill(mix.begin(), mix.end(), 0.0);
    double mean_h = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto p = b.experts[k].probs.row(i);
      for (std::size_t c = 0; c < C; ++c) {
        row[c] = p[c];
        mix[c] += p[c];
      }
      mean_h += detail::entropy_nats(row);
    }
    for (double& m : mix) m /= static_cast<double>(K);
    mean_h /= static_cast<double>(K);
    const double jsd = std::clamp((detail::entropy_nats(mix) - mean_h) / log_base, 0.0, 1.0);
    out[i] = 1.0 - jsd;
  }
  return out;
}

/// Min-max normalization to [0, 1]; a range below 1e-12 maps to all zeros.
inline std::vector<double> minmax_normalize(std::span<const double> v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range >= kDegenerateRange)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  return out;
}

inline std::vector<double> mean_over_experts(std::span<const std::vector<double>> per_expert) {
  if (per_expert.empty()) throw MetricError("no per-expert vectors to aggregate");
  std::vector<double> out(per_expert.front().size(), 0.0);
  for (const auto& v : per_expert) {
    if (v.size() != out.size()) throw MetricError("per-expert vectors differ in length");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  const double K = static_cast<double>(per_expert.size());
  for (double& x : out) x /= K;
  return out;
}

struct NormalizedComponents {
  std::vector<double> s_raw, e_raw, c_raw;
  std::vector<double> s, e, c;
};

inline NormalizedComponents aggregate_and_normalize(std::span<const std::vector<double>> s_per_expert,
                                                    std::span<const std::vector<double>> e_per_expert,
                                                    std::vector<double> c) {
  NormalizedComponents out;
  out.s_raw = mean_over_experts(s_per_expert);
  out.e_raw = mean_over_experts(e_per_expert);
  out.c_raw = std::move(c);
  out.s = minmax_normalize(out.s_raw);
  out.e = minmax_normalize(out.e_raw);
  out.c = minmax_normalize(out.c_raw);
  return out;
}

struct SimColumns {
  std::vector<double> g;
  std::vector<double> sim;
};

/// g contrasts distance to the (s=1, c=0) corner against distance to the
/// (s=1, c=1) corner; SIM folds g with integrity. With `normalize_g` the g
/// column is min-max normalized before squaring (off by default).
inline SimColumns sim_combine(std::span<const double> s, std::span<const double> e,
                              std::span<const double> c, bool normalize_g = false) {
  if (s.size() != e.size() || s.size() != c.size()) {
    throw MetricError("sim_combine: component lengths differ");
  }
  SimColumns out;
  out.g.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = 1.0 - s[i];
    out.g[i] = std::sqrt(a * a + c[i] * c[i]) - std::sqrt(a * a + (1.0 - c[i]) * (1.0 - c[i]));
  }
  const std::vector<double> g_used = normalize_g ? minmax_normalize(out.g) : out.g;
  out.sim.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.sim[i] = std::hypot(g_used[i], e[i]);
  return out;
}

/// Mean over experts of || softmax - onehot(label) ||_2.
inline std::vector<double> el2n(const DatasetBundle& b) {
  std::vector<double> out(b.num_samples, 0.0);
  for (std::size_t k = 0; k < b.num_experts(); ++k) {
    const auto& probs = b.experts[k].probs;
    for (std::size_t i = 0; i < b.num_samples; ++i) {
      const auto p = probs.row(i);
      double acc = 0.0;
      for (std::size_t c = 0; c < b.num_classes; ++c) {
        const double err = static_cast<double>(p[c]) - (c == b.labels[i] ? 1.0 : 0.0);
        acc += err * err;
      }
      out[i] += std::sqrt(acc);
    }
  }
  for (double& x : out) x /= static_cast<double>(b.num_experts());
  return out;
}

/// Mean over experts of the Euclidean distance to the own-class center.
inline std::vector<double> prototype(const DatasetBundle& b, const CenterMatrix& cm) {
  std::vector<double> out(b.num_samples, 0.0);
  for (std::size_t k = 0; k < b.num_experts(); ++k) {
    const auto& emb = b.experts[k].embeddings;
    for (std::size_t i = 0; i < b.num_samples; ++i) {
      const std::size_t y = b.labels[i];
      if (!cm.valid(y)) {
        throw MetricError("sample " + std::to_string(i) + ": class " + std::to_string(y) +
                          " has no valid center");
      }
      const auto x = emb.row(i);
      const auto ctr = cm.center(k, y);
      double acc = 0.0;
      for (std::size_t d = 0; d < b.embed_dim; ++d) {
        const double diff = static_cast<double>(x[d]) - ctr[d];
        acc += diff * diff;
      }
      out[i] += std::sqrt(acc);
    }
  }
  for (double& x : out) x /= static_cast<double>(b.num_experts());
  return out;
}

/// Forgetting events for one sample's correctness trajectory. A sample that
/// is never correct scores the trajectory length.
inline double forgetting_events(std::span<const std::uint8_t> trajectory) {
  bool ever_correct = false;
  std::size_t events = 0;
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    ever_correct = ever_correct || trajectory[t] != 0;
    if (t > 0 && trajectory[t - 1] != 0 && trajectory[t] == 0) ++events;
  }
  return ever_correct ? static_cast<double>(events) : static_cast<double>(trajectory.size());
}

inline std::vector<double> forgetting(const DatasetBundle& b) {
  if (!b.correctness) throw MetricError("forgetting needs a correctness log; bundle has none");
  const auto& log = *b.correctness;
  if (log.epochs < 2) throw MetricError("forgetting needs at least 2 epochs in the correctness log");
  std::vector<double> out(b.num_samples);
  std::vector<std::uint8_t> traj(log.epochs);
  for (std::size_t i = 0; i < b.num_samples; ++i) {
    for (std::size_t t = 0; t < log.epochs; ++t) traj[t] = log.at(t, i);
    out[i] = forgetting_events(traj);
  }
  return out;
}

struct ScoreOptions {
  bool normalize_g = false;
};

/// Every per-sample column produced from one bundle.
struct ScoreTable {
  std::size_t n = 0;
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  std::vector<double> s_raw, e_raw, c_raw;
  std::vector<double> s, e, c;
  std::vector<double> g, sim;
  std::vector<double> el2n, prototype;
  std::optional<std::vector<double>> forgetting;
  std::size_t num_epochs = 0;
  bool normalize_g = false;

  const std::vector<double>& column(Metric m) const {
    switch (m) {
      case Metric::Sim: return sim;
      case Metric::El2n: return el2n;
      case Metric::Prototype: return prototype;
      case Metric::Forgetting:
        if (!forgetting) throw MetricError("score table has no forgetting column");
        return *forgetting;
    }
    throw MetricError("unknown metric");
  }
};

inline ScoreTable compute_scores(const DatasetBundle& b, const ScoreOptions& opt = {}) {
  if (auto problems = validate(b); !problems.empty()) throw BundleError(std::move(problems));
  const auto centers = class_centers(b);

  std::vector<std::vector<double>> s_per(b.num_experts()), e_per(b.num_experts());
  for (std::size_t k = 0; k < b.num_experts(); ++k) {
    s_per[k] = separability_per_expert(b, centers, k);
    e_per[k] = integrity_per_expert(b, k);
  }
  auto comps = aggregate_and_normalize(s_per, e_per, certainty(b));
  auto simc = sim_combine(comps.s, comps.e, comps.c, opt.normalize_g);

  ScoreTable t;
  t.n = b.num_samples;
  t.labels = b.labels;
  t.num_classes = b.num_classes;
  t.s_raw = std::move(comps.s_raw);
  t.e_raw = std::move(comps.e_raw);
  t.c_raw = std::move(comps.c_raw);
  t.s = std::move(comps.s);
  t.e = std::move(comps.e);
  t.c = std::move(comps.c);
  t.g = std::move(simc.g);
  t.sim = std::move(simc.sim);
  t.el2n = el2n(b);
  t.prototype = prototype(b, centers);
  if (b.correctness && b.correctness->epochs >= 2) {
    t.forgetting = forgetting(b);
    t.num_epochs = b.correctness->epochs;
  }
  t.normalize_g = opt.normalize_g;
  return t;
}

}  // namespace prunekit

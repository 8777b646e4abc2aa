#pragma once

// Coreset selection from a per-sample score column.
//
// The main strategy ("sims") draws the retained set by importance sampling:
// scores are modelled by a source Normal p = N(mu0, sigma0^2) fitted to the
// data and a target Normal q = N(mu, sigma^2) whose mean slides from the hard
// tail toward the easy tail as the pruning ratio alpha grows:
//
//   t     = (sin(alpha * pi - pi / 2) + 1) / 2
//   mu    = F^{-1}(t; mu0, sigma0)
//   sigma = alpha * sigma0
//   w(x)  = q(x) / p(x)
//
// A fraction `class_ratio` of the retained budget is drawn inside each class
// first (class plans fitted on that class's scores), the rest from the whole
// dataset. Scores are always canonicalized so that high = easy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prunekit/digest.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/normal.hpp"

namespace prunekit {

inline constexpr double kQuantileClamp = 1e-6;
inline constexpr double kLogWeightClamp = 50.0;
inline constexpr double kDegenerateSigma = 1e-12;
inline constexpr double kDefaultClassRatio = 0.05;

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Strategy { Sims, TopK, Random, CenterMix };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Sims: return "sims";
    case Strategy::TopK: return "topk";
    case Strategy::Random: return "random";
    case Strategy::CenterMix: return "center-mix";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "sims") return Strategy::Sims;
  if (name == "topk") return Strategy::TopK;
  if (name == "random") return Strategy::Random;
  if (name == "center-mix" || name == "center_mix") return Strategy::CenterMix;
  throw std::invalid_argument("unknown strategy: " + std::string(name));
}

struct SourceFit {
  double mu0 = 0.0;
  double sigma0 = 0.0;
  bool degenerate = false;
};

/// Sample mean and population standard deviation.
inline SourceFit fit_source(std::span<const double> scores) {
  if (scores.size() < 2) throw SamplingError("fit_source needs at least 2 scores");
  const double n = static_cast<double>(scores.size());
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : scores) ss += (x - mean) * (x - mean);
  SourceFit fit{mean, std::sqrt(ss / n), false};
  fit.degenerate = fit.sigma0 < kDegenerateSigma;
  return fit;
}

inline void check_alpha(double alpha, bool allow_one) {
  if (!(alpha >= 0.0) || alpha > 1.0 || (!allow_one && alpha >= 1.0)) {
    throw SamplingError("pruning ratio alpha=" + std::to_string(alpha) +
                        (allow_one ? " outside [0, 1]" : " outside [0, 1)"));
  }
}

/// Target quantile as a function of the pruning ratio; monotone on [0, 1].
inline double schedule_t(double alpha) {
  check_alpha(alpha, true);
  return 0.5 * (std::sin(alpha * std::numbers::pi - std::numbers::pi / 2) + 1.0);
}

struct TargetParams {
  double t = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
};

inline TargetParams target_params(double alpha, double mu0, double sigma0) {
  TargetParams tp;
  tp.t = schedule_t(alpha);
  const double t_used = std::clamp(tp.t, kQuantileClamp, 1.0 - kQuantileClamp);
  tp.mu = normal::quantile(t_used, mu0, sigma0);
  tp.sigma = alpha * sigma0;
  return tp;
}

struct SamplingPlan {
  double alpha = 0.0;
  double mu0 = 0.0;
  double sigma0 = 0.0;
  double t = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double class_ratio = kDefaultClassRatio;
  std::uint64_t seed = 0;
  bool polarity_adjusted = false;
  bool degenerate = false;
};

/// Fits source and target Normals on (already canonicalized) scores.
/// Fewer than 2 scores or zero spread yields a degenerate (uniform) plan.
inline SamplingPlan make_plan(std::span<const double> scores, double alpha) {
  check_alpha(alpha, true);
  SamplingPlan plan;
  plan.alpha = alpha;
  plan.t = schedule_t(alpha);
  if (scores.size() < 2) {
    plan.degenerate = true;
    if (!scores.empty()) plan.mu0 = plan.mu = scores.front();
    return plan;
  }
  const auto fit = fit_source(scores);
  plan.mu0 = fit.mu0;
  plan.sigma0 = fit.sigma0;
  plan.degenerate = fit.degenerate;
  if (plan.degenerate) {
    plan.mu = plan.mu0;
    return plan;
  }
  const auto tp = target_params(alpha, fit.mu0, fit.sigma0);
  plan.mu = tp.mu;
  plan.sigma = tp.sigma;
  // alpha = 0 collapses q to a point mass; sampling is bypassed in that case.
  if (!(plan.sigma > 0.0)) plan.degenerate = true;
  return plan;
}

/// q(x) / p(x) per score, with the log ratio clamped to [-50, 50].
inline std::vector<double> importance_weights(std::span<const double> scores,
                                              const SamplingPlan& plan) {
  std::vector<double> w(scores.size(), 1.0);
  if (plan.degenerate) return w;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double lw = normal::log_pdf(scores[i], plan.mu, plan.sigma) -
                      normal::log_pdf(scores[i], plan.mu0, plan.sigma0);
    w[i] = std::exp(std::clamp(lw, -kLogWeightClamp, kLogWeightClamp));
  }
  return w;
}

/// Seeded generator. Uniform and exponential variates are derived from the
/// raw 64-bit stream so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on (0, 1].
  double uniform_open0() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  double exponential() { return -std::log(uniform_open0()); }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Draws k distinct indices with probability proportional to weight using
/// exponential keys: key_i = E_i / w_i, E_i ~ Exp(1); keep the k smallest.
/// Returns indices in ascending order.
inline std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights,
                                                                    std::size_t k, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw SamplingError("weight " + std::to_string(i) + " is negative or non-finite");
    }
    if (w > 0.0) keys.emplace_back(rng.exponential() / w, i);
  }
  if (keys.size() < k) {
    throw SamplingError("requested " + std::to_string(k) + " items but only " +
                        std::to_string(keys.size()) + " have positive weight");
  }
  if (k < keys.size()) {
    std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end());
  }
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = 0; j < k; ++j) out.push_back(keys[j].second);
  std::sort(out.begin(), out.end());
  return out;
}

/// round((1 - alpha) * n), half up.
inline std::size_t retain_count(std::size_t n, double alpha) {
  const double exact = (1.0 - alpha) * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::floor(exact + 0.5)));
}

struct PlanEcho {
  double mu0 = 0.0;
  double sigma0 = 0.0;
  double t = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
};

struct PruneManifest {
  Strategy method = Strategy::Sims;
  double alpha = 0.0;
  double class_ratio = 0.0;
  double center_ratio = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_total = 0;
  std::optional<PlanEcho> plan;
  std::string scores_digest;
  std::vector<std::uint32_t> retained_indices;

  std::size_t n_retain() const { return retained_indices.size(); }
};

namespace detail {

/// Copy of the scores with high = easy.
inline std::vector<double> canonicalize(std::span<const double> scores, Polarity polarity) {
  std::vector<double> out(scores.begin(), scores.end());
  if (polarity == Polarity::HighDifficult)
    for (double& x : out) x = -x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw SamplingError("score " + std::to_string(i) + " is not finite");
  }
  return out;
}

inline std::string digest_of(std::span<const double> canonical_scores,
                             std::span<const std::uint32_t> labels) {
  Sha256 h;
  h.update_le(canonical_scores);
  h.update_le(labels);
  return h.hex();
}

inline std::vector<std::uint32_t> to_u32(const std::vector<std::size_t>& idx) {
  std::vector<std::uint32_t> out(idx.begin(), idx.end());
  std::sort(out.begin(), out.end());
  return out;
}

/// Indices ordered hardest first (lowest canonical score), ties by index.
inline std::vector<std::size_t> hardest_first(std::span<const double> canonical) {
  std::vector<std::size_t> order(canonical.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return canonical[a] < canonical[b]; });
  return order;
}

/// Indices ordered easiest first (highest canonical score), ties by index.
inline std::vector<std::size_t> easiest_first(std::span<const double> canonical) {
  std::vector<std::size_t> order(canonical.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return canonical[a] > canonical[b]; });
  return order;
}

/// floor/ceil that absorb binary round-off in products like 0.05 * 1000.
inline std::size_t robust_floor(double x) {
  return static_cast<std::size_t>(std::max(0.0, std::floor(x + 1e-9)));
}
inline std::size_t robust_ceil(double x) {
  return static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9)));
}

}  // namespace detail

/// Splits `total` across classes proportionally to class size using the
/// largest-remainder method (ties go to the lower class id).
inline std::vector<std::size_t> apportion(std::size_t total, std::span<const std::size_t> class_sizes) {
  const std::size_t n = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
  std::vector<std::size_t> quota(class_sizes.size(), 0);
  if (n == 0 || total == 0) return quota;
  std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder, class)
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    const auto prod = static_cast<unsigned __int128>(total) * class_sizes[c];
    quota[c] = static_cast<std::size_t>(prod / n);
    rem.emplace_back(static_cast<std::size_t>(prod % n), c);
    assigned += quota[c];
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) ++quota[rem[j].second];
  return quota;
}

/// Per-class budget actually spent by the class-dependent stage of prune_sims.
inline std::vector<std::size_t> class_stage_budget(std::span<const std::uint32_t> labels,
                                                   std::size_t num_classes, double alpha,
                                                   double class_ratio) {
  std::vector<std::size_t> sizes(num_classes, 0);
  for (auto y : labels) ++sizes.at(y);
  const std::size_t n_retain = retain_count(labels.size(), alpha);
  const std::size_t total =
      std::min(n_retain, detail::robust_ceil(class_ratio * static_cast<double>(n_retain)));
  return apportion(total, sizes);
}

/// Importance-sampling selection with a class-dependent stage.
inline PruneManifest prune_sims(std::span<const double> scores, std::span<const std::uint32_t> labels,
                                std::size_t num_classes, double alpha, double class_ratio,
                                std::uint64_t seed, Polarity polarity) {
  check_alpha(alpha, false);
  if (!(class_ratio >= 0.0 && class_ratio <= 1.0)) {
    throw SamplingError("class_ratio must lie in [0, 1]");
  }
  if (scores.size() != labels.size()) throw SamplingError("scores and labels differ in length");
  const std::size_t n = scores.size();
  if (n < 2) throw SamplingError("prune_sims needs at least 2 samples");
  for (auto y : labels) {
    if (y >= num_classes) throw SamplingError("label outside [0, num_classes)");
  }

  const auto canon = detail::canonicalize(scores, polarity);
  PruneManifest m;
  m.method = Strategy::Sims;
  m.alpha = alpha;
  m.class_ratio = class_ratio;
  m.seed = seed;
  m.n_total = n;
  m.scores_digest = detail::digest_of(canon, labels);

  auto global = make_plan(canon, alpha);
  global.class_ratio = class_ratio;
  global.seed = seed;
  global.polarity_adjusted = polarity == Polarity::HighDifficult;
  m.plan = PlanEcho{global.mu0, global.sigma0, global.t, global.mu, global.sigma};

  const std::size_t n_retain = retain_count(n, alpha);
  if (alpha == 0.0 || n_retain == n) {
    m.retained_indices.resize(n);
    std::iota(m.retained_indices.begin(), m.retained_indices.end(), 0u);
    return m;
  }

  Rng rng(seed);
  std::vector<char> taken(n, 0);
  std::size_t n_taken = 0;

  const auto budget = class_stage_budget(labels, num_classes, alpha, class_ratio);
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  for (std::size_t c = 0; c < num_classes; ++c) {
    // Budget beyond the class size spills into the global stage.
    const std::size_t b = std::min(budget[c], members[c].size());
    if (b == 0) continue;
    std::vector<double> class_scores;
    class_scores.reserve(members[c].size());
    for (auto i : members[c]) class_scores.push_back(canon[i]);
    const auto plan = make_plan(class_scores, alpha);
    const auto w = importance_weights(class_scores, plan);
    for (auto j : weighted_sample_without_replacement(w, b, rng)) {
      taken[members[c][j]] = 1;
      ++n_taken;
    }
  }

  if (n_taken < n_retain) {
    auto w = importance_weights(canon, global);
    for (std::size_t i = 0; i < n; ++i)
      if (taken[i]) w[i] = 0.0;
    for (auto i : weighted_sample_without_replacement(w, n_retain - n_taken, rng)) {
      taken[i] = 1;
      ++n_taken;
    }
  }

  m.retained_indices.reserve(n_retain);
  for (std::size_t i = 0; i < n; ++i)
    if (taken[i]) m.retained_indices.push_back(static_cast<std::uint32_t>(i));
  return m;
}

/// Keeps the n_retain most difficult samples.
inline PruneManifest prune_topk(std::span<const double> scores, double alpha, Polarity polarity,
                                std::span<const std::uint32_t> labels = {}) {
  check_alpha(alpha, false);
  const auto canon = detail::canonicalize(scores, polarity);
  PruneManifest m;
  m.method = Strategy::TopK;
  m.alpha = alpha;
  m.n_total = scores.size();
  m.scores_digest = detail::digest_of(canon, labels);
  const auto order = detail::hardest_first(canon);
  const std::size_t n_retain = retain_count(scores.size(), alpha);
  m.retained_indices = detail::to_u32({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_retain)});
  return m;
}

/// Uniform random subset of size round((1 - alpha) * n).
inline PruneManifest prune_random(std::size_t n, double alpha, std::uint64_t seed) {
  check_alpha(alpha, false);
  PruneManifest m;
  m.method = Strategy::Random;
  m.alpha = alpha;
  m.seed = seed;
  m.n_total = n;
  const std::size_t n_retain = retain_count(n, alpha);
  if (n_retain == n) {
    m.retained_indices.resize(n);
    std::iota(m.retained_indices.begin(), m.retained_indices.end(), 0u);
    return m;
  }
  Rng rng(seed);
  const std::vector<double> ones(n, 1.0);
  m.retained_indices = detail::to_u32(weighted_sample_without_replacement(ones, n_retain, rng));
  return m;
}

/// floor(center_ratio * n_retain) easiest samples plus the hardest ones for
/// the rest of the budget.
inline PruneManifest prune_center_mix(std::span<const double> scores, double alpha,
                                      double center_ratio, Polarity polarity,
                                      std::span<const std::uint32_t> labels = {}) {
  check_alpha(alpha, false);
  if (!(center_ratio >= 0.0 && center_ratio <= 1.0)) {
    throw SamplingError("center_ratio must lie in [0, 1]");
  }
  const auto canon = detail::canonicalize(scores, polarity);
  PruneManifest m;
  m.method = Strategy::CenterMix;
  m.alpha = alpha;
  m.center_ratio = center_ratio;
  m.n_total = scores.size();
  m.scores_digest = detail::digest_of(canon, labels);

  const std::size_t n_retain = retain_count(scores.size(), alpha);
  const std::size_t n_center =
      std::min(n_retain, detail::robust_floor(center_ratio * static_cast<double>(n_retain)));
  std::vector<char> taken(scores.size(), 0);
  std::vector<std::size_t> picked;
  picked.reserve(n_retain);
  const auto easy = detail::easiest_first(canon);
  for (std::size_t j = 0; j < n_center; ++j) {
    taken[easy[j]] = 1;
    picked.push_back(easy[j]);
  }
  const auto hard = detail::hardest_first(canon);
  for (std::size_t j = 0; j < hard.size() && picked.size() < n_retain; ++j) {
    if (taken[hard[j]]) continue;
    taken[hard[j]] = 1;
    picked.push_back(hard[j]);
  }
  m.retained_indices = detail::to_u32(picked);
  return m;
}

struct PruneOptions {
  Strategy strategy = Strategy::Sims;
  double alpha = 0.0;
  double class_ratio = kDefaultClassRatio;
  double center_ratio = 0.1;
  std::uint64_t seed = 0;
};

/// Selects a coreset from one column of a score table. The metric fixes the
/// polarity.
inline PruneManifest prune(const ScoreTable& table, Metric metric, const PruneOptions& opt) {
  const auto& scores = table.column(metric);
  const Polarity pol = polarity_of(metric);
  switch (opt.strategy) {
    case Strategy::Sims:
      return prune_sims(scores, table.labels, table.num_classes, opt.alpha, opt.class_ratio,
                        opt.seed, pol);
    case Strategy::TopK:
      return prune_topk(scores, opt.alpha, pol, table.labels);
    case Strategy::Random: {
      auto m = prune_random(table.n, opt.alpha, opt.seed);
      m.scores_digest = detail::digest_of(detail::canonicalize(scores, pol), table.labels);
      return m;
    }
    case Strategy::CenterMix:
      return prune_center_mix(scores, opt.alpha, opt.center_ratio, pol, table.labels);
  }
  throw SamplingError("unknown strategy");
}

}  // namespace prunekit

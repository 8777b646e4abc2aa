// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 = all pass).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "prunekit/container.hpp"
#include "prunekit/evaluate.hpp"
#include "prunekit/expert.hpp"
#include "prunekit/io.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/normal.hpp"
#include "prunekit/sampling.hpp"
#include "prunekit/synth.hpp"
#include "test_util.hpp"

#ifndef PRUNEKIT_CLI_PATH
#error "PRUNEKIT_CLI_PATH must name the prunekit executable"
#endif

namespace {

using namespace prunekit;

/// Collects sub-check failures for one criterion.
class Checks {
 public:
  void near(const std::string& what, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream os;
      os.precision(17);
      os << what << ": got " << got << ", want " << want << " +- " << tol;
      fail(os.str());
    }
  }
  void truth(const std::string& what, bool ok) {
    if (!ok) fail(what);
  }
  template <typename F>
  void throws(const std::string& what, F&& f) {
    try {
      f();
    } catch (const std::exception&) {
      return;
    }
    fail(what + ": no error raised");
  }
  void fail(std::string msg) { failures_.push_back(std::move(msg)); }
  void note(std::string msg) { notes_.push_back(std::move(msg)); }

  bool ok() const { return failures_.empty(); }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

struct Criterion {
  std::string name;
  double time_limit;  // seconds; 0 = none
  std::function<void(Checks&)> body;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(shift, 1.0);
  std::vector<double> out(n);
  for (double& x : out) x = g(rng);
  return out;
}

std::vector<std::uint32_t> round_robin(std::size_t n, std::size_t c) {
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint32_t>(i % c);
  return out;
}

PruneManifest keep_all(std::size_t n) {
  PruneManifest m;
  m.method = Strategy::TopK;
  m.n_total = n;
  m.retained_indices.resize(n);
  std::iota(m.retained_indices.begin(), m.retained_indices.end(), 0u);
  return m;
}

bool manifest_is_valid(const PruneManifest& m, std::size_t n, double alpha) {
  if (m.n_retain() != retain_count(n, alpha) || m.n_total != n) return false;
  for (std::size_t i = 0; i < m.retained_indices.size(); ++i) {
    if (m.retained_indices[i] >= n) return false;
    if (i > 0 && m.retained_indices[i] <= m.retained_indices[i - 1]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

void formula_suite(Checks& ck) {
  using testing::make_bundle;
  constexpr double tol = 1e-9, cos_tol = 1e-6;
  testing::TempDir dir("acc_formula");

  // bundle container
  {
    auto b = make_bundle(2, {0, 0, 1, 1}, {{{1, 0}, {3, 0}, {0, 1}, {0, 2}}},
                         {{{0.9f, 0.1f}, {0.8f, 0.2f}, {0.3f, 0.7f}, {0.25f, 0.75f}}});
    save_bundle(b, dir / "b1");
    save_bundle(b, dir / "b2");
    const auto back = load_bundle(dir / "b1");
    ck.truth("bundle N=4 D=2 C=2 K=1 round trip",
             back == b && back.num_samples == 4 && back.embed_dim == 2 && back.num_classes == 2 &&
                 back.num_experts() == 1);
    for (const char* f : {"labels.u32", "expert_0/embeddings.f32", "expert_0/probs.f32", "meta.json"}) {
      ck.truth(std::string("byte-identical save of ") + f, slurp(dir / "b1" / f) == slurp(dir / "b2" / f));
    }
    auto bad = b;
    bad.experts[0].probs(0, 0) = 0.7f;
    bad.experts[0].probs(0, 1) = 0.2f;
    const auto problems = validate(bad);
    ck.truth("row sum 0.9 rejected",
             problems.size() == 1 && problems[0].find("row sum 0.9 outside tolerance") != std::string::npos);
    auto nan = b;
    nan.experts[0].embeddings(1, 1) = NAN;
    ck.throws("NaN embedding rejected", [&] { save_bundle(nan, dir / "nan"); });
    ck.truth("NaN bundle not written", !std::filesystem::exists(dir / "nan"));

    auto meta = slurp(dir / "b2" / "meta.json");
    const auto pos = meta.find("\"num_samples\": 4");
    meta.replace(pos, 16, "\"num_samples\": 5");
    std::ofstream(dir / "b2" / "meta.json") << meta;
    bool shape = false;
    try {
      load_bundle(dir / "b2");
    } catch (const BundleError& e) {
      for (const auto& p : e.problems()) shape = shape || p.find("shape mismatch: labels.u32") != std::string::npos;
    }
    ck.truth("meta N=5 with 4 labels is a shape mismatch", shape);

    auto rnd = testing::random_bundle(33, 5, 4, 3, 2, 3);
    save_bundle(rnd, dir / "rnd");
    ck.truth("random bundle round trip is bit-exact", load_bundle(dir / "rnd") == rnd);
  }

  // class centers
  {
    auto b = make_bundle(2, {0, 0, 1}, {{{1, 0}, {3, 0}, {5, 7}}}, {{{1, 0}, {1, 0}, {0, 1}}});
    const auto cm = class_centers(b);
    ck.near("center x", cm.center(0, 0)[0], 2.0, tol);
    ck.near("center y", cm.center(0, 0)[1], 0.0, tol);
    ck.near("single-row center x", cm.center(0, 1)[0], 5.0, tol);
    ck.near("single-row center y", cm.center(0, 1)[1], 7.0, tol);
    auto three = testing::random_bundle(20, 3, 2, 1, 8);
    three.experts.push_back(three.experts[0]);
    three.experts.push_back(three.experts[0]);
    const auto cm3 = class_centers(three);
    ck.truth("identical experts give identical centers",
             cm3.centers[0] == cm3.centers[1] && cm3.centers[1] == cm3.centers[2]);
  }

  // separability: partner rows make the class means exactly (1,0) and (0,1)
  {
    const std::vector<std::vector<float>> probs(3, {0.5f, 0.5f});
    auto aligned = make_bundle(2, {0, 0, 1}, {{{1, 0}, {1, 0}, {0, 1}}}, {probs});
    ck.near("separability aligned", separability_per_expert(aligned, class_centers(aligned), 0)[0], 1e7,
            1e7 * cos_tol);
    auto swapped = make_bundle(2, {0, 0, 1}, {{{0, 1}, {2, -1}, {0, 1}}}, {probs});
    ck.near("separability swapped", separability_per_expert(swapped, class_centers(swapped), 0)[0], 0.0,
            cos_tol);
    const float r = static_cast<float>(std::numbers::sqrt2 / 2);
    auto diag = make_bundle(2, {0, 0, 1}, {{{r, r}, {2 - r, -r}, {0, 1}}}, {probs});
    const auto cm = class_centers(diag);
    const std::vector<double> x = {r, r};
    const double dp = 1 - oracle::cosine(x, {cm.center(0, 0)[0], cm.center(0, 0)[1]});
    const double dn = 1 - oracle::cosine(x, {cm.center(0, 1)[0], cm.center(0, 1)[1]});
    ck.near("separability diagonal vs oracle", separability_per_expert(diag, cm, 0)[0], dn / (dp + 1e-7),
            cos_tol);
  }

  // integrity
  {
    auto b = make_bundle(2, {0, 1, 0}, {{{3, 4, 0, 0}, {0, 0, 0, 0}, {1, 1, 1, 1}}},
                         {{{1, 0}, {0, 1}, {1, 0}}});
    const auto e = integrity_per_expert(b, 0);
    ck.near("integrity (3,4)", e[0], 5.0, tol);
    ck.near("integrity zero", e[1], 0.0, tol);
    ck.near("integrity (1,1,1,1)", e[2], 2.0, tol);
  }

  // certainty
  {
    auto same = make_bundle(2, {0}, {{{1, 0}}, {{1, 0}}}, {{{0.3f, 0.7f}}, {{0.3f, 0.7f}}});
    ck.near("certainty identical", certainty(same)[0], 1.0, tol);
    auto opposite = make_bundle(2, {0}, {{{1, 0}}, {{1, 0}}}, {{{1, 0}}, {{0, 1}}});
    ck.near("certainty opposite", certainty(opposite)[0], 0.0, tol);
    auto single = make_bundle(2, {0}, {{{1, 0}}}, {{{0.2f, 0.8f}}});
    ck.near("certainty single expert", certainty(single)[0], 1.0, tol);
  }

  // aggregation and normalization
  {
    const std::vector<std::vector<double>> s1 = {{2, 4, 6}}, e1 = {{5, 5, 5}};
    const auto a = aggregate_and_normalize(s1, e1, {0.1, 0.2, 0.3});
    ck.near("normalize s[0]", a.s[0], 0.0, tol);
    ck.near("normalize s[1]", a.s[1], 0.5, tol);
    ck.near("normalize s[2]", a.s[2], 1.0, tol);
    ck.truth("constant e -> zeros", a.e == std::vector<double>(3, 0.0));
    const std::vector<std::vector<double>> s2 = {{1, 3}, {3, 1}}, e2 = {{1, 1}, {1, 1}};
    const auto b = aggregate_and_normalize(s2, e2, {0.5, 0.5});
    ck.near("aggregate s[0]", b.s_raw[0], 2.0, tol);
    ck.near("aggregate s[1]", b.s_raw[1], 2.0, tol);
    ck.truth("aggregate then degenerate -> zeros", b.s == std::vector<double>(2, 0.0));
  }

  // sim_combine
  {
    struct Row {
      double s, c, e, g, sim;
    };
    for (const auto& r : {Row{1, 1, 0, 1, 1}, Row{1, 0, 0, -1, 1}, Row{0, 0.5, 1, 0, 1},
                          Row{1, 1, 1, 1, std::numbers::sqrt2}}) {
      const auto out = sim_combine(std::vector<double>{r.s}, std::vector<double>{r.e}, std::vector<double>{r.c});
      std::ostringstream tag;
      tag << "sim_combine(s=" << r.s << ", c=" << r.c << ", e=" << r.e << ")";
      ck.near(tag.str() + " g", out.g[0], r.g, tol);
      ck.near(tag.str() + " sim", out.sim[0], r.sim, tol);
    }
  }

  // baselines
  {
    auto b = make_bundle(2, {0, 0}, {{{1, 0}, {0, 1}}}, {{{1, 0}, {0.5f, 0.5f}}});
    const auto v = el2n(b);
    ck.near("el2n perfect", v[0], 0.0, tol);
    ck.near("el2n uniform", v[1], std::sqrt(0.5), tol);
    const std::vector<std::vector<double>> norms = {{0.2}, {0.6}};
    ck.near("el2n expert mean", mean_over_experts(norms)[0], 0.4, tol);
    auto two = make_bundle(2, {0}, {{{1, 0}}, {{1, 0}}}, {{{0.9f, 0.1f}}, {{0.6f, 0.4f}}});
    const double n0 = std::hypot(double(0.9f) - 1.0, double(0.1f));
    const double n1 = std::hypot(double(0.6f) - 1.0, double(0.4f));
    ck.near("el2n two-expert bundle", el2n(two)[0], 0.5 * (n0 + n1), tol);

    auto p = make_bundle(2, {0, 0, 1}, {{{2, 0}, {-2, 0}, {1, 1}}}, {{{1, 0}, {1, 0}, {0, 1}}});
    const auto pv = prototype(p, class_centers(p));
    ck.near("prototype at center", pv[2], 0.0, tol);
    ck.near("prototype (2,0) vs (0,0)", pv[0], 2.0, tol);
    auto p2 = make_bundle(2, {0, 0, 1}, {{{1, 0}, {-1, 0}, {5, 5}}, {{3, 0}, {-3, 0}, {5, 5}}},
                          {{{1, 0}, {1, 0}, {0, 1}}, {{1, 0}, {1, 0}, {0, 1}}});
    ck.near("prototype expert mean", prototype(p2, class_centers(p2))[0], 2.0, tol);

    const std::vector<std::uint8_t> t1 = {1, 1, 0, 1, 0}, t2 = {1, 1, 1, 1}, t3 = {0, 0, 0, 0};
    ck.near("forgetting [1,1,0,1,0]", forgetting_events(t1), 2.0, tol);
    ck.near("forgetting never forgotten", forgetting_events(t2), 0.0, tol);
    ck.near("forgetting never learned", forgetting_events(t3), 4.0, tol);
  }

  // sampling
  {
    const std::vector<double> two = {0, 2}, flat = {3, 3, 3}, five = {1, 2, 3, 4, 5};
    ck.near("fit [0,2] mu0", fit_source(two).mu0, 1.0, tol);
    ck.near("fit [0,2] sigma0", fit_source(two).sigma0, 1.0, tol);
    ck.truth("fit constant is degenerate", fit_source(flat).degenerate && fit_source(flat).sigma0 == 0.0);
    ck.near("fit [1..5] mu0", fit_source(five).mu0, 3.0, tol);
    ck.near("fit [1..5] sigma0", fit_source(five).sigma0, std::numbers::sqrt2, tol);

    ck.near("t(0)", schedule_t(0.0), 0.0, tol);
    ck.near("t(0.5)", schedule_t(0.5), 0.5, tol);
    ck.near("t(1)", schedule_t(1.0), 1.0, tol);
    ck.near("t(0.25)", schedule_t(0.25), 0.5 * (1 - std::numbers::sqrt2 / 2), tol);

    ck.near("target mu at alpha=0.5", target_params(0.5, 0.0, 1.0).mu, 0.0, tol);
    const auto tp = target_params(0.9, 10.0, 2.0);
    ck.near("target sigma at alpha=0.9", tp.sigma, 1.8, tol);
    ck.near("target mu at alpha=0.9", tp.mu, 10.0 + 2.0 * oracle::normal_quantile_bisect(schedule_t(0.9)), tol);

    SamplingPlan same;
    same.mu0 = same.mu = 0.4;
    same.sigma0 = same.sigma = 2.0;
    for (double w : importance_weights(five, same)) ck.near("identity weight", w, 1.0, tol);
    SamplingPlan shift;
    shift.mu0 = 0, shift.sigma0 = 1, shift.mu = 1, shift.sigma = 1;
    ck.near("w(0.5) for N(0,1)->N(1,1)", importance_weights(std::vector<double>{0.5}, shift)[0], 1.0, tol);

    Rng rng(1);
    const std::vector<double> ones(5, 1.0), spike = {1, 0, 0};
    ck.truth("exhaustive draw", weighted_sample_without_replacement(ones, 5, rng) ==
                                    std::vector<std::size_t>{0, 1, 2, 3, 4});
    bool only_zero = true;
    for (int t = 0; t < 100; ++t) only_zero = only_zero && weighted_sample_without_replacement(spike, 1, rng)[0] == 0;
    ck.truth("zero weights excluded", only_zero);

    const auto s = gaussian(40, 3);
    const auto labels = round_robin(40, 4);
    ck.truth("sims alpha=0 keeps all", prune_sims(s, labels, 4, 0.0, 0.05, 1, Polarity::HighEasy).n_retain() == 40);
    const auto r0 = prune_sims(s, labels, 4, 0.6, 0.0, 5, Polarity::HighEasy);
    Rng direct(5);
    const auto w = importance_weights(s, make_plan(s, 0.6));
    ck.truth("sims r=0 is pure global sampling",
             r0.retained_indices == detail::to_u32(weighted_sample_without_replacement(w, 16, direct)));

    const std::vector<double> tri = {0.1, 0.9, 0.5};
    ck.truth("topk SIM keeps lowest",
             prune_topk(tri, 2.0 / 3.0, Polarity::HighEasy).retained_indices == std::vector<std::uint32_t>{0});
    ck.truth("topk EL2N keeps highest",
             prune_topk(tri, 2.0 / 3.0, Polarity::HighDifficult).retained_indices == std::vector<std::uint32_t>{1});
    ck.truth("topk tie-break", prune_topk(std::vector<double>{0.5, 0.5}, 0.5, Polarity::HighEasy).retained_indices ==
                                   std::vector<std::uint32_t>{0});
    ck.truth("random alpha=0 keeps all", prune_random(10, 0.0, 3).n_retain() == 10);
    ck.truth("random is seeded", prune_random(50, 0.4, 9).retained_indices == prune_random(50, 0.4, 9).retained_indices);
    ck.truth("center-mix r=0 equals topk", prune_center_mix(s, 0.5, 0.0, Polarity::HighEasy).retained_indices ==
                                               prune_topk(s, 0.5, Polarity::HighEasy).retained_indices);
    const auto easy = detail::easiest_first(s);
    ck.truth("center-mix r=1 keeps easiest", prune_center_mix(s, 0.5, 1.0, Polarity::HighEasy).retained_indices ==
                                                 detail::to_u32({easy.begin(), easy.begin() + 20}));
    ck.truth("center-mix prototype [0,1,2,3]",
             prune_center_mix(std::vector<double>{0, 1, 2, 3}, 0.5, 0.5, Polarity::HighDifficult).retained_indices ==
                 std::vector<std::uint32_t>{0, 3});
  }

  // synthetic harness
  {
    synth::SynthConfig c;
    c.num_classes = 2;
    c.samples_per_class = 30;
    c.test_per_class = 20;
    c.feature_dim = 3;
    c.label_noise_ratio = 0.0;
    const auto d = synth::generate_synthetic(c);
    ck.truth("no label noise -> empty mask",
             std::all_of(d.noise_mask.begin(), d.noise_mask.end(), [](auto v) { return v == 0; }));
    ck.truth("synthetic data is seeded", synth::generate_synthetic(c) == d);
    ExpertConfig ec;
    ec.hidden_dim = 4;
    ec.epochs = 2;
    const auto a1 = train_expert(d.train, ec);
    const auto a2 = train_expert(d.train, ec);
    ck.truth("expert training is seeded", a1.dump == a2.dump);
    const auto one = build_bundle(d.train, expert_configs(ec, 1));
    ck.truth("K=1 bundle validates", one.num_experts() == 1 && validate(one).empty());
    const auto ident = build_bundle(d.train, std::vector<ExpertConfig>(3, ec));
    bool all_one = true;
    for (double v : certainty(ident)) all_one = all_one && std::abs(v - 1.0) <= tol;
    ck.truth("identical experts -> c = 1", all_one);
    EvalConfig e;
    e.epochs = 20;
    const auto full = evaluate(d, keep_all(d.train.size()), e);
    LogisticRegression lr(d.train.dim(), 2);
    std::vector<std::size_t> idx(d.train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t t = 0; t < e.epochs; ++t) lr.step(d.train.features, d.train.labels, idx, e.learning_rate);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.test.size(); ++i) ok += lr.predict(d.test.features.row(i)) == d.test.labels[i];
    ck.near("full manifest equals full-data baseline", full.accuracy,
            static_cast<double>(ok) / static_cast<double>(d.test.size()), tol);
  }

  // CLI arithmetic contracts (in-process on tiny inputs)
  {
    ScoreTable t;
    t.n = 120;
    t.num_classes = 3;
    t.labels = round_robin(120, 3);
    t.sim = gaussian(120, 4);
    t.el2n = t.prototype = t.sim;
    PruneOptions o;
    o.alpha = 0.7;
    o.class_ratio = 0.05;
    o.seed = 42;
    ck.truth("prune alpha=0.7 keeps round(0.3 N)", prune(t, Metric::Sim, o).n_retain() == 36);
  }
}

void jsd_suite(Checks& ck) {
  const std::size_t Ks[] = {1, 2, 5, 10};
  const std::size_t Cs[] = {2, 10, 100};
  const std::size_t per_combo = 10000 / 12 + 1;  // 12 combos, >= 10,000 matrices
  std::size_t matrices = 0, out_of_range = 0, identical_off = 0;
  double worst_identical = 0.0;
  std::mt19937_64 rng(2024);
  for (std::size_t K : Ks) {
    for (std::size_t C : Cs) {
      DatasetBundle b;
      b.num_samples = per_combo;
      b.num_classes = C;
      b.embed_dim = 1;
      b.labels.assign(per_combo, 0);
      DatasetBundle same = b;
      for (std::size_t k = 0; k < K; ++k) {
        ExpertDump ex{Matrix(per_combo, 1), Matrix(per_combo, C)};
        b.experts.push_back(ex);
        same.experts.push_back(ex);
      }
      for (std::size_t i = 0; i < per_combo; ++i) {
        // Mix flat, peaked and sparse rows via the Dirichlet concentration.
        const double conc = std::pow(10.0, std::uniform_real_distribution<double>(-2, 1)(rng));
        std::gamma_distribution<double> gam(conc, 1.0);
        std::vector<double> shared(C);
        for (std::size_t k = 0; k < K; ++k) {
          std::vector<double> g(C);
          double sum = 0.0;
          for (auto& v : g) sum += (v = gam(rng));
          if (sum == 0.0) g[i % C] = sum = 1.0;
          for (std::size_t c = 0; c < C; ++c) b.experts[k].probs(i, c) = static_cast<float>(g[c] / sum);
          if (k == 0) shared = g, std::transform(shared.begin(), shared.end(), shared.begin(), [&](double v) { return v / sum; });
        }
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t c = 0; c < C; ++c) same.experts[k].probs(i, c) = static_cast<float>(shared[c]);
      }
      for (double c : certainty(b)) {
        ++matrices;
        if (!(c >= 0.0 && c <= 1.0)) ++out_of_range;
      }
      for (double c : certainty(same)) {
        worst_identical = std::max(worst_identical, std::abs(c - 1.0));
        if (!(std::abs(c - 1.0) <= 1e-9)) ++identical_off;
      }
    }
  }
  ck.truth("at least 10,000 matrices", matrices >= 10000);
  ck.truth(std::to_string(out_of_range) + " certainty values outside [0,1]", out_of_range == 0);
  ck.truth(std::to_string(identical_off) + " identical-expert values off 1 by > 1e-9", identical_off == 0);
  std::ostringstream os;
  os << matrices << " random + " << matrices << " identical-expert matrices, max |c-1| identical = "
     << worst_identical;
  ck.note(os.str());
}

void schedule_suite(Checks& ck) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (schedule_t(a) > schedule_t(b)) ++violations;
  }
  ck.truth(std::to_string(violations) + " monotonicity violations", violations == 0);
  ck.truth("t(0) == 0 exactly", schedule_t(0.0) == 0.0);
  ck.truth("t(0.5) == 0.5 exactly", schedule_t(0.5) == 0.5);
  ck.truth("t(1) == 1 exactly", schedule_t(1.0) == 1.0);
  ck.near("Phi^-1(0.841345)", normal::standard_quantile(0.841345), 1.0, 1e-6);
  ck.near("Phi^-1(0.977250)", normal::standard_quantile(0.977250), 2.0, 1e-6);

  // Precision of the inverse CDF itself, at full-precision probabilities.
  double worst = 0.0;
  for (double z : {-5.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 5.0}) {
    const double p = z <= 0 ? normal::cdf(z) : 1.0 - normal::cdf(-z);
    worst = std::max(worst, std::abs(normal::standard_quantile(z <= 0 ? p : 1.0 - normal::cdf(-z)) - z));
  }
  for (int i = 0; i < 10000; ++i) {
    const double p = std::clamp(u(rng), 1e-12, 1 - 1e-12);
    worst = std::max(worst, std::abs(normal::standard_quantile(p) - oracle::normal_quantile_bisect(p)));
  }
  std::ostringstream os;
  os.precision(12);
  os << "inverse CDF vs bisection oracle: max abs error " << worst
     << "; tabulated probabilities are rounded to 6 digits, exact Phi^-1 gives "
     << normal::standard_quantile(0.841345) << " and " << normal::standard_quantile(0.977250);
  ck.note(os.str());
  ck.truth("inverse CDF absolute error < 1e-9 at full precision", worst < 1e-9);
}

void sampler_suite(Checks& ck) {
  const std::size_t trials = 200000;
  {
    const std::vector<double> w = {2, 1, 1};
    Rng rng(7);
    std::vector<double> freq(3, 0.0);
    for (std::size_t t = 0; t < trials; ++t) freq[weighted_sample_without_replacement(w, 1, rng)[0]] += 1.0 / trials;
    const auto mc = oracle::inclusion_monte_carlo(w, 1, trials, 11);
    const double want[] = {0.5, 0.25, 0.25};
    for (std::size_t i = 0; i < 3; ++i) {
      ck.near("[2,1,1] freq " + std::to_string(i) + " vs target", freq[i], want[i], 0.01);
      ck.near("[2,1,1] freq " + std::to_string(i) + " vs Monte-Carlo oracle", freq[i], mc[i], 0.01);
    }
  }
  {
    const std::vector<double> w = {4, 3, 2, 1};
    Rng rng(8);
    std::vector<double> freq(4, 0.0);
    for (std::size_t t = 0; t < trials; ++t)
      for (auto i : weighted_sample_without_replacement(w, 2, rng)) freq[i] += 1.0 / trials;
    const auto exact = oracle::inclusion_probabilities(w, 2);
    const auto mc = oracle::inclusion_monte_carlo(w, 2, trials, 12);
    for (std::size_t i = 0; i < 4; ++i) {
      ck.near("[4,3,2,1] k=2 inclusion " + std::to_string(i) + " vs exact", freq[i], exact[i], 0.01);
      ck.near("[4,3,2,1] k=2 inclusion " + std::to_string(i) + " vs Monte-Carlo oracle", freq[i], mc[i], 0.01);
    }
  }
}

void mean_shift_suite(Checks& ck) {
  const auto s = gaussian(10000, 2025);
  const auto labels = round_robin(s.size(), 10);
  const auto m = prune_sims(s, labels, 10, 0.9, 0.0, 7, Polarity::HighEasy);
  double mean = 0.0;
  for (auto i : m.retained_indices) mean += s[i];
  mean /= static_cast<double>(m.n_retain());
  const double target = oracle::normal_quantile_bisect(0.5 * (std::sin(0.4 * std::numbers::pi) + 1.0));
  ck.truth("n_retain == 1000", m.n_retain() == 1000);
  ck.near("retained mean vs Phi^-1(t(0.9))", mean, target, 0.1);
  std::size_t above = 0;
  for (double x : s) above += x > target;
  std::ostringstream os;
  os << "retained mean " << mean << ", target " << target << "; only " << above
     << " of 10000 source scores exceed the target mean while 1000 are drawn without replacement";
  ck.note(os.str());
}

void class_coverage_suite(Checks& ck) {
  const std::size_t C = 10, per = 500, n = C * per;
  std::vector<double> scores(n);
  const auto labels = round_robin(n, C);
  const auto noise = gaussian(n, 31);
  for (std::size_t i = 0; i < n; ++i) scores[i] = 0.3 * static_cast<double>(labels[i]) + noise[i];
  for (double r : {1.0, 0.05}) {
    const auto m = prune_sims(scores, labels, C, 0.9, r, 17, Polarity::HighEasy);
    const auto quota = class_stage_budget(labels, C, 0.9, r);
    std::vector<std::size_t> got(C, 0);
    for (auto i : m.retained_indices) ++got[labels[i]];
    for (std::size_t c = 0; c < C; ++c) {
      const std::string tag = "r=" + std::to_string(r).substr(0, 4) + " class " + std::to_string(c);
      if (r == 1.0) {
        ck.truth(tag + " retains its quota " + std::to_string(quota[c]) + " (got " + std::to_string(got[c]) + ")",
                 got[c] == quota[c]);
      } else if (quota[c] >= 1) {
        ck.truth(tag + " retains >= 1", got[c] >= 1);
      }
    }
    ck.truth("n_retain exact at r=" + std::to_string(r), m.n_retain() == retain_count(n, 0.9));
  }
}

struct TrendSeed {
  double sims_acc, topk_acc, sims_noisy, random_noisy;
};

TrendSeed trend_one_seed(std::uint64_t seed) {
  synth::SynthConfig sc;
  sc.num_classes = 10;
  sc.samples_per_class = 500;
  sc.label_noise_ratio = 0.1;
  sc.seed = seed;
  const auto data = synth::generate_synthetic(sc);
  ExpertConfig ec;
  ec.seed = 100 * seed;
  const auto bundle = build_bundle(data.train, expert_configs(ec, 5));
  const auto table = compute_scores(bundle);
  EvalConfig ev;
  ev.seed = seed;

  auto run = [&](Strategy s, double alpha) {
    PruneOptions o;
    o.strategy = s;
    o.alpha = alpha;
    o.seed = seed;
    return evaluate(data, prune(table, Metric::Sim, o), ev);
  };
  TrendSeed out{};
  out.sims_acc = run(Strategy::Sims, 0.9).accuracy;
  out.topk_acc = run(Strategy::TopK, 0.9).accuracy;
  out.sims_noisy = run(Strategy::Sims, 0.7).noisy_fraction;
  out.random_noisy = run(Strategy::Random, 0.7).noisy_fraction;
  return out;
}

void trend_suite(Checks& ck) {
  std::vector<TrendSeed> seeds(3);
  for (std::uint64_t s = 0; s < 3; ++s) seeds[s] = trend_one_seed(s);
  double sims = 0.0, topk = 0.0;
  std::size_t cleaner = 0;
  std::ostringstream os;
  os.precision(4);
  for (std::size_t s = 0; s < 3; ++s) {
    sims += seeds[s].sims_acc / 3.0;
    topk += seeds[s].topk_acc / 3.0;
    cleaner += seeds[s].sims_noisy <= seeds[s].random_noisy;
    os << "seed " << s << ": acc@0.9 sims " << seeds[s].sims_acc << " topk " << seeds[s].topk_acc
       << ", noisy@0.7 sims " << seeds[s].sims_noisy << " random " << seeds[s].random_noisy << "; ";
  }
  os << "mean acc@0.9 sims " << sims << " topk " << topk;
  ck.note(os.str());
  ck.truth("mean accuracy at alpha=0.9: SIMS >= SIM top-k", sims >= topk);
  ck.truth("SIMS noisy retention <= random on >= 2 of 3 seeds (" + std::to_string(cleaner) + ")", cleaner >= 2);
}

void forgetting_pipeline_suite(Checks& ck) {
  synth::SynthConfig sc;
  sc.num_classes = 5;
  sc.samples_per_class = 200;
  sc.seed = 4;
  const auto data = synth::generate_synthetic(sc);
  ExpertConfig ec;
  ec.epochs = 12;
  const auto bundle = build_bundle(data.train, expert_configs(ec, 3));
  const auto table = compute_scores(bundle);
  ck.truth("forgetting column present", table.forgetting.has_value());
  if (!table.forgetting) return;
  for (double v : *table.forgetting) {
    if (!(v >= 0.0 && v <= static_cast<double>(ec.epochs))) {
      ck.fail("forgetting score outside [0, T]");
      break;
    }
  }
  testing::TempDir dir("acc_forget");
  for (double alpha : {0.3, 0.5, 0.7, 0.9}) {
    PruneOptions o;
    o.strategy = Strategy::Sims;
    o.alpha = alpha;
    o.seed = 5;
    const auto m = prune(table, Metric::Forgetting, o);
    const auto path = dir / ("m" + std::to_string(alpha) + ".json");
    save_manifest(m, path);
    const auto back = load_manifest(path);
    const std::string tag = "alpha=" + std::to_string(alpha).substr(0, 3);
    ck.truth(tag + " manifest valid with exact n_retain", manifest_is_valid(back, table.n, alpha));
    ck.truth(tag + " manifest round trip", back.retained_indices == m.retained_indices);
    const auto r = evaluate(data, back, EvalConfig{});
    ck.truth(tag + " downstream report well-formed", r.n_retain == m.n_retain() && r.accuracy >= 0.0 && r.accuracy <= 1.0);
  }
}

void gradient_suite(Checks& ck) {
  synth::SynthConfig sc;
  sc.num_classes = 4;
  sc.samples_per_class = 20;
  sc.feature_dim = 6;
  sc.seed = 8;
  const auto data = synth::generate_synthetic(sc);
  Mlp net(data.train.dim(), 10, data.train.num_classes);
  Rng rng(21);
  net.init(rng);
  const std::vector<std::size_t> batch = {3, 14, 27, 51, 70};
  std::vector<double> grad(net.params().size()), scratch(grad.size());
  net.loss_and_gradient(data.train.features, data.train.labels, batch, grad);
  auto params = net.params();
  double worst = 0.0;
  for (int j = 0; j < 20; ++j) {
    const std::size_t idx = rng.next() % params.size();
    const double h = 1e-5, keep = params[idx];
    params[idx] = keep + h;
    const double up = net.loss_and_gradient(data.train.features, data.train.labels, batch, scratch);
    params[idx] = keep - h;
    const double down = net.loss_and_gradient(data.train.features, data.train.labels, batch, scratch);
    params[idx] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = std::abs(grad[idx] - numeric) / std::max({std::abs(grad[idx]), std::abs(numeric), 1e-12});
    worst = std::max(worst, rel);
    ck.truth("param " + std::to_string(idx) + " relative error " + std::to_string(rel), rel <= 1e-4);
  }
  std::ostringstream os;
  os << "max relative error " << worst;
  ck.note(os.str());
}

int sh(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

void compare_trees(Checks& ck, const std::filesystem::path& a, const std::filesystem::path& b,
                   const std::string& label) {
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a);
    ++files;
    ck.truth(label + ": " + rel.string() + " byte-identical", slurp(entry.path()) == slurp(b / rel));
  }
  ck.truth(label + ": produced artifacts", files > 0);
}

void cli_determinism_suite(Checks& ck) {
  const std::string exe = PRUNEKIT_CLI_PATH;
  testing::TempDir dir("acc_cli");
  const auto q = [](const std::filesystem::path& p) { return "'" + p.string() + "'"; };
  // Each command runs twice on the same inputs into run_a/ and run_b/;
  // downstream commands consume run_a's artifacts.
  const auto A = dir / "run_a", B = dir / "run_b";
  std::filesystem::create_directories(A);
  std::filesystem::create_directories(B);

  struct Step {
    std::string label;
    std::function<std::string(const std::filesystem::path&)> command;
  };
  const std::vector<Step> steps = {
      {"synth",
       [&](const auto& out) {
         return exe + " synth --classes 4 --samples-per-class 60 --test-per-class 30 --dim 6 --label-noise 0.1 --blur 0.1 --seed 3 --out " +
                q(out / "data");
       }},
      {"train-experts",
       [&](const auto& out) {
         return exe + " train-experts --data " + q(A / "data") + " --experts 3 --hidden 16 --epochs 5 --out " +
                q(out / "bundle");
       }},
      {"validate",
       [&](const auto& out) { return exe + " validate --bundle " + q(A / "bundle") + " > " + q(out / "validate.txt"); }},
      {"score",
       [&](const auto& out) {
         return exe + " score --bundle " + q(A / "bundle") + " --metric sim --out " + q(out / "scores.json") +
                " --csv " + q(out / "scores.csv") + " --f32 " + q(out / "scores.f32");
       }},
      {"prune sims",
       [&](const auto& out) {
         return exe + " prune --scores " + q(A / "scores.json") +
                " --alpha 0.7 --strategy sims --class-ratio 0.05 --seed 42 --indices-blob --out " + q(out / "m_sims.json");
       }},
      {"prune topk",
       [&](const auto& out) {
         return exe + " prune --scores " + q(A / "scores.json") + " --metric el2n --alpha 0.5 --strategy topk --out " +
                q(out / "m_topk.json");
       }},
      {"prune random",
       [&](const auto& out) {
         return exe + " prune --scores " + q(A / "scores.json") + " --alpha 0.5 --strategy random --seed 9 --out " +
                q(out / "m_random.json");
       }},
      {"prune center-mix",
       [&](const auto& out) {
         return exe + " prune --scores " + q(A / "scores.json") +
                " --metric prototype --alpha 0.5 --strategy center-mix --out " + q(out / "m_cm.json");
       }},
      {"prune forgetting",
       [&](const auto& out) {
         return exe + " prune --scores " + q(A / "scores.json") + " --metric forgetting --alpha 0.4 --seed 1 --out " +
                q(out / "m_forget.json");
       }},
      {"eval",
       [&](const auto& out) {
         return exe + " eval --data " + q(A / "data") + " --manifest " + q(A / "m_sims.json") + " --epochs 40 --out " +
                q(out / "report.json");
       }},
      {"sweep",
       [&](const auto& out) {
         return exe + " sweep --bundle " + q(A / "bundle") +
                " --alphas 0.2:0.8:0.3 --methods sims,topk,random,center-mix --seeds 2 --eval-epochs 20 --out " +
                q(out / "sweep.csv");
       }},
  };
  for (const auto& step : steps) {
    std::vector<std::filesystem::path> existing;
    for (const auto& e : std::filesystem::directory_iterator(A)) existing.push_back(e.path().filename());
    const int ra = sh(step.command(A));
    const int rb = sh(step.command(B));
    ck.truth(step.label + ": exit 0 on both runs", ra == 0 && rb == 0);
    for (const auto& e : std::filesystem::directory_iterator(A)) {
      const auto name = e.path().filename();
      if (std::find(existing.begin(), existing.end(), name) != existing.end()) continue;
      if (e.is_directory()) {
        compare_trees(ck, A / name, B / name, step.label);
      } else {
        ck.truth(step.label + ": " + name.string() + " byte-identical", slurp(A / name) == slurp(B / name));
      }
    }
  }
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"Formula suite (all closed-form examples, 1e-9 / 1e-6 cosine)", 1.0, formula_suite},
      {"JSD/certainty property suite (10,000 matrices)", 10.0, jsd_suite},
      {"Schedule/quantile suite", 1.0, schedule_suite},
      {"Sampler proportionality", 30.0, sampler_suite},
      {"Mean-shift concentration", 5.0, mean_shift_suite},
      {"Class coverage", 0.0, class_coverage_suite},
      {"Trend reproduction (SIMS vs SIM top-k, noisy retention vs random)", 120.0, trend_suite},
      {"Forgetting + sampling pipeline", 0.0, forgetting_pipeline_suite},
      {"Gradient check (20 coordinates, 1e-4 relative)", 0.0, gradient_suite},
      {"Determinism (CLI reruns byte-identical)", 0.0, cli_determinism_suite},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Checks ck;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(ck);
    } catch (const std::exception& e) {
      ck.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit > 0.0 && secs >= c.time_limit) {
      ck.fail("runtime " + std::to_string(secs) + " s exceeds " + std::to_string(c.time_limit) + " s");
    }
    std::printf("[%s] %s (%.3f s)\n", ck.ok() ? "PASS" : "FAIL", c.name.c_str(), secs);
    for (const auto& f : ck.failures()) std::printf("       fail: %s\n", f.c_str());
    for (const auto& n : ck.notes()) std::printf("       info: %s\n", n.c_str());
    failed += ck.ok() ? 0 : 1;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  std::fflush(stdout);
  return failed;
}

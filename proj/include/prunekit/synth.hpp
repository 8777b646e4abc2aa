#pragma once

// Synthetic Gaussian class mixtures for desk-scale pruning experiments.
//
// Class centers sit on a sphere of radius `spread`; each sample is its center
// plus isotropic noise. A fraction of training labels is flipped to a wrong
// class (recorded in noise_mask) and a fraction of training samples is pulled
// 80% of the way toward the global mean (blur_mask) to emulate low-quality
// inputs. The test split is clean.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunekit/container.hpp"

namespace prunekit::synth {

inline constexpr double kBlurFactor = 0.8;

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 500;
  std::vector<std::size_t> class_counts;  // overrides samples_per_class when set
  std::size_t test_per_class = 200;
  std::size_t feature_dim = 16;
  double spread = 3.0;
  double within_std = 1.0;
  double label_noise_ratio = 0.1;
  double blur_ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t count_for(std::size_t c) const {
    return class_counts.empty() ? samples_per_class : class_counts.at(c);
  }
};

inline void validate(const SynthConfig& c) {
  if (c.num_classes < 2) throw std::invalid_argument("synthetic data needs >= 2 classes");
  if (c.feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (!c.class_counts.empty() && c.class_counts.size() != c.num_classes) {
    throw std::invalid_argument("class_counts must have one entry per class");
  }
  if (!(c.label_noise_ratio >= 0.0 && c.label_noise_ratio <= 1.0) ||
      !(c.blur_ratio >= 0.0 && c.blur_ratio <= 1.0)) {
    throw std::invalid_argument("label_noise_ratio and blur_ratio must lie in [0, 1]");
  }
  if (!(c.spread >= 0.0) || !(c.within_std >= 0.0)) {
    throw std::invalid_argument("spread and within_std must be non-negative");
  }
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"num_classes", c.num_classes},
          {"samples_per_class", c.samples_per_class},
          {"class_counts", c.class_counts},
          {"test_per_class", c.test_per_class},
          {"feature_dim", c.feature_dim},
          {"spread", c.spread},
          {"within_std", c.within_std},
          {"label_noise_ratio", c.label_noise_ratio},
          {"blur_ratio", c.blur_ratio},
          {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.samples_per_class = j.at("samples_per_class").get<std::size_t>();
  c.class_counts = j.value("class_counts", std::vector<std::size_t>{});
  c.test_per_class = j.at("test_per_class").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.spread = j.at("spread").get<double>();
  c.within_std = j.at("within_std").get<double>();
  c.label_noise_ratio = j.at("label_noise_ratio").get<double>();
  c.blur_ratio = j.at("blur_ratio").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

/// Features (row-major float32) with integer labels.
struct LabeledSet {
  Matrix features;
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }

  friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

struct SyntheticData {
  SynthConfig config;
  LabeledSet train;
  LabeledSet test;
  std::vector<std::uint32_t> clean_labels;  // training labels before flipping
  std::vector<std::uint8_t> noise_mask;     // 1 = training label was flipped
  std::vector<std::uint8_t> blur_mask;      // 1 = features pulled toward the mean

  friend bool operator==(const SyntheticData& a, const SyntheticData& b) {
    return a.train == b.train && a.test == b.test && a.clean_labels == b.clean_labels &&
           a.noise_mask == b.noise_mask && a.blur_mask == b.blur_mask;
  }
};

namespace detail {

/// First k entries of a seeded partial Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k && i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(std::min(k, n));
  return idx;
}

inline std::size_t round_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SynthConfig& config) {
  validate(config);
  const std::size_t C = config.num_classes;
  const std::size_t D = config.feature_dim;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> centers(C * D);
  for (std::size_t c = 0; c < C; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        centers[c * D + d] = gauss(rng);
        norm += centers[c * D + d] * centers[c * D + d];
      }
    } while (norm == 0.0);
    const double scale = config.spread / std::sqrt(norm);
    for (std::size_t d = 0; d < D; ++d) centers[c * D + d] *= scale;
  }

  auto draw = [&](auto count_of) {
    LabeledSet set;
    set.num_classes = C;
    std::size_t total = 0;
    for (std::size_t c = 0; c < C; ++c) total += count_of(c);
    set.features = Matrix(total, D);
    set.labels.reserve(total);
    std::vector<double> x(D);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < count_of(c); ++j) {
        auto row = set.features.row(set.labels.size());
        for (std::size_t d = 0; d < D; ++d) {
          row[d] = static_cast<float>(centers[c * D + d] + config.within_std * gauss(rng));
        }
        set.labels.push_back(static_cast<std::uint32_t>(c));
      }
    }
    return set;
  };

  SyntheticData data;
  data.config = config;
  data.train = draw([&](std::size_t c) { return config.count_for(c); });
  data.test = draw([&](std::size_t) { return config.test_per_class; });

  const std::size_t N = data.train.size();
  data.clean_labels = data.train.labels;
  data.noise_mask.assign(N, 0);
  data.blur_mask.assign(N, 0);

  for (auto i : detail::choose(N, detail::round_count(config.label_noise_ratio, N), rng)) {
    std::uniform_int_distribution<std::uint32_t> shift(1, static_cast<std::uint32_t>(C - 1));
    data.train.labels[i] = (data.train.labels[i] + shift(rng)) % static_cast<std::uint32_t>(C);
    data.noise_mask[i] = 1;
  }

  std::vector<double> mean(D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) mean[d] += data.train.features(i, d);
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(N, 1));
  for (auto i : detail::choose(N, detail::round_count(config.blur_ratio, N), rng)) {
    auto row = data.train.features.row(i);
    for (std::size_t d = 0; d < D; ++d) {
      row[d] = static_cast<float>(row[d] + kBlurFactor * (mean[d] - row[d]));
    }
    data.blur_mask[i] = 1;
  }
  return data;
}

// Directory layout written by save_synthetic:
//   data.json             generator config + dims
//   train_features.f32    N x D
//   train_labels.u32      N (possibly noisy)
//   clean_labels.u32      N
//   noise_mask.u8, blur_mask.u8
//   test_features.f32, test_labels.u32

inline void save_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nlohmann::json meta = {{"format_version", 1},
                               {"config", to_json(data.config)},
                               {"num_train", data.train.size()},
                               {"num_test", data.test.size()},
                               {"feature_dim", data.train.dim()},
                               {"num_classes", data.train.num_classes}};
  {
    std::ofstream out(dir / "data.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "data.json").string());
    out << meta.dump(2) << "\n";
  }
  using prunekit::detail::write_le_blob;
  write_le_blob<float>(dir / "train_features.f32", data.train.features.data);
  write_le_blob<std::uint32_t>(dir / "train_labels.u32", data.train.labels);
  write_le_blob<std::uint32_t>(dir / "clean_labels.u32", data.clean_labels);
  write_le_blob<std::uint8_t>(dir / "noise_mask.u8", data.noise_mask);
  write_le_blob<std::uint8_t>(dir / "blur_mask.u8", data.blur_mask);
  write_le_blob<float>(dir / "test_features.f32", data.test.features.data);
  write_le_blob<std::uint32_t>(dir / "test_labels.u32", data.test.labels);
}

inline SyntheticData load_synthetic(const std::filesystem::path& dir) {
  std::ifstream in(dir / "data.json");
  if (!in) throw std::runtime_error("missing file: " + (dir / "data.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed data.json: ") + e.what());
  }
  SyntheticData data;
  data.config = synth_config_from_json(meta.at("config"));
  const auto n_train = meta.at("num_train").get<std::size_t>();
  const auto n_test = meta.at("num_test").get<std::size_t>();
  const auto D = meta.at("feature_dim").get<std::size_t>();
  const auto C = meta.at("num_classes").get<std::size_t>();

  std::vector<std::string> problems;
  using prunekit::detail::read_le_blob;
  auto train_x = read_le_blob<float>(dir / "train_features.f32", n_train * D, problems);
  auto train_y = read_le_blob<std::uint32_t>(dir / "train_labels.u32", n_train, problems);
  auto clean_y = read_le_blob<std::uint32_t>(dir / "clean_labels.u32", n_train, problems);
  auto noise = read_le_blob<std::uint8_t>(dir / "noise_mask.u8", n_train, problems);
  auto blur = read_le_blob<std::uint8_t>(dir / "blur_mask.u8", n_train, problems);
  auto test_x = read_le_blob<float>(dir / "test_features.f32", n_test * D, problems);
  auto test_y = read_le_blob<std::uint32_t>(dir / "test_labels.u32", n_test, problems);
  if (!problems.empty()) throw BundleError(std::move(problems));

  data.train.features = Matrix(n_train, D);
  data.train.features.data = std::move(*train_x);
  data.train.labels = std::move(*train_y);
  data.train.num_classes = C;
  data.test.features = Matrix(n_test, D);
  data.test.features.data = std::move(*test_x);
  data.test.labels = std::move(*test_y);
  data.test.num_classes = C;
  data.clean_labels = std::move(*clean_y);
  data.noise_mask = std::move(*noise);
  data.blur_mask = std::move(*blur);
  for (auto y : data.train.labels)
    if (y >= C) throw std::runtime_error("synthetic data: train label out of range");
  for (auto y : data.test.labels)
    if (y >= C) throw std::runtime_error("synthetic data: test label out of range");
  return data;
}

}  // namespace prunekit::synth

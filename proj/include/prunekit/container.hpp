#pragma once

// On-disk dataset bundle: per-expert embeddings and softmax outputs plus
// labels and an optional per-epoch correctness log.
//
// Layout of a bundle directory (all multi-byte values little-endian):
//
//   meta.json                   format_version, dims, has_correctness,
//                               num_epochs, source_id
//   labels.u32                  N x uint32
//   expert_<k>/embeddings.f32   N x D float32, row-major
//   expert_<k>/probs.f32        N x C float32, row-major
//   correctness.u8              T x N uint8, row = epoch (optional)

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace prunekit {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr double kProbRowTolerance = 1e-4;

/// Dense row-major float32 matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  float& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  float operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ExpertDump {
  Matrix embeddings;  // N x D
  Matrix probs;       // N x C

  friend bool operator==(const ExpertDump&, const ExpertDump&) = default;
};

/// Binary correct/incorrect flags, one row per training epoch.
struct CorrectnessLog {
  std::size_t epochs = 0;
  std::size_t samples = 0;
  std::vector<std::uint8_t> data;  // epochs x samples

  std::uint8_t at(std::size_t epoch, std::size_t sample) const {
    return data[epoch * samples + sample];
  }

  friend bool operator==(const CorrectnessLog&, const CorrectnessLog&) = default;
};

struct DatasetBundle {
  std::size_t num_samples = 0;
  std::size_t embed_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint32_t> labels;
  std::vector<ExpertDump> experts;
  std::optional<CorrectnessLog> correctness;
  std::string source_id;

  std::size_t num_experts() const { return experts.size(); }

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

/// Raised when a bundle (in memory or on disk) violates the format. Carries
/// every problem found, not just the first.
class BundleError : public std::runtime_error {
 public:
  explicit BundleError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "invalid bundle:";
    for (const auto& p : problems) out += "\n  - " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

namespace detail {

inline std::string fmt_g(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

template <typename T>
void write_le_blob(const std::filesystem::path& path, std::span<const T> values) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t b = sizeof(T); b-- > 0;) out.put(static_cast<char>(bytes[b]));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Reads a whole blob; returns nullopt and records a problem when the file is
/// missing or its size disagrees with `expected_count`.
template <typename T>
std::optional<std::vector<T>> read_le_blob(const std::filesystem::path& path,
                                           std::size_t expected_count,
                                           std::vector<std::string>& problems) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    problems.push_back("missing file: " + path.string());
    return std::nullopt;
  }
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) {
    problems.push_back("cannot stat: " + path.string());
    return std::nullopt;
  }
  if (bytes != expected_count * sizeof(T)) {
    problems.push_back("shape mismatch: " + path.filename().string() + " has " +
                       std::to_string(bytes / sizeof(T)) + " entries, meta implies " +
                       std::to_string(expected_count));
    return std::nullopt;
  }
  std::vector<T> values(expected_count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) {
    problems.push_back("read failed: " + path.string());
    return std::nullopt;
  }
  if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
    for (T& v : values) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
      std::memcpy(&v, b, sizeof(T));
    }
  }
  return values;
}

inline std::filesystem::path expert_dir(const std::filesystem::path& root, std::size_t k) {
  return root / ("expert_" + std::to_string(k));
}

}  // namespace detail

/// Checks every bundle invariant and returns the list of violations (empty
/// when valid).
inline std::vector<std::string> validate(const DatasetBundle& b) {
  std::vector<std::string> problems;
  if (b.num_samples < 1) problems.push_back("num_samples must be >= 1");
  if (b.embed_dim < 1) problems.push_back("embed_dim must be >= 1");
  if (b.num_classes < 2) problems.push_back("num_classes must be >= 2");
  if (b.experts.empty()) problems.push_back("num_experts must be >= 1");

  if (b.labels.size() != b.num_samples) {
    problems.push_back("shape mismatch: labels has " + std::to_string(b.labels.size()) +
                       " entries, expected " + std::to_string(b.num_samples));
  }
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    if (b.labels[i] >= b.num_classes) {
      problems.push_back("label " + std::to_string(b.labels[i]) + " of sample " +
                         std::to_string(i) + " outside [0, " +
                         std::to_string(b.num_classes) + ")");
    }
  }

  for (std::size_t k = 0; k < b.experts.size(); ++k) {
    const auto& ex = b.experts[k];
    const std::string tag = "expert " + std::to_string(k) + ": ";
    if (ex.embeddings.rows != b.num_samples || ex.embeddings.cols != b.embed_dim ||
        ex.embeddings.data.size() != ex.embeddings.rows * ex.embeddings.cols) {
      problems.push_back(tag + "shape mismatch in embeddings");
    } else {
      for (std::size_t i = 0; i < ex.embeddings.data.size(); ++i) {
        if (!std::isfinite(ex.embeddings.data[i])) {
          problems.push_back(tag + "non-finite embedding value at sample " +
                             std::to_string(i / b.embed_dim));
          break;
        }
      }
    }
    if (ex.probs.rows != b.num_samples || ex.probs.cols != b.num_classes ||
        ex.probs.data.size() != ex.probs.rows * ex.probs.cols) {
      problems.push_back(tag + "shape mismatch in probs");
      continue;
    }
    for (std::size_t i = 0; i < ex.probs.rows; ++i) {
      double sum = 0.0;
      bool bad = false;
      for (float p : ex.probs.row(i)) {
        if (!std::isfinite(p)) {
          problems.push_back(tag + "non-finite probability at sample " + std::to_string(i));
          bad = true;
          break;
        }
        if (p < 0.0f || p > 1.0f) {
          problems.push_back(tag + "probability " + detail::fmt_g(p) + " outside [0, 1] at sample " +
                             std::to_string(i));
          bad = true;
          break;
        }
        sum += p;
      }
      if (!bad && std::abs(sum - 1.0) > kProbRowTolerance) {
        problems.push_back(tag + "sample " + std::to_string(i) + " probability row sum " +
                           detail::fmt_g(sum) + " outside tolerance");
      }
    }
  }

  if (b.correctness) {
    const auto& log = *b.correctness;
    if (log.samples != b.num_samples || log.data.size() != log.epochs * log.samples) {
      problems.push_back("shape mismatch in correctness log");
    } else {
      for (std::uint8_t v : log.data) {
        if (v > 1) {
          problems.push_back("correctness log entries must be 0 or 1");
          break;
        }
      }
    }
  }
  return problems;
}

/// Non-fatal observations about a valid bundle (currently: empty classes).
inline std::vector<std::string> warnings(const DatasetBundle& b) {
  std::vector<std::string> out;
  std::vector<std::size_t> counts(b.num_classes, 0);
  for (auto y : b.labels)
    if (y < b.num_classes) ++counts[y];
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) out.push_back("class " + std::to_string(c) + " has no samples");
  return out;
}

inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  if (auto problems = validate(b); !problems.empty()) throw BundleError(std::move(problems));

  std::filesystem::create_directories(dir);
  nlohmann::json meta = {
      {"format_version", kBundleFormatVersion},
      {"num_samples", b.num_samples},
      {"embed_dim", b.embed_dim},
      {"num_classes", b.num_classes},
      {"num_experts", b.num_experts()},
      {"has_correctness", b.correctness.has_value()},
      {"num_epochs", b.correctness ? b.correctness->epochs : 0},
      {"source_id", b.source_id},
  };
  {
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + (dir / "meta.json").string());
    out << meta.dump(2) << "\n";
  }
  detail::write_le_blob<std::uint32_t>(dir / "labels.u32", b.labels);
  for (std::size_t k = 0; k < b.experts.size(); ++k) {
    const auto sub = detail::expert_dir(dir, k);
    std::filesystem::create_directories(sub);
    detail::write_le_blob<float>(sub / "embeddings.f32", b.experts[k].embeddings.data);
    detail::write_le_blob<float>(sub / "probs.f32", b.experts[k].probs.data);
  }
  const auto corr = dir / "correctness.u8";
  if (b.correctness) {
    detail::write_le_blob<std::uint8_t>(corr, b.correctness->data);
  } else {
    std::filesystem::remove(corr);
  }
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::is_regular_file(meta_path)) {
    throw BundleError({"missing file: " + meta_path.string()});
  }

  nlohmann::json meta;
  try {
    std::ifstream in(meta_path);
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw BundleError({std::string("malformed meta.json: ") + e.what()});
  }

  DatasetBundle b;
  std::size_t num_experts = 0;
  bool has_correctness = false;
  std::size_t num_epochs = 0;
  try {
    const int version = meta.at("format_version").get<int>();
    if (version != kBundleFormatVersion) {
      throw BundleError({"unknown format version " + std::to_string(version)});
    }
    b.num_samples = meta.at("num_samples").get<std::size_t>();
    b.embed_dim = meta.at("embed_dim").get<std::size_t>();
    b.num_classes = meta.at("num_classes").get<std::size_t>();
    num_experts = meta.at("num_experts").get<std::size_t>();
    has_correctness = meta.at("has_correctness").get<bool>();
    num_epochs = meta.value("num_epochs", std::size_t{0});
    b.source_id = meta.value("source_id", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw BundleError({std::string("malformed meta.json: ") + e.what()});
  }
  if (b.num_samples < 1 || b.embed_dim < 1 || b.num_classes < 2 || num_experts < 1) {
    throw BundleError({"meta.json dimensions violate N>=1, D>=1, C>=2, K>=1"});
  }

  if (auto labels = detail::read_le_blob<std::uint32_t>(dir / "labels.u32", b.num_samples, problems)) {
    b.labels = std::move(*labels);
  }
  b.experts.resize(num_experts);
  for (std::size_t k = 0; k < num_experts; ++k) {
    const auto sub = detail::expert_dir(dir, k);
    auto& ex = b.experts[k];
    if (auto emb = detail::read_le_blob<float>(sub / "embeddings.f32",
                                               b.num_samples * b.embed_dim, problems)) {
      ex.embeddings.rows = b.num_samples;
      ex.embeddings.cols = b.embed_dim;
      ex.embeddings.data = std::move(*emb);
    }
    if (auto probs = detail::read_le_blob<float>(sub / "probs.f32",
                                                 b.num_samples * b.num_classes, problems)) {
      ex.probs.rows = b.num_samples;
      ex.probs.cols = b.num_classes;
      ex.probs.data = std::move(*probs);
    }
  }
  if (has_correctness) {
    if (auto corr = detail::read_le_blob<std::uint8_t>(dir / "correctness.u8",
                                                       num_epochs * b.num_samples, problems)) {
      b.correctness = CorrectnessLog{num_epochs, b.num_samples, std::move(*corr)};
    }
  }
  if (!problems.empty()) throw BundleError(std::move(problems));
  if (auto invalid = validate(b); !invalid.empty()) throw BundleError(std::move(invalid));
  return b;
}

}  // namespace prunekit

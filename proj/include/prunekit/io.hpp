#pragma once

// Serialization of score tables and prune manifests.
//
// scores.json  columnar arrays; doubles are written in shortest round-trip
//              decimal form so reloading reproduces every value bit-exactly.
// scores.f32   optional float32 blob, one column after another, described by
//              a "<blob>.json" column manifest.
// manifest     JSON record of retained indices plus provenance; for large N a
//              companion indices.u32 blob is written next to it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prunekit/container.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/sampling.hpp"

namespace prunekit {

inline constexpr int kScoresFormatVersion = 1;
inline constexpr std::size_t kIndicesBlobThreshold = 100000;

using Json = nlohmann::json;

/// A ScoreTable together with the metric selected when it was produced and
/// the resolved configuration of the producing run.
struct ScoreFile {
  ScoreTable table;
  Metric metric = Metric::Sim;
  Json config = Json::object();
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline std::vector<std::pair<std::string, const std::vector<double>*>> named_columns(
    const ScoreTable& t) {
  std::vector<std::pair<std::string, const std::vector<double>*>> cols = {
      {"s_raw", &t.s_raw}, {"e_raw", &t.e_raw}, {"c_raw", &t.c_raw}, {"s", &t.s},
      {"e", &t.e},         {"c", &t.c},         {"g", &t.g},         {"sim", &t.sim},
      {"el2n", &t.el2n},   {"prototype", &t.prototype},
  };
  if (t.forgetting) cols.emplace_back("forgetting", &*t.forgetting);
  return cols;
}

}  // namespace detail

inline Json to_json(const ScoreFile& f) {
  const auto& t = f.table;
  Json cols = Json::object();
  for (const auto& [name, col] : detail::named_columns(t)) cols[name] = *col;
  Json polarity = Json::object();
  for (Metric m : {Metric::Sim, Metric::El2n, Metric::Prototype, Metric::Forgetting}) {
    polarity[std::string(to_string(m))] = std::string(to_string(polarity_of(m)));
  }
  return Json{
      {"format_version", kScoresFormatVersion},
      {"n", t.n},
      {"num_classes", t.num_classes},
      {"metric", std::string(to_string(f.metric))},
      {"normalize_g", t.normalize_g},
      {"num_epochs", t.num_epochs},
      {"polarity", polarity},
      {"config", f.config},
      {"labels", t.labels},
      {"columns", cols},
  };
}

inline ScoreFile score_file_from_json(const Json& j) {
  ScoreFile f;
  try {
    if (j.at("format_version").get<int>() != kScoresFormatVersion) {
      throw std::runtime_error("unsupported scores format_version");
    }
    auto& t = f.table;
    t.n = j.at("n").get<std::size_t>();
    t.num_classes = j.at("num_classes").get<std::size_t>();
    t.normalize_g = j.value("normalize_g", false);
    t.num_epochs = j.value("num_epochs", std::size_t{0});
    t.labels = j.at("labels").get<std::vector<std::uint32_t>>();
    f.metric = parse_metric(j.at("metric").get<std::string>());
    f.config = j.value("config", Json::object());
    const auto& cols = j.at("columns");
    auto col = [&](const char* name) { return cols.at(name).get<std::vector<double>>(); };
    t.s_raw = col("s_raw");
    t.e_raw = col("e_raw");
    t.c_raw = col("c_raw");
    t.s = col("s");
    t.e = col("e");
    t.c = col("c");
    t.g = col("g");
    t.sim = col("sim");
    t.el2n = col("el2n");
    t.prototype = col("prototype");
    if (cols.contains("forgetting")) t.forgetting = col("forgetting");
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("malformed scores file: ") + e.what());
  }
  const auto& t = f.table;
  if (t.labels.size() != t.n) throw std::runtime_error("scores file: labels length != n");
  for (const auto& [name, c] : detail::named_columns(t)) {
    if (c->size() != t.n) throw std::runtime_error("scores file: column " + name + " length != n");
  }
  for (auto y : t.labels) {
    if (y >= t.num_classes) throw std::runtime_error("scores file: label outside [0, num_classes)");
  }
  return f;
}

inline void save_scores(const ScoreFile& f, const std::filesystem::path& path) {
  detail::write_text(path, to_json(f).dump(1) + "\n");
}

inline ScoreFile load_scores(const std::filesystem::path& path) {
  return score_file_from_json(detail::read_json(path));
}

/// Column-major float32 dump of every score column plus a JSON manifest
/// naming the columns in blob order.
inline void save_scores_blob(const ScoreTable& t, const std::filesystem::path& blob) {
  std::vector<float> data;
  Json names = Json::array();
  for (const auto& [name, col] : detail::named_columns(t)) {
    names.push_back(name);
    for (double v : *col) data.push_back(static_cast<float>(v));
  }
  if (blob.has_parent_path()) std::filesystem::create_directories(blob.parent_path());
  detail::write_le_blob<float>(blob, data);
  Json manifest = {{"n", t.n}, {"dtype", "float32"}, {"layout", "column-major"}, {"columns", names}};
  detail::write_text(blob.string() + ".json", manifest.dump(2) + "\n");
}

/// Plain CSV for plotting: one row per sample.
inline void save_scores_csv(const ScoreTable& t, const std::filesystem::path& path) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  const auto cols = detail::named_columns(t);
  os << "index,label";
  for (const auto& [name, _] : cols) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < t.n; ++i) {
    os << i << ',' << t.labels[i];
    for (const auto& [_, col] : cols) os << ',' << (*col)[i];
    os << '\n';
  }
  detail::write_text(path, os.str());
}

inline Json to_json(const PruneManifest& m) {
  Json plan = nullptr;
  if (m.plan) {
    plan = Json{{"mu0", m.plan->mu0}, {"sigma0", m.plan->sigma0}, {"t", m.plan->t},
                {"mu", m.plan->mu},   {"sigma", m.plan->sigma}};
  }
  return Json{
      {"method", std::string(to_string(m.method))},
      {"alpha", m.alpha},
      {"class_ratio", m.class_ratio},
      {"center_ratio", m.center_ratio},
      {"seed", m.seed},
      {"n_total", m.n_total},
      {"n_retain", m.n_retain()},
      {"plan", plan},
      {"scores_digest", m.scores_digest},
      {"retained_indices", m.retained_indices},
  };
}

inline PruneManifest manifest_from_json(const Json& j) {
  PruneManifest m;
  try {
    m.method = parse_strategy(j.at("method").get<std::string>());
    m.alpha = j.at("alpha").get<double>();
    m.class_ratio = j.value("class_ratio", 0.0);
    m.center_ratio = j.value("center_ratio", 0.0);
    m.seed = j.value("seed", std::uint64_t{0});
    m.n_total = j.at("n_total").get<std::size_t>();
    if (!j.at("plan").is_null()) {
      const auto& p = j.at("plan");
      m.plan = PlanEcho{p.at("mu0").get<double>(), p.at("sigma0").get<double>(),
                        p.at("t").get<double>(), p.at("mu").get<double>(),
                        p.at("sigma").get<double>()};
    }
    m.scores_digest = j.value("scores_digest", std::string{});
    m.retained_indices = j.at("retained_indices").get<std::vector<std::uint32_t>>();
    if (j.at("n_retain").get<std::size_t>() != m.retained_indices.size()) {
      throw std::runtime_error("manifest n_retain disagrees with retained_indices");
    }
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  for (std::size_t i = 0; i < m.retained_indices.size(); ++i) {
    if (m.retained_indices[i] >= m.n_total ||
        (i > 0 && m.retained_indices[i] <= m.retained_indices[i - 1])) {
      throw std::runtime_error("manifest indices must be sorted, unique and < n_total");
    }
  }
  return m;
}

/// Path of the companion index blob for a manifest path.
inline std::filesystem::path indices_blob_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".indices.u32");
  return p;
}

/// Writes the manifest JSON (with `extra` fields merged in, typically the
/// resolved run config). Emits the index blob when N is large or when forced.
inline void save_manifest(const PruneManifest& m, const std::filesystem::path& path,
                          const Json& extra = Json::object(), bool force_blob = false) {
  Json j = to_json(m);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  detail::write_text(path, j.dump(1) + "\n");
  if (force_blob || m.n_total >= kIndicesBlobThreshold) {
    detail::write_le_blob<std::uint32_t>(indices_blob_path(path), m.retained_indices);
  }
}

inline PruneManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(detail::read_json(path));
}

}  // namespace prunekit

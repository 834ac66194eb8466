#pragma once

// Build pipeline (ingest -> dimension estimates -> incremental evaluation ->
// map) and the JSON config documents read by the CLI.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>

#include <json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "decoder.hpp"
#include "dimension.hpp"
#include "knowledge_map.hpp"
#include "map_io.hpp"
#include "som.hpp"

namespace gkm {

namespace detail {

// Rejects keys outside `allowed`, so typos surface instead of silently
// falling back to defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error("invalid_config", where + " must be a JSON object");
  std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!names.count(key)) throw Error("invalid_config", "unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("invalid_config", std::string("key '") + key + "' in " + where + " has the wrong type");
  }
}

inline Schedule read_schedule(const nlohmann::json& j, const char* key, Schedule fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& s = j.at(key);
  const std::string here = where + "." + key;
  check_keys(s, {"initial", "final"}, here);
  read_key(s, "initial", fallback.initial, here);
  read_key(s, "final", fallback.final, here);
  return fallback;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("invalid_config", "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace detail

struct BuildConfig {
  std::uint64_t seed = 1;
  VocabularyConfig corpus;
  double jl_epsilon = 0.1;
  double pca_threshold = 0.95;
  SomConfig som;
};

inline nlohmann::json to_json(const SomConfig& c) {
  return {{"initial_dim", c.initial_dim},
          {"nodes_per_axis", c.nodes_per_axis},
          {"epochs_per_phase", c.epochs_per_phase},
          {"learning_rate", {{"initial", c.learning_rate.initial}, {"final", c.learning_rate.final}}},
          {"neighborhood_radius", {{"initial", c.neighborhood_radius.initial}, {"final", c.neighborhood_radius.final}}},
          {"parallel_runs", c.parallel_runs},
          {"stability_threshold", c.stability_threshold},
          {"max_dim", c.max_dim},
          {"probe_size", c.probe_size},
          {"grown_axis_size", c.grown_axis_size}};
}

inline nlohmann::json to_json(const BuildConfig& c) {
  return {{"seed", c.seed},
          {"corpus", {{"min_df", c.corpus.min_df}, {"max_df_ratio", c.corpus.max_df_ratio}, {"max_terms", c.corpus.max_terms}}},
          {"dimension", {{"jl_epsilon", c.jl_epsilon}, {"pca_threshold", c.pca_threshold}}},
          {"som", to_json(c.som)}};
}

inline BuildConfig build_config_from_json(const nlohmann::json& j) {
  BuildConfig c;
  detail::check_keys(j, {"seed", "corpus", "dimension", "som"}, "config");
  detail::read_key(j, "seed", c.seed, "config");
  if (j.contains("corpus")) {
    const auto& s = j.at("corpus");
    detail::check_keys(s, {"min_df", "max_df_ratio", "max_terms"}, "corpus");
    detail::read_key(s, "min_df", c.corpus.min_df, "corpus");
    detail::read_key(s, "max_df_ratio", c.corpus.max_df_ratio, "corpus");
    detail::read_key(s, "max_terms", c.corpus.max_terms, "corpus");
  }
  if (j.contains("dimension")) {
    const auto& s = j.at("dimension");
    detail::check_keys(s, {"jl_epsilon", "pca_threshold"}, "dimension");
    detail::read_key(s, "jl_epsilon", c.jl_epsilon, "dimension");
    detail::read_key(s, "pca_threshold", c.pca_threshold, "dimension");
  }
  if (j.contains("som")) {
    const auto& s = j.at("som");
    detail::check_keys(s,
                       {"initial_dim", "nodes_per_axis", "epochs_per_phase", "learning_rate", "neighborhood_radius",
                        "parallel_runs", "stability_threshold", "max_dim", "probe_size", "grown_axis_size"},
                       "som");
    detail::read_key(s, "initial_dim", c.som.initial_dim, "som");
    detail::read_key(s, "nodes_per_axis", c.som.nodes_per_axis, "som");
    detail::read_key(s, "epochs_per_phase", c.som.epochs_per_phase, "som");
    c.som.learning_rate = detail::read_schedule(s, "learning_rate", c.som.learning_rate, "som");
    c.som.neighborhood_radius = detail::read_schedule(s, "neighborhood_radius", c.som.neighborhood_radius, "som");
    detail::read_key(s, "parallel_runs", c.som.parallel_runs, "som");
    detail::read_key(s, "stability_threshold", c.som.stability_threshold, "som");
    detail::read_key(s, "max_dim", c.som.max_dim, "som");
    detail::read_key(s, "probe_size", c.som.probe_size, "som");
    detail::read_key(s, "grown_axis_size", c.som.grown_axis_size, "som");
  }
  c.som.seed = c.seed;
  if (!(c.jl_epsilon > 0.0 && c.jl_epsilon < 1.0)) throw Error("invalid_config", "jl_epsilon must lie in (0, 1)");
  if (!(c.pca_threshold > 0.0 && c.pca_threshold <= 1.0)) throw Error("invalid_config", "pca_threshold must lie in (0, 1]");
  c.som.validate();
  return c;
}

inline BuildConfig load_build_config(const std::filesystem::path& path) {
  return build_config_from_json(detail::read_json_file(path));
}

inline std::string config_hash(const BuildConfig& c) { return sha256_hex(to_json(c).dump()); }

inline nlohmann::json phase_record_json(const PhaseRecord& r) {
  nlohmann::json j = to_json(r.report);
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

struct BuildResult {
  KnowledgeMap map;
  IngestResult ingest;
  std::size_t final_dim = 0;
};

// Full offline build. `phase_log` receives one JSON record per evaluation
// phase. Probe size is capped at the number of mapped documents.
inline BuildResult build_knowledge_map(const std::filesystem::path& corpus_path, BuildConfig config,
                                       const std::function<void(const nlohmann::json&)>& phase_log = {}) {
  config.som.seed = config.seed;
  const std::string hash = config_hash(config);

  BuildResult result;
  result.ingest = ingest_corpus(corpus_path, config.corpus);
  const auto& ingest = result.ingest;
  const auto dense = dense_vectors(ingest.vectors, ingest.vocabulary.size());

  nlohmann::json estimates;
  estimates["documents"] = dense.size();
  estimates["vocabulary_size"] = ingest.vocabulary.size();
  estimates["unmappable"] = nlohmann::json::array();
  for (const auto& u : ingest.unmappable) estimates["unmappable"].push_back({{"doc_id", u.doc_id}, {"reason", u.reason}});
  estimates["jl"] = {{"points", dense.size()},
                     {"epsilon", config.jl_epsilon},
                     {"min_dimension", jl_min_dimension({dense.size(), config.jl_epsilon})}};
  if (dense.size() >= 2) {
    PcaOptions options;
    options.seed = derive_seed(config.seed, 7);
    const auto pca = intrinsic_dimension_pca(dense, config.pca_threshold, options);
    estimates["pca"] = {{"threshold", pca.threshold},
                        {"intrinsic_dim", pca.intrinsic_dim},
                        {"explained_variance", pca.explained_variance}};
  }

  SomConfig som = config.som;
  if (som.probe_size > dense.size()) som.probe_size = dense.size();
  estimates["probe_size"] = som.probe_size;
  auto evaluation = incremental_evaluate(dense, som, [&](const PhaseRecord& r) {
    if (phase_log) phase_log(phase_record_json(r));
  });
  result.final_dim = evaluation.final_dim;

  MapBuildOptions options;
  options.vocabulary = ingest.vocabulary;
  for (const auto& doc : ingest.documents) options.topic_labels.push_back(doc.topic_label);
  options.provenance.config_hash = hash;
  options.provenance.seed = config.seed;
  options.provenance.estimates = std::move(estimates);
  std::vector<std::string> ids;
  for (const auto& doc : ingest.documents) ids.push_back(doc.id);
  result.map = build_map(evaluation.soms, evaluation.reports, dense, ids, std::move(options));
  return result;
}

// Decoder simulation settings shared by `decode-sim run` and `decode-sim pretrain`.
struct DecodeSimConfig {
  std::uint64_t seed = 1;
  std::size_t voxels = 100;
  std::size_t dim = 3;                  // `run` takes D from the map instead
  double coordinate_range = 5.0;        // `pretrain` cube edge; `run` uses the map's bounding box
  double mixing = 0.7;
  double noise_sigma = 0.05;
  double baseline_scale = 1.0;
  bool nonlinear = false;
  std::size_t cohort_size = 10;
  std::size_t held_out = 10;
  std::size_t samples_per_subject = 200;
  std::size_t finetune_samples = 100;
  std::size_t eval_samples = 200;
  std::size_t hidden = 64;
  std::size_t window = 3;
  std::size_t iterations = 2000;
  std::size_t neighbors_shown = 5;
  double protocol_learning_rate = 0.01;
  double threshold_fraction = 0.1;
  DecoderSchedule pretrain_schedule{60, 16, 0.01, 1};
  DecoderSchedule finetune_schedule{100, 10, 0.01, 1};
};

inline nlohmann::json to_json(const DecoderSchedule& s) {
  return {{"epochs", s.epochs}, {"batch_size", s.batch_size}, {"learning_rate", s.learning_rate}};
}

inline nlohmann::json to_json(const DecodeSimConfig& c) {
  return {{"seed", c.seed},
          {"voxels", c.voxels},
          {"dim", c.dim},
          {"coordinate_range", c.coordinate_range},
          {"mixing", c.mixing},
          {"noise_sigma", c.noise_sigma},
          {"baseline_scale", c.baseline_scale},
          {"nonlinear", c.nonlinear},
          {"cohort_size", c.cohort_size},
          {"held_out", c.held_out},
          {"samples_per_subject", c.samples_per_subject},
          {"finetune_samples", c.finetune_samples},
          {"eval_samples", c.eval_samples},
          {"hidden", c.hidden},
          {"window", c.window},
          {"iterations", c.iterations},
          {"neighbors_shown", c.neighbors_shown},
          {"protocol_learning_rate", c.protocol_learning_rate},
          {"threshold_fraction", c.threshold_fraction},
          {"pretrain_schedule", to_json(c.pretrain_schedule)},
          {"finetune_schedule", to_json(c.finetune_schedule)}};
}

inline DecodeSimConfig decode_sim_config_from_json(const nlohmann::json& j) {
  DecodeSimConfig c;
  const std::string where = "decode-sim config";
  detail::check_keys(j,
                     {"seed", "voxels", "dim", "coordinate_range", "mixing", "noise_sigma", "baseline_scale", "nonlinear", "cohort_size",
                      "held_out", "samples_per_subject", "finetune_samples", "eval_samples", "hidden", "window",
                      "iterations", "neighbors_shown", "protocol_learning_rate", "threshold_fraction",
                      "pretrain_schedule", "finetune_schedule"},
                     where);
  detail::read_key(j, "seed", c.seed, where);
  detail::read_key(j, "voxels", c.voxels, where);
  detail::read_key(j, "dim", c.dim, where);
  detail::read_key(j, "coordinate_range", c.coordinate_range, where);
  detail::read_key(j, "mixing", c.mixing, where);
  detail::read_key(j, "noise_sigma", c.noise_sigma, where);
  detail::read_key(j, "baseline_scale", c.baseline_scale, where);
  detail::read_key(j, "nonlinear", c.nonlinear, where);
  detail::read_key(j, "cohort_size", c.cohort_size, where);
  detail::read_key(j, "held_out", c.held_out, where);
  detail::read_key(j, "samples_per_subject", c.samples_per_subject, where);
  detail::read_key(j, "finetune_samples", c.finetune_samples, where);
  detail::read_key(j, "eval_samples", c.eval_samples, where);
  detail::read_key(j, "hidden", c.hidden, where);
  detail::read_key(j, "window", c.window, where);
  detail::read_key(j, "iterations", c.iterations, where);
  detail::read_key(j, "neighbors_shown", c.neighbors_shown, where);
  detail::read_key(j, "protocol_learning_rate", c.protocol_learning_rate, where);
  detail::read_key(j, "threshold_fraction", c.threshold_fraction, where);
  for (auto [key, schedule] : {std::pair{"pretrain_schedule", &c.pretrain_schedule},
                               std::pair{"finetune_schedule", &c.finetune_schedule}}) {
    if (!j.contains(key)) continue;
    const std::string here = where + "." + key;
    detail::check_keys(j.at(key), {"epochs", "batch_size", "learning_rate"}, here);
    detail::read_key(j.at(key), "epochs", schedule->epochs, here);
    detail::read_key(j.at(key), "batch_size", schedule->batch_size, here);
    detail::read_key(j.at(key), "learning_rate", schedule->learning_rate, here);
  }
  if (!(c.mixing >= 0.0 && c.mixing <= 1.0)) throw Error("invalid_config", "mixing must lie in [0, 1]");
  if (!(c.noise_sigma >= 0.0)) throw Error("invalid_config", "noise_sigma must be >= 0");
  if (c.window == 0 || c.window % 2 == 0) throw Error("invalid_config", "window must be odd and positive");
  if (c.voxels == 0 || c.dim == 0 || c.hidden == 0) throw Error("invalid_config", "voxels, dim and hidden must be positive");
  if (!(c.coordinate_range > 0.0)) throw Error("invalid_config", "coordinate_range must be positive");
  if (c.cohort_size < 2) throw Error("invalid_config", "cohort_size must be >= 2");
  return c;
}

inline DecodeSimConfig load_decode_sim_config(const std::filesystem::path& path) {
  return decode_sim_config_from_json(detail::read_json_file(path));
}

inline CohortConfig cohort_config(const DecodeSimConfig& c, std::size_t dim, double coordinate_range) {
  CohortConfig cohort;
  cohort.subjects = c.cohort_size;
  cohort.voxels = c.voxels;
  cohort.dim = dim;
  cohort.mixing = c.mixing;
  cohort.noise_sigma = c.noise_sigma;
  cohort.coordinate_range = coordinate_range;
  cohort.baseline_scale = c.baseline_scale;
  cohort.nonlinear = c.nonlinear;
  cohort.seed = derive_seed(c.seed, 11);
  return cohort;
}

inline PretrainExperimentConfig experiment_config(const DecodeSimConfig& c) {
  PretrainExperimentConfig e;
  e.cohort = cohort_config(c, c.dim, c.coordinate_range);
  e.held_out = c.held_out;
  e.samples_per_subject = c.samples_per_subject;
  e.pretrain.hidden = c.hidden;
  e.pretrain.window = c.window;
  e.pretrain.schedule = c.pretrain_schedule;
  e.finetune_samples = c.finetune_samples;
  e.eval_samples = c.eval_samples;
  e.finetune = c.finetune_schedule;
  e.threshold_fraction = c.threshold_fraction;
  e.seed = c.seed;
  return e;
}

}  // namespace gkm

// gkm: build knowledge maps, query them, run decoder simulations, serve the API.

#include <CLI11.hpp>
#include <json.hpp>

#include <gkm/corpus.hpp>
#include <gkm/decoder.hpp>
#include <gkm/dimension.hpp>
#include <gkm/knowledge_map.hpp>
#include <gkm/map_io.hpp>
#include <gkm/pipeline.hpp>
#include <gkm/service.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using nlohmann::json;

struct Failure {
  std::string stage;
  gkm::Error error;
};

int report(const std::string& stage, const std::string& code, const std::string& message) {
  std::cerr << json{{"error", {{"stage", stage}, {"code", code}, {"message", message}}}}.dump() << "\n";
  return 1;
}

// Runs one stage, tagging any failure with its name.
template <class F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const gkm::Error& e) {
    throw Failure{name, e};
  } catch (const std::filesystem::filesystem_error& e) {
    throw Failure{name, gkm::Error("io", e.what())};
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw gkm::Error("io", "cannot write " + path.string());
  out << content;
  if (!out) throw gkm::Error("io", "failed writing " + path.string());
}

std::string parameter_hash(const gkm::Decoder& d) {
  const auto p = d.parameters();
  return gkm::sha256_hex(std::string_view(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double)));
}

struct BuildArgs {
  std::string corpus, config, out, phase_log, json_export;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> min_df, max_terms, initial_dim, nodes_per_axis, epochs_per_phase, parallel_runs, max_dim,
      probe_size;
  std::optional<double> max_df_ratio, stability_threshold, jl_epsilon, pca_threshold;
};

json load_config_json(const std::string& path) {
  return path.empty() ? json::object() : gkm::detail::read_json_file(path);
}

gkm::BuildConfig resolve_build_config(const BuildArgs& a) {
  json j = load_config_json(a.config);
  auto set = [&](const char* section, const char* key, const auto& value) {
    if (!value) return;
    if (section) j[section][key] = *value;
    else j[key] = *value;
  };
  set(nullptr, "seed", a.seed);
  set("corpus", "min_df", a.min_df);
  set("corpus", "max_df_ratio", a.max_df_ratio);
  set("corpus", "max_terms", a.max_terms);
  set("dimension", "jl_epsilon", a.jl_epsilon);
  set("dimension", "pca_threshold", a.pca_threshold);
  set("som", "initial_dim", a.initial_dim);
  set("som", "nodes_per_axis", a.nodes_per_axis);
  set("som", "epochs_per_phase", a.epochs_per_phase);
  set("som", "parallel_runs", a.parallel_runs);
  set("som", "max_dim", a.max_dim);
  set("som", "probe_size", a.probe_size);
  set("som", "stability_threshold", a.stability_threshold);
  return gkm::build_config_from_json(j);
}

int cmd_build(const BuildArgs& a) {
  const auto config = stage("config", [&] { return resolve_build_config(a); });
  std::optional<std::ofstream> phase_file;
  if (!a.phase_log.empty()) {
    phase_file.emplace(a.phase_log, std::ios::trunc);
    if (!*phase_file) throw Failure{"config", gkm::Error("io", "cannot write " + a.phase_log)};
  }
  const auto result = stage("build", [&] {
    return gkm::build_knowledge_map(a.corpus, config, [&](const json& record) {
      std::cerr << record.dump() << "\n";
      if (phase_file) *phase_file << record.dump() << "\n" << std::flush;
    });
  });
  stage("save", [&] {
    gkm::save_map(result.map, a.out);
    if (!a.json_export.empty()) write_file(a.json_export, gkm::to_json(result.map).dump(2) + "\n");
    return 0;
  });
  const auto& reports = result.map.provenance().stability_reports;
  json summary = {{"map", a.out},
                  {"final_dim", result.final_dim},
                  {"entry_count", result.map.size()},
                  {"unmappable", result.ingest.unmappable.size()},
                  {"final_report", reports.empty() ? json(nullptr) : gkm::to_json(reports.back())},
                  {"estimates", result.map.provenance().estimates}};
  summary["estimates"].erase("unmappable");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

gkm::KnowledgeMap open_map(const std::string& path) {
  return stage("load", [&] { return gkm::load_map(path); });
}

std::string read_text_argument(const std::string& text, const std::string& file) {
  if (file.empty()) return text;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Failure{"query", gkm::Error("unreadable", "cannot read " + file)};
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

gkm::DecodeSimConfig resolve_sim_config(const std::string& path, std::optional<std::uint64_t> seed) {
  return stage("config", [&] {
    json j = load_config_json(path);
    if (seed) j["seed"] = *seed;
    return gkm::decode_sim_config_from_json(j);
  });
}

struct ProtocolSetup {
  gkm::SyntheticSubject subject;
  gkm::CoordinateBox box;
};

ProtocolSetup protocol_setup(const gkm::KnowledgeMap& map, const gkm::DecodeSimConfig& c) {
  const auto box = gkm::bounding_box(map);
  auto cohort = gkm::make_cohort(gkm::cohort_config(c, map.dim(), box.range() > 0.0 ? box.range() : 1.0));
  return {std::move(cohort.front()), box};
}

gkm::ProtocolConfig protocol_config(const gkm::DecodeSimConfig& c) {
  gkm::ProtocolConfig p;
  p.seed = c.seed;
  p.neighbors_shown = c.neighbors_shown;
  p.window = c.window;
  p.hidden = c.hidden;
  p.learning_rate = c.protocol_learning_rate;
  return p;
}

json protocol_summary(const gkm::ProtocolResult& r, const ProtocolSetup& setup, const gkm::DecodeSimConfig& c) {
  const double rmse = gkm::heldout_rmse(r.decoder, setup.subject, setup.box, c.eval_samples, c.window,
                                        gkm::derive_seed(c.seed, 99));
  const double range = setup.box.range();
  return {{"subject", setup.subject.id},
          {"iterations", r.log.iterations},
          {"heldout_rmse", rmse},
          {"coordinate_range", range},
          {"rmse_fraction", range > 0.0 ? rmse / range : 0.0},
          {"decoder_hash", parameter_hash(r.decoder)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global knowledge map engine"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build", "Build a map from a corpus");
  build_cmd->add_option("--corpus", build.corpus, "Directory of *.txt files or JSON-lines file")->required();
  build_cmd->add_option("--config", build.config, "JSON config file");
  build_cmd->add_option("--out", build.out, "Output map file")->required();
  build_cmd->add_option("--phase-log", build.phase_log, "Write one JSON line per evaluation phase here");
  build_cmd->add_option("--json-export", build.json_export, "Also write a JSON debug export of the map");
  build_cmd->add_option("--seed", build.seed);
  build_cmd->add_option("--min-df", build.min_df);
  build_cmd->add_option("--max-df-ratio", build.max_df_ratio);
  build_cmd->add_option("--max-terms", build.max_terms);
  build_cmd->add_option("--jl-epsilon", build.jl_epsilon);
  build_cmd->add_option("--pca-threshold", build.pca_threshold);
  build_cmd->add_option("--initial-dim", build.initial_dim);
  build_cmd->add_option("--nodes-per-axis", build.nodes_per_axis);
  build_cmd->add_option("--epochs-per-phase", build.epochs_per_phase);
  build_cmd->add_option("--parallel-runs", build.parallel_runs);
  build_cmd->add_option("--max-dim", build.max_dim);
  build_cmd->add_option("--probe-size", build.probe_size);
  build_cmd->add_option("--stability-threshold", build.stability_threshold);

  auto* query_cmd = app.add_subcommand("query", "Query a built map");
  query_cmd->require_subcommand(1);
  std::string map_path, id, coords, a, b, text, text_file;
  std::size_t k = gkm::kDefaultNeighbors, view_dim = 2;
  auto add_map = [&](CLI::App* c) { c->add_option("--map", map_path, "Map file")->required(); };

  auto* q_neighbors = query_cmd->add_subcommand("neighbors", "k nearest documents to an id or a point");
  add_map(q_neighbors);
  auto* id_opt = q_neighbors->add_option("--id", id);
  auto* coords_opt = q_neighbors->add_option("--coords", coords, "Comma-separated coordinates");
  id_opt->excludes(coords_opt);
  q_neighbors->add_option("--k", k);

  auto* q_relevance = query_cmd->add_subcommand("relevance", "Map distance between two documents");
  add_map(q_relevance);
  q_relevance->add_option("--a", a)->required();
  q_relevance->add_option("--b", b)->required();

  auto* q_locate = query_cmd->add_subcommand("locate", "Coordinates of new text");
  add_map(q_locate);
  auto* text_opt = q_locate->add_option("--text", text);
  auto* text_file_opt = q_locate->add_option("--text-file", text_file);
  text_opt->excludes(text_file_opt);

  auto* q_view = query_cmd->add_subcommand("view", "2-D or 3-D projection of the map");
  add_map(q_view);
  q_view->add_option("--dim", view_dim)->check(CLI::IsMember({2, 3}));

  auto* dims_cmd = app.add_subcommand("dims", "Dimensionality estimates");
  dims_cmd->require_subcommand(1);
  std::uint64_t points = 0;
  double epsilon = 0.1, threshold = 0.95;
  auto* d_jl = dims_cmd->add_subcommand("jl", "Johnson-Lindenstrauss target dimension");
  d_jl->add_option("--points", points)->required();
  d_jl->add_option("--epsilon", epsilon)->required();
  std::string corpus_path, dims_config;
  auto* d_pca = dims_cmd->add_subcommand("pca", "PCA intrinsic dimension of a corpus");
  d_pca->add_option("--corpus", corpus_path)->required();
  d_pca->add_option("--config", dims_config, "Build config (corpus section is used)");
  d_pca->add_option("--threshold", threshold);

  auto* sim_cmd = app.add_subcommand("decode-sim", "Decoder simulations");
  sim_cmd->require_subcommand(1);
  std::string sim_config, log_path, curves_path, summary_path;
  std::optional<std::uint64_t> sim_seed;
  std::optional<std::size_t> iterations;
  auto* s_run = sim_cmd->add_subcommand("run", "Training protocol for one synthetic subject on a map");
  add_map(s_run);
  s_run->add_option("--config", sim_config);
  s_run->add_option("--seed", sim_seed);
  s_run->add_option("--iterations", iterations);
  s_run->add_option("--log", log_path, "Write the protocol log (JSON) here");
  auto* s_replay = sim_cmd->add_subcommand("replay", "Re-run a logged protocol and compare");
  add_map(s_replay);
  s_replay->add_option("--config", sim_config);
  s_replay->add_option("--log", log_path)->required();
  auto* s_pretrain = sim_cmd->add_subcommand("pretrain", "Pretrained vs from-scratch fine-tuning experiment");
  s_pretrain->add_option("--config", sim_config);
  s_pretrain->add_option("--seed", sim_seed);
  s_pretrain->add_option("--curves", curves_path, "JSON-lines learning curves per arm");
  s_pretrain->add_option("--summary", summary_path, "Summary JSON file");

  auto* serve_cmd = app.add_subcommand("serve", "Serve the JSON API and UI assets");
  add_map(serve_cmd);
  std::string bind, ui_dir, serve_config;
  serve_cmd->add_option("--bind", bind, std::string("host:port; defaults to $") + gkm::kBindEnv + " or 127.0.0.1:8080");
  serve_cmd->add_option("--ui-dir", ui_dir, "Static UI bundle served at /");
  serve_cmd->add_option("--config", serve_config, "Config snapshot echoed in /api/map/meta");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build_cmd) return cmd_build(build);

    if (*query_cmd) {
      const auto map = open_map(map_path);
      json out = stage("query", [&]() -> json {
        if (*q_neighbors) {
          if (id.empty() == coords.empty()) throw gkm::Error("bad_request", "give exactly one of --id or --coords");
          return gkm::to_json(id.empty() ? gkm::neighbors(map, gkm::detail::parse_coords(coords), k)
                                         : gkm::neighbors(map, id, k));
        }
        if (*q_relevance) return {{"a", a}, {"b", b}, {"distance", gkm::relevance(map, a, b)}};
        if (*q_locate) {
          if (text.empty() && text_file.empty()) throw gkm::Error("bad_request", "give --text or --text-file");
          return {{"coords", gkm::locate_text(map, read_text_argument(text, text_file))}};
        }
        return gkm::to_json(gkm::project_to_view(map, view_dim));
      });
      std::cout << out.dump() << "\n";
      return 0;
    }

    if (*dims_cmd) {
      json out = stage("dims", [&]() -> json {
        if (*d_jl) {
          return {{"points", points}, {"epsilon", epsilon}, {"min_dimension", gkm::jl_min_dimension({points, epsilon})}};
        }
        BuildArgs args;
        args.config = dims_config;
        const auto config = resolve_build_config(args);
        const auto ingest = gkm::ingest_corpus(corpus_path, config.corpus);
        const auto dense = gkm::dense_vectors(ingest.vectors, ingest.vocabulary.size());
        gkm::PcaOptions options;
        options.seed = gkm::derive_seed(config.seed, 7);
        const auto est = gkm::intrinsic_dimension_pca(dense, threshold, options);
        return {{"documents", dense.size()},
                {"vocabulary_size", ingest.vocabulary.size()},
                {"threshold", est.threshold},
                {"intrinsic_dim", est.intrinsic_dim},
                {"explained_variance", est.explained_variance}};
      });
      std::cout << out.dump() << "\n";
      return 0;
    }

    if (*sim_cmd) {
      if (*s_pretrain) {
        const auto config = resolve_sim_config(sim_config, sim_seed);
        const auto result = stage("experiment", [&] { return gkm::run_pretrain_experiment(gkm::experiment_config(config)); });
        if (!curves_path.empty()) {
          std::string lines;
          for (const auto& [arm, res] : {std::pair{"pretrained", &result.pretrained}, std::pair{"scratch", &result.scratch}}) {
            for (std::size_t i = 0; i < res->curves.size(); ++i) {
              lines += json{{"arm", arm},
                            {"subject", result.subject_ids[i]},
                            {"epochs_to_threshold", res->epochs_to_threshold[i]},
                            {"heldout_rmse", res->curves[i]}}
                           .dump() +
                       "\n";
            }
          }
          stage("output", [&] { write_file(curves_path, lines); return 0; });
        }
        const json summary = {{"threshold", result.threshold},
                              {"subjects", result.subject_ids.size()},
                              {"pretrained", {{"median_epochs", result.pretrained.median_epochs},
                                              {"epochs_to_threshold", result.pretrained.epochs_to_threshold}}},
                              {"scratch", {{"median_epochs", result.scratch.median_epochs},
                                           {"epochs_to_threshold", result.scratch.epochs_to_threshold}}},
                              {"config", gkm::to_json(config)}};
        if (!summary_path.empty()) stage("output", [&] { write_file(summary_path, summary.dump(2) + "\n"); return 0; });
        std::cout << "arm          median_epochs_to_threshold\n";
        std::cout << "pretrained   " << result.pretrained.median_epochs << "\n";
        std::cout << "scratch      " << result.scratch.median_epochs << "\n";
        return 0;
      }

      const auto map = open_map(map_path);
      if (*s_run) {
        auto config = resolve_sim_config(sim_config, sim_seed);
        if (iterations) config.iterations = *iterations;
        const auto setup = stage("protocol", [&] { return protocol_setup(map, config); });
        const auto result = stage("protocol", [&] {
          return gkm::run_protocol(map, setup.subject, config.iterations, protocol_config(config));
        });
        if (!log_path.empty()) stage("output", [&] { write_file(log_path, gkm::to_json(result.log).dump() + "\n"); return 0; });
        std::cout << protocol_summary(result, setup, config).dump() << "\n";
        return 0;
      }
      // replay: the log carries the protocol seed; the subject comes from the same config.
      const auto log = stage("replay", [&] { return gkm::protocol_log_from_json(gkm::detail::read_json_file(log_path)); });
      auto config = resolve_sim_config(sim_config, log.config.seed);
      const auto setup = stage("replay", [&] { return protocol_setup(map, config); });
      const auto result = stage("replay", [&] { return gkm::replay_protocol(map, setup.subject, log); });
      json out = protocol_summary(result, setup, config);
      out["identical"] = result.log == log;
      std::cout << out.dump() << "\n";
      return result.log == log ? 0 : 1;
    }

    if (*serve_cmd) {
      auto map = open_map(map_path);
      const json snapshot = serve_config.empty() ? json::object() : stage("config", [&] {
        return gkm::detail::read_json_file(serve_config);
      });
      const auto address = stage("config", [&] {
        return bind.empty() ? gkm::bind_address_from_env() : gkm::parse_bind_address(bind);
      });
      const gkm::ServiceState state(std::move(map), snapshot);
      httplib::Server server;
      stage("startup", [&] {
        gkm::install_routes(server, state, ui_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(ui_dir));
        return 0;
      });
      int port = address.port;
      if (port == 0) {
        port = server.bind_to_any_port(address.host);
      } else if (!server.bind_to_port(address.host, port)) {
        port = -1;
      }
      if (port < 0) return report("startup", "bind_failed", "cannot bind " + address.host + ":" + std::to_string(address.port));
      std::cerr << json{{"listening", address.host + ":" + std::to_string(port)}}.dump() << std::endl;
      return server.listen_after_bind() ? 0 : report("startup", "listen_failed", "server stopped unexpectedly");
    }
  } catch (const Failure& f) {
    return report(f.stage, f.error.code(), f.error.what());
  } catch (const std::exception& e) {
    return report("internal", "internal", e.what());
  }
  return 0;
}

#pragma once

// Map persistence. The binary container is canonical; the JSON export is
// for debugging and for clients.
//
// Binary layout, all integers little-endian, doubles as IEEE-754 bit
// patterns in a u64, strings as u64 byte length followed by UTF-8 bytes:
//
//   header (56 bytes)
//     char[8]   magic "GKMMAP\0\1"
//     u32       schema_version
//     u32       dim
//     u64       entry_count
//     u8[32]    SHA-256 of the payload
//   payload
//     str       vocabulary hash (hex, may be empty)
//     str       provenance (compact JSON)
//     u8        has_vocabulary
//       [u64 corpus_size, u64 term_count, term_count x (str term, u64 df)]
//     entry_count x (str doc_id, u8 has_label, [str label], dim x f64)
//     u64       annotation_count, annotation_count x (str label, dim x f64)
//     som
//       u32 lattice_dim, lattice_dim x u64 axis_size, u64 weight_length,
//       u64 seed, node_count*weight_length x f64,
//       u64 phase_count, phase_count x (u64 dim, u64 epochs, f64 quantization_error)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "knowledge_map.hpp"

namespace gkm {

inline constexpr std::uint32_t kMapSchemaVersion = 1;
inline constexpr char kMapMagic[8] = {'G', 'K', 'M', 'M', 'A', 'P', '\0', '\1'};
inline constexpr std::size_t kMapHeaderSize = 8 + 4 + 4 + 8 + 32;

inline nlohmann::json to_json(const StabilityReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairwise_scores) pairs.push_back({{"run_a", p.run_a}, {"run_b", p.run_b}, {"score", p.score}});
  return {{"dim", r.dim}, {"pairwise_scores", std::move(pairs)}, {"mean_score", r.mean_score}, {"stabilized", r.stabilized}};
}

inline StabilityReport stability_report_from_json(const nlohmann::json& j) {
  StabilityReport r;
  r.dim = j.at("dim").get<std::size_t>();
  for (const auto& p : j.at("pairwise_scores")) {
    r.pairwise_scores.push_back(
        {p.at("run_a").get<std::size_t>(), p.at("run_b").get<std::size_t>(), p.at("score").get<double>()});
  }
  r.mean_score = j.at("mean_score").get<double>();
  r.stabilized = j.at("stabilized").get<bool>();
  return r;
}

inline nlohmann::json to_json(const Provenance& p) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : p.stability_reports) reports.push_back(to_json(r));
  return {{"config_hash", p.config_hash},
          {"seed", p.seed},
          {"run_seeds", p.run_seeds},
          {"chosen_run", p.chosen_run},
          {"stability_reports", std::move(reports)},
          {"created_at", p.created_at ? nlohmann::json(*p.created_at) : nlohmann::json(nullptr)},
          {"estimates", p.estimates}};
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.config_hash = j.at("config_hash").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.run_seeds = j.at("run_seeds").get<std::vector<std::uint64_t>>();
  p.chosen_run = j.at("chosen_run").get<std::size_t>();
  for (const auto& r : j.at("stability_reports")) p.stability_reports.push_back(stability_report_from_json(r));
  if (!j.at("created_at").is_null()) p.created_at = j.at("created_at").get<std::string>();
  p.estimates = j.at("estimates");
  return p;
}

namespace detail {

class ByteWriter {
public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes_.append(s);
  }
  void raw(std::span<const char> data) { bytes_.append(data.data(), data.size()); }

  std::string& bytes() noexcept { return bytes_; }

private:
  std::string bytes_;
};

class ByteReader {
public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    if (n > remaining()) throw Error("corrupt", "string length exceeds map payload");
    return std::string(take(static_cast<std::size_t>(n)));
  }
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw Error("corrupt", "unexpected end of map payload");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline Vector read_coords(ByteReader& in, std::size_t dim) {
  Vector v(dim);
  for (auto& x : v) x = in.f64();
  return v;
}

}  // namespace detail

inline std::string serialize_map(const KnowledgeMap& map) {
  detail::ByteWriter payload;
  payload.str(map.vocabulary_hash());
  payload.str(to_json(map.provenance()).dump());

  payload.u8(map.vocabulary() ? 1 : 0);
  if (const auto& vocab = map.vocabulary()) {
    payload.u64(vocab->corpus_size());
    payload.u64(vocab->size());
    for (std::size_t i = 0; i < vocab->size(); ++i) {
      payload.str(vocab->terms()[i]);
      payload.u64(vocab->document_frequency()[i]);
    }
  }

  for (const auto& e : map.entries()) {
    payload.str(e.doc_id);
    payload.u8(e.topic_label ? 1 : 0);
    if (e.topic_label) payload.str(*e.topic_label);
    for (double c : e.coords) payload.f64(c);
  }
  payload.u64(map.annotations().size());
  for (const auto& a : map.annotations()) {
    payload.str(a.label);
    for (double c : a.coords) payload.f64(c);
  }

  const Som& som = map.som();
  payload.u32(static_cast<std::uint32_t>(som.dim()));
  for (auto s : som.axis_sizes()) payload.u64(s);
  payload.u64(som.weight_length());
  payload.u64(som.seed());
  for (double w : som.weight_data()) payload.f64(w);
  payload.u64(som.training_log().size());
  for (const auto& phase : som.training_log()) {
    payload.u64(phase.dim);
    payload.u64(phase.epochs);
    payload.f64(phase.quantization_error);
  }

  const auto& body = payload.bytes();
  const auto digest = sha256({reinterpret_cast<const unsigned char*>(body.data()), body.size()});

  detail::ByteWriter out;
  out.raw(kMapMagic);
  out.u32(kMapSchemaVersion);
  out.u32(static_cast<std::uint32_t>(map.dim()));
  out.u64(map.size());
  out.raw({reinterpret_cast<const char*>(digest.data()), digest.size()});
  out.raw(body);
  return std::move(out.bytes());
}

inline KnowledgeMap deserialize_map(std::string_view bytes) {
  if (bytes.size() < sizeof(kMapMagic) || std::memcmp(bytes.data(), kMapMagic, sizeof(kMapMagic)) != 0) {
    if (bytes.size() < sizeof(kMapMagic) && bytes == std::string_view(kMapMagic, bytes.size())) {
      throw Error("checksum", "map file truncated inside the header");
    }
    throw Error("not_a_map", "not a knowledge map file (bad magic)");
  }
  if (bytes.size() < kMapHeaderSize) throw Error("checksum", "map file truncated inside the header");

  detail::ByteReader header(bytes.substr(0, kMapHeaderSize));
  header.take(sizeof(kMapMagic));
  const auto version = header.u32();
  if (version != kMapSchemaVersion) {
    throw Error("version_mismatch", "map schema version " + std::to_string(version) + " is not supported (expected " +
                                        std::to_string(kMapSchemaVersion) + ")");
  }
  const std::size_t dim = header.u32();
  const auto entry_count = header.u64();
  const auto stored = header.take(32);

  const auto body = bytes.substr(kMapHeaderSize);
  const auto digest = sha256({reinterpret_cast<const unsigned char*>(body.data()), body.size()});
  if (std::memcmp(stored.data(), digest.data(), digest.size()) != 0) {
    throw Error("checksum", "map payload checksum mismatch (file truncated or corrupted)");
  }

  detail::ByteReader in(body);
  std::string vocab_hash = in.str();
  Provenance provenance;
  try {
    provenance = provenance_from_json(nlohmann::json::parse(in.str()));
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt", std::string("provenance is not valid: ") + e.what());
  }

  std::optional<Vocabulary> vocabulary;
  if (in.u8()) {
    const auto corpus_size = in.u64();
    const auto count = in.u64();
    std::vector<std::string> terms;
    std::vector<std::size_t> df;
    for (std::uint64_t i = 0; i < count; ++i) {
      terms.push_back(in.str());
      df.push_back(in.u64());
    }
    vocabulary = Vocabulary(std::move(terms), std::move(df), corpus_size);
  }

  std::vector<MapEntry> entries;
  for (std::uint64_t i = 0; i < entry_count; ++i) {
    MapEntry e;
    e.doc_id = in.str();
    if (in.u8()) e.topic_label = in.str();
    e.coords = detail::read_coords(in, dim);
    entries.push_back(std::move(e));
  }
  std::vector<Annotation> annotations(in.u64());
  for (auto& a : annotations) {
    a.label = in.str();
    a.coords = detail::read_coords(in, dim);
  }

  const std::size_t lattice_dim = in.u32();
  std::vector<std::size_t> axes(lattice_dim);
  for (auto& s : axes) s = in.u64();
  const auto weight_length = in.u64();
  const auto seed = in.u64();
  Som som(axes, weight_length, seed);
  for (auto& w : som.weight_data()) w = in.f64();
  const auto phases = in.u64();
  for (std::uint64_t i = 0; i < phases; ++i) {
    PhaseSummary phase;
    phase.dim = in.u64();
    phase.epochs = in.u64();
    phase.quantization_error = in.f64();
    som.training_log().push_back(phase);
  }
  if (in.remaining() != 0) throw Error("corrupt", "trailing bytes after map payload");
  if (som.dim() != dim) throw Error("corrupt", "SOM dimensionality differs from map dimensionality");

  return KnowledgeMap(std::move(entries), std::move(som), std::move(vocabulary), std::move(vocab_hash),
                      std::move(provenance), std::move(annotations));
}

inline void save_map(const KnowledgeMap& map, const std::filesystem::path& path) {
  const auto bytes = serialize_map(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("unwritable", "cannot write map file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("unwritable", "failed writing map file " + path.string());
}

inline KnowledgeMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("unreadable", "cannot read map file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_map(bytes);
}

// Debug export: everything except the SOM weights, which are summarised.
inline nlohmann::json to_json(const KnowledgeMap& map) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : map.entries()) {
    nlohmann::json j = {{"doc_id", e.doc_id}, {"coords", e.coords}};
    if (e.topic_label) j["topic_label"] = *e.topic_label;
    entries.push_back(std::move(j));
  }
  nlohmann::json annotations = nlohmann::json::array();
  for (const auto& a : map.annotations()) annotations.push_back({{"label", a.label}, {"coords", a.coords}});
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : map.som().training_log()) {
    phases.push_back({{"dim", p.dim}, {"epochs", p.epochs}, {"quantization_error", p.quantization_error}});
  }
  return {{"schema_version", kMapSchemaVersion},
          {"dim", map.dim()},
          {"entry_count", map.size()},
          {"vocabulary_hash", map.vocabulary_hash()},
          {"vocabulary_size", map.vocabulary() ? map.vocabulary()->size() : 0},
          {"provenance", to_json(map.provenance())},
          {"entries", std::move(entries)},
          {"annotations", std::move(annotations)},
          {"som",
           {{"axis_sizes", map.som().axis_sizes()},
            {"weight_length", map.som().weight_length()},
            {"seed", map.som().seed()},
            {"training_log", std::move(phases)}}}};
}

}  // namespace gkm

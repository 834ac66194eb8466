#pragma once

// Document ingestion and the tf-idf vector space model.

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace gkm {

inline constexpr int kCorpusSchemaVersion = 1;

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> source_uri;
  std::optional<std::string> topic_label;  // ground truth for synthetic corpora, never used in training
};

class Vocabulary {
public:
  Vocabulary() = default;

  Vocabulary(std::vector<std::string> terms, std::vector<std::size_t> document_frequency,
             std::size_t corpus_size)
      : terms_(std::move(terms)), df_(std::move(document_frequency)), corpus_size_(corpus_size) {
    if (terms_.size() != df_.size()) {
      throw Error("invalid_vocabulary", "terms and document frequencies differ in length");
    }
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (df_[i] < 1 || df_[i] > corpus_size_) {
        throw Error("invalid_vocabulary", "document frequency out of range for term '" + terms_[i] + "'");
      }
      if (!index_.emplace(terms_[i], i).second) {
        throw Error("invalid_vocabulary", "duplicate term '" + terms_[i] + "'");
      }
    }
  }

  std::size_t size() const noexcept { return terms_.size(); }
  std::size_t corpus_size() const noexcept { return corpus_size_; }
  const std::vector<std::string>& terms() const noexcept { return terms_; }
  const std::vector<std::size_t>& document_frequency() const noexcept { return df_; }

  std::optional<std::size_t> find(std::string_view term) const {
    auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Smoothed inverse document frequency; never zero, even for ubiquitous terms.
  double idf(std::size_t term) const {
    return std::log((1.0 + static_cast<double>(corpus_size_)) /
                    (1.0 + static_cast<double>(df_[term]))) + 1.0;
  }

  std::string content_hash() const {
    std::string canonical = std::to_string(corpus_size_) + '\n';
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      canonical += terms_[i];
      canonical += '\t';
      canonical += std::to_string(df_[i]);
      canonical += '\n';
    }
    return sha256_hex(canonical);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.corpus_size_ == b.corpus_size_ && a.terms_ == b.terms_ && a.df_ == b.df_;
  }

private:
  std::vector<std::string> terms_;
  std::vector<std::size_t> df_;
  std::size_t corpus_size_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

struct FeatureVector {
  std::string doc_id;
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by term index
  double l2_norm = 0.0;

  Vector dense(std::size_t width) const {
    Vector out(width, 0.0);
    for (const auto& [index, weight] : entries) out.at(index) = weight;
    return out;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct VocabularyConfig {
  std::size_t min_df = 1;
  double max_df_ratio = 1.0;
  std::size_t max_terms = 2000;
};

// Lowercased runs of letters/digits, split on every other code point.
// Tokens shorter than two code points are dropped.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t current_len = 0;
  auto flush = [&] {
    if (current_len >= 2) tokens.push_back(current);
    current.clear();
    current_len = 0;
  };

  const auto* bytes = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t offset = 0;
  while (offset < length) {
    UChar32 cp;
    U8_NEXT(bytes, offset, length, cp);
    if (cp < 0 || !u_isalnum(cp)) {
      flush();
      continue;
    }
    const UChar32 lower = u_tolower(cp);
    std::uint8_t buf[U8_MAX_LENGTH];
    std::int32_t n = 0;
    U8_APPEND_UNSAFE(buf, n, lower);
    current.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
    ++current_len;
  }
  flush();
  return tokens;
}

// Document-frequency feature selection. Term order is descending df, ties
// lexicographic; that order defines the feature axes.
inline Vocabulary build_vocabulary(std::span<const Document> docs, const VocabularyConfig& config) {
  if (docs.empty()) throw Error("empty_corpus", "docs non-empty violated");
  if (!(config.max_df_ratio > 0.0 && config.max_df_ratio <= 1.0)) {
    throw Error("invalid_config", "max_df_ratio must lie in (0, 1]");
  }
  if (config.min_df < 1) throw Error("invalid_config", "min_df must be at least 1");

  std::map<std::string, std::size_t> df;
  for (const auto& doc : docs) {
    auto tokens = tokenize(doc.text);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens) ++df[std::move(t)];
  }

  const double n = static_cast<double>(docs.size());
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [term, count] : df) {
    if (count >= config.min_df && static_cast<double>(count) / n <= config.max_df_ratio) {
      kept.emplace_back(term, count);
    }
  }
  if (kept.empty()) throw Error("empty_vocabulary", "zero terms survive filtering");

  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (kept.size() > config.max_terms) kept.resize(config.max_terms);

  std::vector<std::string> terms;
  std::vector<std::size_t> freqs;
  for (auto& [term, count] : kept) {
    terms.push_back(std::move(term));
    freqs.push_back(count);
  }
  return Vocabulary(std::move(terms), std::move(freqs), docs.size());
}

inline FeatureVector vectorize_text(std::string doc_id, std::string_view text, const Vocabulary& vocab) {
  std::map<std::uint32_t, double> tf;
  for (const auto& token : tokenize(text)) {
    if (auto idx = vocab.find(token)) tf[static_cast<std::uint32_t>(*idx)] += 1.0;
  }
  if (tf.empty()) {
    throw Error("unmappable", "document '" + doc_id + "' has no in-vocabulary terms");
  }

  FeatureVector fv;
  fv.doc_id = std::move(doc_id);
  fv.entries.reserve(tf.size());
  double sum_sq = 0.0;
  for (const auto& [idx, count] : tf) {
    const double w = count * vocab.idf(idx);
    fv.entries.emplace_back(idx, w);
    sum_sq += w * w;
  }
  const double norm = std::sqrt(sum_sq);
  for (auto& entry : fv.entries) entry.second /= norm;
  fv.l2_norm = 1.0;
  return fv;
}

inline FeatureVector vectorize(const Document& doc, const Vocabulary& vocab) {
  return vectorize_text(doc.id, doc.text, vocab);
}

struct UnmappableDocument {
  std::string doc_id;
  std::string reason;
};

struct IngestResult {
  Vocabulary vocabulary;
  std::vector<Document> documents;  // mapped documents, aligned with vectors
  std::vector<FeatureVector> vectors;
  std::vector<UnmappableDocument> unmappable;
};

namespace detail {

inline std::vector<Document> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("unreadable", "cannot read corpus file " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("malformed_record", where + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("id") || !record["id"].is_string() ||
        !record.contains("text") || !record["text"].is_string()) {
      throw Error("malformed_record", where + ": expected string fields 'id' and 'text'");
    }
    Document doc;
    doc.id = record["id"].get<std::string>();
    doc.text = record["text"].get<std::string>();
    if (doc.id.empty()) throw Error("malformed_record", where + ": empty id");
    if (auto it = record.find("topic_label"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) throw Error("malformed_record", where + ": topic_label must be a string");
      doc.topic_label = it->get<std::string>();
    }
    if (auto it = record.find("source_uri"); it != record.end() && it->is_string()) {
      doc.source_uri = it->get<std::string>();
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline std::vector<Document> read_text_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  std::error_code ec;
  for (fs::recursive_directory_iterator it(root, ec), end; it != end; it.increment(ec)) {
    if (ec) break;
    if (it->is_regular_file() && it->path().extension() == ".txt") files.push_back(it->path());
  }
  if (ec) throw Error("unreadable", "cannot list corpus directory " + root.string());
  std::sort(files.begin(), files.end());

  std::vector<Document> docs;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("unreadable", "cannot read " + file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    Document doc;
    doc.id = fs::relative(file, root).generic_string();
    doc.text = buf.str();
    doc.source_uri = file.generic_string();
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace detail

// A directory of *.txt files (id = relative path) or a JSON-lines file.
inline std::vector<Document> read_documents(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(path, ec)) throw Error("unreadable", "corpus path does not exist: " + path.string());
  auto docs = fs::is_directory(path, ec) ? detail::read_text_directory(path) : detail::read_jsonl(path);

  std::unordered_set<std::string> seen;
  for (const auto& doc : docs) {
    if (!seen.insert(doc.id).second) throw Error("malformed_record", "duplicate document id '" + doc.id + "'");
  }
  return docs;
}

// Documents are processed in id order, so the result does not depend on
// the order in which they were supplied.
inline IngestResult ingest_documents(std::vector<Document> docs, const VocabularyConfig& config) {
  if (docs.empty()) throw Error("empty_corpus", "docs non-empty violated");
  std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < docs.size(); ++i) {
    if (docs[i].id == docs[i - 1].id) throw Error("malformed_record", "duplicate document id '" + docs[i].id + "'");
  }

  IngestResult result;
  result.vocabulary = build_vocabulary(docs, config);
  for (auto& doc : docs) {
    if (doc.text.empty()) {
      result.unmappable.push_back({doc.id, "empty text"});
      continue;
    }
    try {
      result.vectors.push_back(vectorize(doc, result.vocabulary));
      result.documents.push_back(std::move(doc));
    } catch (const Error& e) {
      if (e.code() != "unmappable") throw;
      result.unmappable.push_back({doc.id, "no in-vocabulary terms"});
    }
  }
  if (result.vectors.empty()) throw Error("empty_corpus", "no document could be vectorized");
  return result;
}

inline IngestResult ingest_corpus(const std::filesystem::path& path, const VocabularyConfig& config) {
  return ingest_documents(read_documents(path), config);
}

inline nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  return {{"corpus_size", vocab.corpus_size()},
          {"terms", vocab.terms()},
          {"document_frequency", vocab.document_frequency()}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  return Vocabulary(j.at("terms").get<std::vector<std::string>>(),
                    j.at("document_frequency").get<std::vector<std::size_t>>(),
                    j.at("corpus_size").get<std::size_t>());
}

inline nlohmann::json to_json(const IngestResult& result) {
  nlohmann::json vectors = nlohmann::json::array();
  for (const auto& fv : result.vectors) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [idx, w] : fv.entries) entries.push_back({idx, w});
    vectors.push_back({{"doc_id", fv.doc_id}, {"l2_norm", fv.l2_norm}, {"entries", std::move(entries)}});
  }
  nlohmann::json unmappable = nlohmann::json::array();
  for (const auto& u : result.unmappable) unmappable.push_back({{"doc_id", u.doc_id}, {"reason", u.reason}});
  return {{"schema_version", kCorpusSchemaVersion},
          {"vocabulary", vocabulary_to_json(result.vocabulary)},
          {"vectors", std::move(vectors)},
          {"unmappable", std::move(unmappable)}};
}

inline std::vector<Vector> dense_vectors(std::span<const FeatureVector> vectors, std::size_t width) {
  std::vector<Vector> out;
  out.reserve(vectors.size());
  for (const auto& fv : vectors) out.push_back(fv.dense(width));
  return out;
}

}  // namespace gkm

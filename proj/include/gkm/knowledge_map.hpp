#pragma once

// The knowledge map: document coordinates in one global D-dimensional
// Euclidean frame, the SOM retained to place new text in that frame, and
// the queries that browse it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "som.hpp"

namespace gkm {

struct MapEntry {
  std::string doc_id;
  Vector coords;
  std::optional<std::string> topic_label;

  friend bool operator==(const MapEntry&, const MapEntry&) = default;
};

// Externally supplied label pinned to a coordinate (e.g. a topic name).
struct Annotation {
  std::string label;
  Vector coords;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> run_seeds;
  std::size_t chosen_run = 0;
  std::vector<StabilityReport> stability_reports;
  std::optional<std::string> created_at;
  nlohmann::json estimates = nlohmann::json::object();

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

class KnowledgeMap {
public:
  KnowledgeMap() = default;

  KnowledgeMap(std::vector<MapEntry> entries, Som som, std::optional<Vocabulary> vocabulary,
               std::string vocabulary_hash, Provenance provenance, std::vector<Annotation> annotations = {})
      : dim_(som.dim()),
        entries_(std::move(entries)),
        som_(std::move(som)),
        vocabulary_(std::move(vocabulary)),
        vocabulary_hash_(std::move(vocabulary_hash)),
        provenance_(std::move(provenance)),
        annotations_(std::move(annotations)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const MapEntry& a, const MapEntry& b) { return a.doc_id < b.doc_id; });
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].coords.size() != dim_) {
        throw Error("dimension_mismatch", "entry '" + entries_[i].doc_id + "' has the wrong coordinate length");
      }
      if (i > 0 && entries_[i].doc_id == entries_[i - 1].doc_id) {
        throw Error("duplicate_id", "duplicate map entry '" + entries_[i].doc_id + "'");
      }
    }
    for (const auto& a : annotations_) {
      if (a.coords.size() != dim_) throw Error("dimension_mismatch", "annotation '" + a.label + "' has the wrong length");
    }
    if (vocabulary_) {
      if (vocabulary_hash_.empty()) vocabulary_hash_ = vocabulary_->content_hash();
      if (vocabulary_hash_ != vocabulary_->content_hash()) {
        throw Error("vocabulary_mismatch", "vocabulary does not match the recorded vocabulary hash");
      }
      if (vocabulary_->size() != som_.weight_length()) {
        throw Error("dimension_mismatch", "vocabulary size does not match SOM weight length");
      }
    }
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<MapEntry>& entries() const noexcept { return entries_; }
  const Som& som() const noexcept { return som_; }
  const std::optional<Vocabulary>& vocabulary() const noexcept { return vocabulary_; }
  const std::string& vocabulary_hash() const noexcept { return vocabulary_hash_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  const std::vector<Annotation>& annotations() const noexcept { return annotations_; }

  const MapEntry* find(std::string_view id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                               [](const MapEntry& e, std::string_view key) { return e.doc_id < key; });
    return it != entries_.end() && it->doc_id == id ? &*it : nullptr;
  }

  const MapEntry& at(std::string_view id) const {
    if (const auto* entry = find(id)) return *entry;
    throw Error("unknown_id", "no map entry with id '" + std::string(id) + "'");
  }

  friend bool operator==(const KnowledgeMap& a, const KnowledgeMap& b) {
    return a.dim_ == b.dim_ && a.entries_ == b.entries_ && a.som_ == b.som_ && a.vocabulary_ == b.vocabulary_ &&
           a.vocabulary_hash_ == b.vocabulary_hash_ && a.provenance_ == b.provenance_ &&
           a.annotations_ == b.annotations_;
  }

private:
  std::size_t dim_ = 0;
  std::vector<MapEntry> entries_;
  Som som_;
  std::optional<Vocabulary> vocabulary_;
  std::string vocabulary_hash_;
  Provenance provenance_;
  std::vector<Annotation> annotations_;
};

struct MapBuildOptions {
  std::optional<Vocabulary> vocabulary;
  std::vector<std::optional<std::string>> topic_labels;  // empty, or aligned with doc_ids
  std::vector<Annotation> annotations;
  Provenance provenance;  // run seeds, chosen run and reports are filled in by build_map
};

// Mean pairwise stability of each run against the others in the final report.
inline std::vector<double> run_agreement(std::size_t runs, const StabilityReport& report) {
  std::vector<double> sum(runs, 0.0);
  std::vector<std::size_t> count(runs, 0);
  for (const auto& p : report.pairwise_scores) {
    if (p.run_a >= runs || p.run_b >= runs) throw Error("invalid_report", "stability report names an unknown run");
    sum[p.run_a] += p.score;
    sum[p.run_b] += p.score;
    ++count[p.run_a];
    ++count[p.run_b];
  }
  for (std::size_t r = 0; r < runs; ++r) sum[r] = count[r] ? sum[r] / static_cast<double>(count[r]) : 0.0;
  return sum;
}

// Chooses the run that agrees best with the others (ties: lowest seed) and
// projects every document through it.
inline KnowledgeMap build_map(std::span<const Som> soms, std::span<const StabilityReport> reports,
                              std::span<const Vector> vectors, std::span<const std::string> doc_ids,
                              MapBuildOptions options = {}) {
  if (soms.empty()) throw Error("invalid_argument", "build_map needs at least one SOM");
  if (vectors.size() != doc_ids.size()) throw Error("invalid_argument", "vectors and doc_ids are not aligned");
  if (!options.topic_labels.empty() && options.topic_labels.size() != doc_ids.size()) {
    throw Error("invalid_argument", "topic labels are not aligned with doc_ids");
  }
  for (const auto& som : soms) {
    if (som.dim() != soms.front().dim() || som.weight_length() != soms.front().weight_length()) {
      throw Error("dimension_mismatch", "all runs must share dimensionality and weight length");
    }
  }

  std::size_t chosen = 0;
  if (soms.size() > 1 && !reports.empty()) {
    const auto agreement = run_agreement(soms.size(), reports.back());
    for (std::size_t r = 1; r < soms.size(); ++r) {
      if (agreement[r] > agreement[chosen] ||
          (agreement[r] == agreement[chosen] && soms[r].seed() < soms[chosen].seed())) {
        chosen = r;
      }
    }
  }

  const Som& som = soms[chosen];
  std::vector<MapEntry> entries;
  entries.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    MapEntry entry{doc_ids[i], project(som, vectors[i]), std::nullopt};
    if (!options.topic_labels.empty()) entry.topic_label = options.topic_labels[i];
    entries.push_back(std::move(entry));
  }

  Provenance provenance = std::move(options.provenance);
  provenance.run_seeds.clear();
  for (const auto& s : soms) provenance.run_seeds.push_back(s.seed());
  provenance.chosen_run = chosen;
  provenance.stability_reports.assign(reports.begin(), reports.end());

  std::string vocab_hash = options.vocabulary ? options.vocabulary->content_hash() : std::string{};
  return KnowledgeMap(std::move(entries), som, std::move(options.vocabulary), std::move(vocab_hash),
                      std::move(provenance), std::move(options.annotations));
}

inline double relevance(const KnowledgeMap& map, std::string_view id_a, std::string_view id_b) {
  return std::sqrt(squared_distance(map.at(id_a).coords, map.at(id_b).coords));
}

struct NeighborResult {
  std::string doc_id;
  double distance = 0.0;
  std::size_t rank = 0;

  friend bool operator==(const NeighborResult&, const NeighborResult&) = default;
};

namespace detail {

inline std::vector<NeighborResult> nearest(const KnowledgeMap& map, std::span<const double> query, std::size_t k,
                                           std::string_view exclude) {
  std::vector<NeighborResult> all;
  all.reserve(map.size());
  for (const auto& e : map.entries()) {
    if (!exclude.empty() && e.doc_id == exclude) continue;
    all.push_back({e.doc_id, std::sqrt(squared_distance(e.coords, query)), 0});
  }
  const auto less = [](const NeighborResult& a, const NeighborResult& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.doc_id < b.doc_id;
  };
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), less);
  all.resize(take);
  for (std::size_t i = 0; i < all.size(); ++i) all[i].rank = i + 1;
  return all;
}

}  // namespace detail

// k nearest stored documents to a stored document (itself excluded).
inline std::vector<NeighborResult> neighbors(const KnowledgeMap& map, std::string_view id, std::size_t k) {
  const auto& entry = map.at(id);
  return detail::nearest(map, entry.coords, k, entry.doc_id);
}

// k nearest stored documents to an arbitrary point of the map space.
inline std::vector<NeighborResult> neighbors(const KnowledgeMap& map, std::span<const double> coords, std::size_t k) {
  if (coords.size() != map.dim()) {
    throw Error("dimension_mismatch", "query has " + std::to_string(coords.size()) + " coordinates, map has " +
                                          std::to_string(map.dim()));
  }
  return detail::nearest(map, coords, k, {});
}

inline Vector locate_text(const KnowledgeMap& map, std::string_view text, const Vocabulary& vocab) {
  if (!map.vocabulary_hash().empty() && vocab.content_hash() != map.vocabulary_hash()) {
    throw Error("vocabulary_mismatch", "vocabulary does not belong to this map");
  }
  const auto fv = vectorize_text("query", text, vocab);
  return project(map.som(), fv.dense(vocab.size()));
}

inline Vector locate_text(const KnowledgeMap& map, std::string_view text) {
  if (!map.vocabulary()) throw Error("no_vocabulary", "map carries no vocabulary");
  return locate_text(map, text, *map.vocabulary());
}

struct ViewProjection {
  std::size_t target_dim = 0;
  Vector center;                          // subtracted before projecting
  std::vector<Vector> basis;              // target_dim rows of length dim
  std::vector<std::pair<std::string, Vector>> view_coords;

  Vector apply(std::span<const double> coords) const {
    Vector out(target_dim, 0.0);
    for (std::size_t c = 0; c < target_dim; ++c) {
      for (std::size_t i = 0; i < coords.size(); ++i) out[c] += basis[c][i] * (coords[i] - center[i]);
    }
    return out;
  }
};

// PCA of the stored coordinates. Each basis vector's largest-magnitude
// element is made positive; when the map has fewer axes than target_dim the
// extra rows are zero.
inline ViewProjection project_to_view(const KnowledgeMap& map, std::size_t target_dim) {
  if (target_dim != 2 && target_dim != 3) throw Error("invalid_argument", "view dimension must be 2 or 3");
  if (map.size() < target_dim + 1) {
    throw Error("too_few_entries", "a " + std::to_string(target_dim) + "-D view needs at least " +
                                       std::to_string(target_dim + 1) + " entries");
  }
  const auto d = static_cast<Eigen::Index>(map.dim());
  const auto n = static_cast<Eigen::Index>(map.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = map.entries()[static_cast<std::size_t>(i)].coords[static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("numerical", "eigendecomposition did not converge");

  ViewProjection view;
  view.target_dim = target_dim;
  view.center.assign(mean.data(), mean.data() + d);
  for (std::size_t c = 0; c < target_dim; ++c) {
    Vector row(map.dim(), 0.0);
    if (static_cast<Eigen::Index>(c) < d) {
      const Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - static_cast<Eigen::Index>(c));  // descending
      Eigen::Index pivot = 0;
      for (Eigen::Index i = 1; i < d; ++i) {
        if (std::abs(v(i)) > std::abs(v(pivot))) pivot = i;
      }
      const double sign = v(pivot) < 0.0 ? -1.0 : 1.0;
      for (Eigen::Index i = 0; i < d; ++i) row[static_cast<std::size_t>(i)] = sign * v(i);
    }
    view.basis.push_back(std::move(row));
  }
  for (const auto& e : map.entries()) view.view_coords.emplace_back(e.doc_id, view.apply(e.coords));
  return view;
}

}  // namespace gkm

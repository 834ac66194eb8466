#pragma once

// Independent oracles and fixtures shared by the test binaries. Nothing here
// calls into the code under test except to construct inputs.

#include <gkm/knowledge_map.hpp>
#include <gkm/synthetic.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace support {

using Matrix = std::vector<std::vector<double>>;

// Cyclic Jacobi rotations; returns eigenvalues of a symmetric matrix in
// descending order.
inline std::vector<double> jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

// Sample covariance (divisor n - 1), built with plain loops.
inline Matrix covariance(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), d = x.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j] / static_cast<double>(n);
  Matrix c(d, std::vector<double>(d, 0.0));
  for (const auto& row : x)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) c[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]);
  for (auto& r : c)
    for (auto& v : r) v /= static_cast<double>(n - 1);
  return c;
}

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Full sort of every entry by (distance, id); the reference for neighbour queries.
inline std::vector<std::pair<std::string, double>> brute_force_neighbors(const gkm::KnowledgeMap& map,
                                                                         const std::vector<double>& query,
                                                                         std::size_t k, const std::string& exclude) {
  std::vector<std::pair<std::string, double>> all;
  for (const auto& e : map.entries()) {
    if (e.doc_id == exclude) continue;
    all.emplace_back(e.doc_id, euclid(e.coords, query));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// Map with the given coordinates and a throwaway lattice of matching dimension.
inline gkm::KnowledgeMap map_from_points(const std::vector<std::vector<double>>& points) {
  const std::size_t dim = points.front().size();
  std::vector<gkm::MapEntry> entries;
  for (std::size_t i = 0; i < points.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "d%04zu", i);
    entries.push_back({id, points[i], std::nullopt});
  }
  gkm::Som som(std::vector<std::size_t>(dim, 2), 1, 1);
  return gkm::KnowledgeMap(std::move(entries), std::move(som), std::nullopt, "", gkm::Provenance{});
}

inline gkm::KnowledgeMap random_map(std::mt19937_64& rng, std::size_t entries, std::size_t dim, bool lattice = false) {
  std::vector<std::vector<double>> points(entries, std::vector<double>(dim));
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_int_distribution<int> cell(0, 3);
  for (auto& p : points)
    for (auto& x : p) x = lattice ? cell(rng) : u(rng);
  return map_from_points(points);
}

class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("gkm-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Synthetic topic corpus written as JSON lines (id, text, topic_label).
inline std::vector<gkm::Document> write_topic_corpus(const std::filesystem::path& path,
                                                     const gkm::SyntheticCorpusConfig& config) {
  auto corpus = gkm::synthetic_topic_corpus(config);
  std::string out;
  for (const auto& d : corpus.documents) {
    out += nlohmann::json{{"id", d.id}, {"text", d.text}, {"topic_label", *d.topic_label}}.dump() + "\n";
  }
  write_file(path, out);
  return corpus.documents;
}

inline gkm::SyntheticCorpusConfig tiny_corpus_config() {
  gkm::SyntheticCorpusConfig c;
  c.topics = 3;
  c.documents = 45;
  c.latent_dim = 2;
  c.vocabulary = 80;
  c.doc_length = 120;
  c.min_topic_separation = 0.8;
  return c;
}

}  // namespace support

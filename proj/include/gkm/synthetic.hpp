#pragma once

// Synthetic topic corpora for experiments and tests.
//
// Vocabulary terms and topics both sit at positions in a latent unit cube.
// A topic is a term distribution: a Gaussian kernel over latent distance
// centred on the topic position. Each document jitters its topic's position
// slightly and draws its tokens from the kernel around that point, plus a
// small uniform background. Nearby topics therefore share vocabulary, and
// the corpus has a planted latent_dim-dimensional geometry.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"

namespace gkm {

struct SyntheticCorpusConfig {
  std::size_t topics = 20;
  std::size_t documents = 500;
  std::size_t latent_dim = 3;
  std::size_t vocabulary = 300;
  std::size_t doc_length = 400;
  double bandwidth = 0.3;
  double doc_spread = 0.09;  // std-dev of a document's offset from its topic position
  double min_topic_separation = 0.3;
  double background_share = 0.05;
  std::size_t background_terms = 40;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<Document> documents;
  std::vector<Vector> topic_positions;
  std::vector<Vector> term_positions;
};

// Deterministic pronounceable word for a term index.
inline std::string synthetic_word(std::size_t index) {
  static constexpr const char* syllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo",
                                              "ze", "pa", "qu", "do", "fe", "gi", "hu", "ba"};
  std::string word;
  std::size_t rest = index;
  do {
    word += syllables[rest % 16];
    rest /= 16;
  } while (rest > 0);
  return word + "x";
}

inline std::string topic_name(std::size_t topic) {
  std::string id = std::to_string(topic);
  return "topic" + std::string(id.size() < 2 ? 2 - id.size() : 0, '0') + id;
}

inline SyntheticCorpus synthetic_topic_corpus(const SyntheticCorpusConfig& config) {
  if (config.topics == 0 || config.documents == 0 || config.vocabulary == 0 || config.latent_dim == 0 ||
      config.doc_length == 0 || !(config.bandwidth > 0.0)) {
    throw Error("invalid_config", "synthetic corpus needs positive topics, documents, vocabulary, "
                                  "latent_dim, doc_length and bandwidth");
  }
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);

  auto random_point = [&] {
    Vector p(config.latent_dim);
    for (auto& x : p) x = unit(rng);
    return p;
  };

  SyntheticCorpus corpus;
  // Rejection sampling for well-separated topics; the separation is relaxed
  // if the cube cannot hold that many topics.
  double separation = config.min_topic_separation;
  std::size_t attempts = 0;
  while (corpus.topic_positions.size() < config.topics) {
    auto candidate = random_point();
    bool ok = true;
    for (const auto& t : corpus.topic_positions) {
      if (std::sqrt(squared_distance(t, candidate)) < separation) {
        ok = false;
        break;
      }
    }
    if (ok) {
      corpus.topic_positions.push_back(std::move(candidate));
    } else if (++attempts % 10000 == 0) {
      separation *= 0.9;
    }
  }
  for (std::size_t w = 0; w < config.vocabulary; ++w) corpus.term_positions.push_back(random_point());

  const double two_h2 = 2.0 * config.bandwidth * config.bandwidth;
  std::uniform_int_distribution<std::size_t> background(0, config.background_terms ? config.background_terms - 1 : 0);
  const std::size_t width = std::to_string(config.documents).size();
  std::vector<double> kernel(config.vocabulary);

  for (std::size_t d = 0; d < config.documents; ++d) {
    const std::size_t topic = d % config.topics;
    Vector position = corpus.topic_positions[topic];
    for (auto& x : position) x += config.doc_spread * jitter(rng);
    for (std::size_t w = 0; w < config.vocabulary; ++w) {
      kernel[w] = std::exp(-squared_distance(position, corpus.term_positions[w]) / two_h2);
    }
    std::discrete_distribution<std::size_t> terms(kernel.begin(), kernel.end());

    std::string text;
    for (std::size_t k = 0; k < config.doc_length; ++k) {
      const std::size_t term = config.background_terms && unit(rng) < config.background_share
                                   ? config.vocabulary + background(rng)
                                   : terms(rng);
      if (!text.empty()) text += ' ';
      text += synthetic_word(term);
    }
    std::string num = std::to_string(d);
    Document doc;
    doc.id = "doc" + std::string(width - num.size(), '0') + num;
    doc.text = std::move(text);
    doc.topic_label = topic_name(topic);
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace gkm

#include <gtest/gtest.h>

#include <gkm/corpus.hpp>
#include <gkm/synthetic.hpp>

#include <algorithm>
#include <random>

#include "support.hpp"

using gkm::Document;
using gkm::Vocabulary;
using gkm::VocabularyConfig;

namespace {

std::vector<Document> three_docs() { return {{"a", "xx yy"}, {"b", "xx zz"}, {"c", "xx"}}; }

template <class F>
std::string error_code(F&& f) {
  try {
    f();
  } catch (const gkm::Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsOnPunctuation) {
  EXPECT_EQ(gkm::tokenize("Knowledge, Representation!"),
            (std::vector<std::string>{"knowledge", "representation"}));
}

TEST(Tokenize, EmptyText) { EXPECT_TRUE(gkm::tokenize("").empty()); }

TEST(Tokenize, DropsSingleCharacterTokens) {
  EXPECT_EQ(gkm::tokenize("a GKM-3 map"), (std::vector<std::string>{"gkm", "map"}));
}

TEST(Tokenize, UnicodeLettersAndDigits) {
  EXPECT_EQ(gkm::tokenize("Ärger über Straße 42x"), (std::vector<std::string>{"ärger", "über", "straße", "42x"}));
  // Length counts code points, not bytes: a lone "é" is one character.
  EXPECT_EQ(gkm::tokenize("é déjà"), (std::vector<std::string>{"déjà"}));
}

TEST(Tokenize, InvalidUtf8SplitsTokens) {
  EXPECT_EQ(gkm::tokenize(std::string("ab\xff" "cd")), (std::vector<std::string>{"ab", "cd"}));
}

TEST(BuildVocabulary, OrderIsDescendingDfThenLexicographic) {
  const auto docs = three_docs();
  const auto v = gkm::build_vocabulary(docs, {1, 1.0, 2000});
  EXPECT_EQ(v.terms(), (std::vector<std::string>{"xx", "yy", "zz"}));
  EXPECT_EQ(v.document_frequency(), (std::vector<std::size_t>{3, 1, 1}));
  EXPECT_EQ(v.corpus_size(), 3u);
}

TEST(BuildVocabulary, MaxDfRatioExcludesUbiquitousTerm) {
  const auto docs = three_docs();
  const auto v = gkm::build_vocabulary(docs, {1, 0.9, 2000});
  EXPECT_EQ(v.terms(), (std::vector<std::string>{"yy", "zz"}));
}

TEST(BuildVocabulary, MinDfUnreachableIsAnError) {
  const std::vector<Document> docs{{"a", "alpha beta"}};
  EXPECT_EQ(error_code([&] { gkm::build_vocabulary(docs, {2, 1.0, 2000}); }), "empty_vocabulary");
}

TEST(BuildVocabulary, MaxTermsKeepsHighestDfWithLexicographicTies) {
  const std::vector<Document> docs{{"a", "cc bb aa dd"}, {"b", "cc bb aa"}, {"c", "cc"}};
  const auto v = gkm::build_vocabulary(docs, {1, 1.0, 2});
  EXPECT_EQ(v.terms(), (std::vector<std::string>{"cc", "aa"}));
}

TEST(BuildVocabulary, RejectsBadConfig) {
  const auto docs = three_docs();
  EXPECT_EQ(error_code([&] { gkm::build_vocabulary(docs, {0, 1.0, 10}); }), "invalid_config");
  EXPECT_EQ(error_code([&] { gkm::build_vocabulary(docs, {1, 0.0, 10}); }), "invalid_config");
  EXPECT_EQ(error_code([&] { gkm::build_vocabulary(docs, {1, 1.5, 10}); }), "invalid_config");
  EXPECT_EQ(error_code([&] { gkm::build_vocabulary(std::vector<Document>{}, {}); }), "empty_corpus");
}

TEST(Vectorize, HandComputedTfIdf) {
  const auto docs = three_docs();
  const auto v = gkm::build_vocabulary(docs, {});
  // idf(xx) = ln(4/4) + 1 = 1, idf(yy) = ln(4/2) + 1; normalised by hand.
  const auto fv = gkm::vectorize(docs[0], v);
  ASSERT_EQ(fv.entries.size(), 2u);
  EXPECT_EQ(fv.entries[0].first, 0u);
  EXPECT_NEAR(fv.entries[0].second, 0.5085423203783267, 1e-12);
  EXPECT_EQ(fv.entries[1].first, 1u);
  EXPECT_NEAR(fv.entries[1].second, 0.8610369959439764, 1e-12);

  const auto tf2 = gkm::vectorize_text("q", "xx xx yy", v);
  EXPECT_NEAR(tf2.entries[0].second, 0.7632282916276542, 1e-12);
  EXPECT_NEAR(tf2.entries[1].second, 0.6461289150464732, 1e-12);
}

TEST(Vectorize, SingleTermHasUnitWeight) {
  const auto v = gkm::build_vocabulary(three_docs(), {});
  const auto fv = gkm::vectorize_text("q", "zz zz zz ZZ", v);
  ASSERT_EQ(fv.entries.size(), 1u);
  EXPECT_EQ(fv.entries[0].first, 2u);
  EXPECT_DOUBLE_EQ(fv.entries[0].second, 1.0);
}

TEST(Vectorize, SameMultisetSameVector) {
  const auto v = gkm::build_vocabulary(three_docs(), {});
  auto a = gkm::vectorize_text("q", "yy xx zz xx", v);
  auto b = gkm::vectorize_text("q", "xx zz, xx; YY", v);
  EXPECT_EQ(a, b);
}

TEST(Vectorize, NoKnownTermsIsUnmappable) {
  const auto v = gkm::build_vocabulary(three_docs(), {});
  EXPECT_EQ(error_code([&] { gkm::vectorize_text("q", "nothing here", v); }), "unmappable");
}

TEST(Ingest, TextDirectory) {
  support::TempDir dir;
  support::write_file(dir / "a.txt", "xx yy");
  support::write_file(dir / "b.txt", "xx zz");
  support::write_file(dir / "sub/c.txt", "xx");
  support::write_file(dir / "ignored.md", "qq rr");
  const auto r = gkm::ingest_corpus(dir.path(), {});
  EXPECT_EQ(r.vocabulary.terms(), (std::vector<std::string>{"xx", "yy", "zz"}));
  ASSERT_EQ(r.vectors.size(), 3u);
  EXPECT_EQ(r.vectors[0].doc_id, "a.txt");
  EXPECT_EQ(r.vectors[2].doc_id, "sub/c.txt");
  EXPECT_NEAR(r.vectors[0].entries[1].second, 0.8610369959439764, 1e-12);
}

TEST(Ingest, EmptyDirectory) {
  support::TempDir dir;
  try {
    gkm::ingest_corpus(dir.path(), {});
    FAIL() << "expected an error";
  } catch (const gkm::Error& e) {
    EXPECT_EQ(e.code(), "empty_corpus");
    EXPECT_STREQ(e.what(), "docs non-empty violated");
  }
}

TEST(Ingest, MissingPathNamesThePath) {
  try {
    gkm::ingest_corpus("/definitely/not/here.jsonl", {});
    FAIL() << "expected an error";
  } catch (const gkm::Error& e) {
    EXPECT_EQ(e.code(), "unreadable");
    EXPECT_NE(std::string(e.what()).find("/definitely/not/here.jsonl"), std::string::npos);
  }
}

TEST(Ingest, JsonLinesWithLabelsAndUnmappable) {
  support::TempDir dir;
  support::write_file(dir / "c.jsonl",
                      "{\"id\":\"d2\",\"text\":\"xx zz\",\"topic_label\":\"t1\"}\n"
                      "\n"
                      "{\"id\":\"d1\",\"text\":\"xx yy\"}\n"
                      "{\"id\":\"d3\",\"text\":\"\"}\n");
  const auto r = gkm::ingest_corpus(dir / "c.jsonl", {});
  ASSERT_EQ(r.documents.size(), 2u);
  EXPECT_EQ(r.documents[0].id, "d1");
  EXPECT_EQ(r.documents[1].topic_label, std::optional<std::string>("t1"));
  ASSERT_EQ(r.unmappable.size(), 1u);
  EXPECT_EQ(r.unmappable[0].doc_id, "d3");
}

TEST(Ingest, MalformedRecordReportsLine) {
  support::TempDir dir;
  support::write_file(dir / "c.jsonl", "{\"id\":\"a\",\"text\":\"xx\"}\n{\"id\": 3}\n");
  try {
    gkm::ingest_corpus(dir / "c.jsonl", {});
    FAIL();
  } catch (const gkm::Error& e) {
    EXPECT_EQ(e.code(), "malformed_record");
    EXPECT_NE(std::string(e.what()).find("c.jsonl:2"), std::string::npos);
  }
}

TEST(Ingest, DuplicateIdsRejected) {
  support::TempDir dir;
  support::write_file(dir / "c.jsonl", "{\"id\":\"a\",\"text\":\"xx\"}\n{\"id\":\"a\",\"text\":\"yy\"}\n");
  EXPECT_EQ(error_code([&] { gkm::ingest_corpus(dir / "c.jsonl", {}); }), "malformed_record");
}

TEST(Ingest, ReingestIsByteIdentical) {
  support::TempDir dir;
  support::write_file(dir / "a.txt", "alpha beta gamma");
  support::write_file(dir / "b.txt", "beta gamma delta delta");
  support::write_file(dir / "c.txt", "gamma epsilon");
  const auto a = gkm::to_json(gkm::ingest_corpus(dir.path(), {})).dump();
  const auto b = gkm::to_json(gkm::ingest_corpus(dir.path(), {})).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(nlohmann::json::parse(a).at("schema_version"), gkm::kCorpusSchemaVersion);
}

TEST(VocabularyJson, RoundTrip) {
  const auto v = gkm::build_vocabulary(three_docs(), {});
  const auto back = gkm::vocabulary_from_json(gkm::vocabulary_to_json(v));
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.content_hash(), v.content_hash());
}

TEST(VocabularyType, RejectsInvalidFrequencies) {
  EXPECT_EQ(error_code([] { Vocabulary({"aa"}, {0}, 3); }), "invalid_vocabulary");
  EXPECT_EQ(error_code([] { Vocabulary({"aa"}, {4}, 3); }), "invalid_vocabulary");
  EXPECT_EQ(error_code([] { Vocabulary({"aa", "aa"}, {1, 1}, 3); }), "invalid_vocabulary");
}

// Properties over generated corpora.

class CorpusProperties : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(CorpusProperties, NormsIndicesAndOrderIndependence) {
  gkm::SyntheticCorpusConfig c;
  c.documents = 60;
  c.topics = 6;
  c.doc_length = 40;
  c.vocabulary = 80;
  c.seed = GetParam();
  auto docs = gkm::synthetic_topic_corpus(c).documents;
  const auto forward = gkm::ingest_documents(docs, {2, 0.8, 50});

  for (const auto& fv : forward.vectors) {
    double s = 0.0;
    for (const auto& [idx, w] : fv.entries) {
      EXPECT_LT(idx, forward.vocabulary.size());
      EXPECT_GE(w, 0.0);
      s += w * w;
    }
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
  }

  std::mt19937_64 rng(GetParam());
  std::shuffle(docs.begin(), docs.end(), rng);
  const auto shuffled = gkm::ingest_documents(docs, {2, 0.8, 50});
  EXPECT_EQ(shuffled.vocabulary, forward.vocabulary);
  EXPECT_EQ(shuffled.vectors, forward.vectors);
}

INSTANTIATE_TEST_SUITE_P(Seeds, CorpusProperties, ::testing::Values(1, 2, 3, 4, 5));

#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "come/error.hpp"
#include "come/evalsuite.hpp"
#include "support.hpp"

namespace {

using namespace come;
using namespace come::eval;
using come::testing::emitter;
using come::testing::tiny_model;

std::vector<EditRequest> requests() {
  return {come::testing::tiny_request("r0", "kala", "vosa", "lid"),
          come::testing::tiny_request("r1", "mora", "vosa", "lid"),
          come::testing::tiny_request("r2", "tipa", "vosa", "lid")};
}

model::TokenId id(const char* w) { return *come::testing::tiny_tokenizer().find(w); }

TEST(Counterfact, NewObjectEmitter) {
  const auto s = emitter(tiny_model(), id("lid"));
  const auto reqs = requests();
  EXPECT_EQ(efficacy_cf(s, reqs), 1.0);
  EXPECT_EQ(generality_cf(s, reqs), 1.0);
  EXPECT_EQ(locality_cf(s, reqs), 0.0);
}

TEST(Counterfact, OldObjectEmitter) {
  const auto s = emitter(tiny_model(), id("vosa"));
  EXPECT_EQ(efficacy_cf(s, requests()), 0.0);
  EXPECT_EQ(locality_cf(s, requests()), 1.0);
}

TEST(Counterfact, TiesFail) {
  const auto s = come::testing::uniform_model(tiny_model());
  const auto reqs = requests();
  EXPECT_EQ(efficacy_cf(s, reqs), 0.0);
  EXPECT_EQ(generality_cf(s, reqs), 0.0);
  EXPECT_EQ(locality_cf(s, reqs), 0.0);
}

TEST(Counterfact, ParaphraseEqualToBase) {
  const auto s = tiny_model(3, 21);
  auto reqs = requests();
  for (auto& r : reqs) r.prompts.paraphrases = {r.prompts.base};
  EXPECT_EQ(generality_cf(s, reqs), efficacy_cf(s, reqs));
}

TEST(Counterfact, OrderInvariant) {
  const auto s = tiny_model(3, 22);
  auto reqs = requests();
  const double e = efficacy_cf(s, reqs), g = generality_cf(s, reqs), l = locality_cf(s, reqs);
  std::reverse(reqs.begin(), reqs.end());
  EXPECT_EQ(efficacy_cf(s, reqs), e);
  EXPECT_EQ(generality_cf(s, reqs), g);
  EXPECT_EQ(locality_cf(s, reqs), l);
}

TEST(Counterfact, AggregationModes) {
  const auto s = come::testing::uniform_model(tiny_model());
  const double v = static_cast<double>(s.config().vocab_size);
  EXPECT_NEAR(object_logprob(s, "a b kala", "vosa lid", Aggregation::kMean), std::log(1 / v), 1e-12);
  EXPECT_NEAR(object_logprob(s, "a b kala", "vosa lid", Aggregation::kSum), 2 * std::log(1 / v), 1e-12);
  EXPECT_EQ(parse_aggregation("sum"), Aggregation::kSum);
  EXPECT_THROW(parse_aggregation("max"), Error);
}

TEST(Score, PrintedComponents) {
  // Exact harmonic mean of the printed components, as a fraction.
  const double oracle = 3.0 * 994 * 911 * 732 / (994.0 * 911 + 911.0 * 732 + 732.0 * 994) / 10.0;
  EXPECT_NEAR(score(99.4, 91.1, 73.2, Unit::kPercent), oracle, 1e-12);
  EXPECT_NEAR(score(0.994, 0.911, 0.732), oracle / 100.0, 1e-14);
  // The printed 86.4 is reachable from components inside their rounding box.
  EXPECT_LE(score(99.35, 91.05, 73.15, Unit::kPercent), 86.45);
  EXPECT_GE(score(99.45, 91.15, 73.25, Unit::kPercent), 86.35);
}

TEST(Score, EqualAndZero) {
  EXPECT_DOUBLE_EQ(score(0.4, 0.4, 0.4), 0.4);
  EXPECT_EQ(score(1.0, 1.0, 0.0), 0.0);
  EXPECT_THROW(score(1.2, 0.5, 0.5), Error);
  EXPECT_THROW(score(-0.1, 0.5, 0.5), Error);
}

TEST(Score, RationalOracleAndSymmetry) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<long long> num(1, 1000);
  for (int i = 0; i < 100; ++i) {
    const long long a = num(rng), b = num(rng), c = num(rng);  // values a/1000 etc.
    // 3abc / (ab + bc + ca), scaled by 1/1000.
    const long long n = 3 * a * b * c, d = (a * b + b * c + c * a) * 1000;
    const long long g = std::gcd(n, d);
    const double oracle = static_cast<double>(n / g) / static_cast<double>(d / g);
    const double x = a / 1000.0, y = b / 1000.0, z = c / 1000.0;
    EXPECT_NEAR(score(x, y, z), oracle, 1e-15);
    EXPECT_NEAR(score(z, x, y), score(x, y, z), 1e-15);
    EXPECT_LE(score(x, y, z), 3 * std::min({x, y, z}));
  }
}

TEST(Zsre, Emitters) {
  const auto reqs = requests();
  const auto s_new = emitter(tiny_model(), id("lid"));
  EXPECT_EQ(zsre_accuracy(s_new, reqs, ZsreKind::kEfficacy), 1.0);
  EXPECT_EQ(zsre_accuracy(s_new, reqs, ZsreKind::kGenerality), 1.0);
  EXPECT_EQ(zsre_accuracy(s_new, reqs, ZsreKind::kLocality), 0.0);
  const auto s_old = emitter(tiny_model(), id("vosa"));
  EXPECT_EQ(zsre_accuracy(s_old, reqs, ZsreKind::kEfficacy), 0.0);
  EXPECT_EQ(zsre_accuracy(s_old, reqs, ZsreKind::kLocality), 1.0);
}

TEST(Fluency, Entropy) {
  const std::vector<std::string> same(6, "ka");
  EXPECT_EQ(ngram_entropy(same, 2), 0.0);
  const std::vector<std::string> distinct{"a", "b", "c", "d", "e", "f", "g", "h", "i"};
  EXPECT_NEAR(ngram_entropy(distinct, 2), std::log2(8.0), 1e-12);
  EXPECT_NEAR(ngram_entropy(distinct, 3), std::log2(7.0), 1e-12);
  EXPECT_NEAR(text_fluency(distinct), std::log2(8.0) / 3 + 2 * std::log2(7.0) / 3, 1e-12);
  EXPECT_EQ(ngram_entropy(std::vector<std::string>{"a"}, 2), 0.0);
}

TEST(Fluency, RepetitiveGenerationScoresLow) {
  const auto rep = emitter(tiny_model(), id("ox"));
  const std::vector<std::string> prompts{"a b kala", "c d mora"};
  EXPECT_LT(fluency(rep, prompts, 10), 2.0);
  EXPECT_THROW(fluency(rep, prompts, 9), Error);
}

TEST(Tfidf, IdentityAndDisjoint) {
  const std::vector<std::string> docs{"kala vosa lid", "mora tipa"};
  const TfidfModel m(docs);
  EXPECT_NEAR(m.cosine("kala vosa lid", "kala vosa lid"), 1.0, 1e-12);
  EXPECT_EQ(m.cosine("kala vosa", "mora tipa"), 0.0);
  EXPECT_EQ(m.cosine("", "mora"), 0.0);
  EXPECT_NEAR(m.idf("kala"), std::log(3.0 / 2.0) + 1, 1e-15);
  EXPECT_NEAR(m.idf("unseen"), std::log(3.0) + 1, 1e-15);
}

TEST(Consistency, MissingReferencesAreSkipped) {
  const auto s = tiny_model();
  const auto reqs = requests();
  const auto none = consistency(s, reqs, {}, 10);
  EXPECT_FALSE(none.value.has_value());
  EXPECT_EQ(none.skipped.size(), 3u);
  const std::vector<ReferenceText> one{{"r1", "a b mora lid"}};
  const auto some = consistency(s, reqs, one, 10);
  ASSERT_TRUE(some.value.has_value());
  EXPECT_EQ(some.per_request.size(), 1u);
  EXPECT_EQ(some.skipped, (std::vector<std::string>{"r0", "r2"}));
}

TEST(Consistency, EmitterMatchingReference) {
  const auto s = emitter(tiny_model(), id("lid"));
  const auto reqs = requests();
  const std::vector<ReferenceText> refs{{"r0", "lid lid lid"}, {"r1", "mora tipa"}};
  const auto c = consistency(s, reqs, refs, 10);
  ASSERT_EQ(c.per_request.size(), 2u);
  EXPECT_NEAR(c.per_request[0].second, 1.0, 1e-12);
  EXPECT_EQ(c.per_request[1].second, 0.0);
}

TEST(Report, DeterministicJsonAndCsv) {
  const auto s = tiny_model(3, 23);
  const auto reqs = requests();
  const std::vector<std::string> prompts{"a b kala", "a b mora", "a b tipa"};
  EvalOptions opt;
  auto a = evaluate(s, reqs, prompts, {}, opt);
  auto b = evaluate(s, reqs, prompts, {}, opt);
  a.method = b.method = "MEMIT";
  a.wall_time = 1.0;
  b.wall_time = 2.0;
  EXPECT_EQ(report_to_json(a), report_to_json(b));
  EXPECT_EQ(csv_row(a), csv_row(b));
  const auto j = nlohmann::json::parse(report_to_json(a));
  EXPECT_FALSE(j.contains("wall_time"));
  EXPECT_TRUE(j["consistency"].is_null());
  EXPECT_EQ(a.n_edits, 3u);
  EXPECT_EQ(a.score, score(a.efficacy, a.generality, a.locality));
  const std::string row = csv_row(a);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 9);
  EXPECT_EQ(row.back(), ',');
  EXPECT_NE(csv_row(a, true).back(), ',');
}

}  // namespace

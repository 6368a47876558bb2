#include <gtest/gtest.h>

#include <filesystem>
#include <nlohmann/json.hpp>
#include <set>

#include "come/datakit.hpp"
#include "come/error.hpp"
#include "support.hpp"

namespace {

using namespace come;
using namespace come::data;
using nlohmann::json;

DatasetRecord sample_record() {
  DatasetRecord r;
  r.id = "x1";
  r.subject = "kala mora";
  r.relation_template = "a b {}";
  r.target_old = "vosa";
  r.target_new = "lid";
  r.paraphrase_prompts = {"c d kala mora"};
  r.neighborhood_prompts = {"a b tipa"};
  r.prefixes = {"e ox"};
  r.generation_prompt = "a b kala mora";
  r.reference_text = "a b kala mora lid";
  r.neighborhood_subjects = {"tipa"};
  return r;
}

TEST(Parse, EmptyArray) {
  const auto r = parse_dataset("[]", Schema::kCanonical);
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(r.issues.empty());
}

TEST(Parse, NotAnArray) {
  EXPECT_THROW(parse_dataset("{}", Schema::kCanonical), Error);
  EXPECT_THROW(parse_dataset("[", Schema::kCanonical), Error);
}

TEST(Validate, SameTargetsRejectedWithInvariantName) {
  auto r = sample_record();
  r.target_new = r.target_old;
  try {
    validate_record(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidData);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x1"), std::string::npos);
    EXPECT_NE(msg.find("invariant"), std::string::npos);
  }
}

TEST(Validate, PlaceholderCount) {
  auto r = sample_record();
  r.relation_template = "a b";
  EXPECT_THROW(validate_record(r), Error);
  r.relation_template = "{} a {}";
  EXPECT_THROW(validate_record(r), Error);
}

TEST(Canonical, RoundTrip) {
  const std::vector<DatasetRecord> recs{sample_record(), [] {
                                          auto r = sample_record();
                                          r.id = "x2";
                                          r.reference_text.reset();
                                          return r;
                                        }()};
  const std::string text = serialize_dataset(recs);
  EXPECT_EQ(parse_dataset(text, Schema::kCanonical).records, recs);
  const auto j = json::parse(text);
  EXPECT_EQ(j[0]["schema_version"], kSchemaVersion);
  EXPECT_TRUE(j[1]["reference_text"].is_null());
  EXPECT_EQ(serialize_dataset({}), "[]\n");
}

TEST(Canonical, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "come_datakit_test.json";
  const std::vector<DatasetRecord> recs{sample_record()};
  save_dataset(recs, path);
  EXPECT_EQ(load_dataset(path, Schema::kCanonical), recs);
  std::filesystem::remove(path);
  try {
    load_dataset(path, Schema::kCanonical);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(Canonical, StrictFailsLenientSkips) {
  auto bad = sample_record();
  bad.id = "bad";
  bad.target_new = bad.target_old;
  auto text = serialize_dataset({sample_record()});
  json j = json::parse(text);
  json b = j[0];
  b["id"] = "bad";
  b["target_new"] = b["target_old"];
  j.push_back(b);
  const std::string doc = j.dump(2);
  try {
    parse_dataset(doc, Schema::kCanonical);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("#1"), std::string::npos);
  }
  const auto lenient = parse_dataset(doc, Schema::kCanonical, true);
  ASSERT_EQ(lenient.records.size(), 1u);
  ASSERT_EQ(lenient.issues.size(), 1u);
  EXPECT_EQ(lenient.issues[0].index, 1u);
  EXPECT_EQ(lenient.issues[0].id, "bad");
  EXPECT_EQ(doc[lenient.issues[0].offset], '{');
  EXPECT_GT(lenient.issues[0].line, 1u);
}

TEST(Canonical, DuplicateIdsRejected) {
  const std::string text = serialize_dataset({sample_record(), sample_record()});
  EXPECT_THROW(parse_dataset(text, Schema::kCanonical), Error);
}

TEST(Counterfact, FieldMapping) {
  const json doc = json::array({{{"case_id", 7},
                                 {"requested_rewrite",
                                  {{"prompt", "{} plays the"},
                                   {"subject", "Kala"},
                                   {"target_true", {{"str", "piano"}}},
                                   {"target_new", {{"str", "violin"}}}}},
                                 {"paraphrase_prompts", {"Indeed Kala plays the"}},
                                 {"neighborhood_prompts", {"Mora plays the"}},
                                 {"generation_prompts", {"Kala is known for", "other"}}}});
  const auto r = parse_dataset(doc.dump(), Schema::kCounterfact).records.at(0);
  EXPECT_EQ(r.id, "7");
  EXPECT_EQ(r.subject, "Kala");
  EXPECT_EQ(r.relation_template, "{} plays the");
  EXPECT_EQ(r.target_old, "piano");
  EXPECT_EQ(r.target_new, "violin");
  EXPECT_EQ(r.paraphrase_prompts.size(), 1u);
  EXPECT_EQ(r.generation_prompt, "Kala is known for");
  EXPECT_FALSE(r.reference_text.has_value());
}

TEST(Zsre, FieldMapping) {
  const json doc = json::array({{{"subject", "Kala"},
                                 {"src", "Where was Kala born?"},
                                 {"rephrase", "Kala was born where?"},
                                 {"alt", "Mora"},
                                 {"answers", {"Tipa"}},
                                 {"loc", "nq question: who wrote it"},
                                 {"loc_ans", "someone"}}});
  const auto r = parse_dataset(doc.dump(), Schema::kZsre).records.at(0);
  EXPECT_EQ(r.id, "0");
  EXPECT_EQ(r.relation_template, "Where was {} born?");
  EXPECT_EQ(r.target_new, "Mora");
  EXPECT_EQ(r.target_old, "Tipa");
  EXPECT_EQ(r.paraphrase_prompts, std::vector<std::string>{"Kala was born where?"});
  EXPECT_EQ(r.neighborhood_prompts.size(), 1u);
}

TEST(Schema, Names) {
  EXPECT_EQ(parse_schema("counterfact"), Schema::kCounterfact);
  EXPECT_EQ(parse_schema(to_string(Schema::kZsre)), Schema::kZsre);
  EXPECT_THROW(parse_schema("wiki"), Error);
}

TEST(Synthetic, ZeroFacts) {
  SynthSpec s;
  s.n_facts = 0;
  EXPECT_TRUE(generate_synthetic(s).empty());
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto spec = come::testing::small_synth(30, 4);
  EXPECT_EQ(serialize_dataset(generate_synthetic(spec)), serialize_dataset(generate_synthetic(spec)));
  EXPECT_NE(serialize_dataset(generate_synthetic(spec)),
            serialize_dataset(generate_synthetic(come::testing::small_synth(30, 5))));
}

TEST(Synthetic, CountsMatchSpec) {
  SynthSpec s;
  s.n_facts = 200;
  s.paraphrases_per_fact = 2;
  s.neighbors_per_fact = 2;
  const auto recs = generate_synthetic(s);
  ASSERT_EQ(recs.size(), 200u);
  std::size_t para = 0, neigh = 0;
  for (const auto& r : recs) {
    para += r.paraphrase_prompts.size();
    neigh += r.neighborhood_prompts.size();
    EXPECT_NO_THROW(validate_record(r));
  }
  EXPECT_EQ(para, 400u);
  EXPECT_EQ(neigh, 400u);
}

TEST(Synthetic, EditedAndNeighborSubjectsDisjoint) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto recs = generate_synthetic(come::testing::small_synth(200, seed));
    std::set<std::string> edited;
    for (const auto& r : recs) edited.insert(r.subject);
    EXPECT_EQ(edited.size(), recs.size());
    for (const auto& r : recs) {
      ASSERT_EQ(r.neighborhood_subjects.size(), r.neighborhood_prompts.size());
      for (std::size_t i = 0; i < r.neighborhood_subjects.size(); ++i) {
        EXPECT_EQ(edited.count(r.neighborhood_subjects[i]), 0u);
        EXPECT_TRUE(contains_phrase(r.neighborhood_prompts[i], r.neighborhood_subjects[i]));
        EXPECT_FALSE(contains_phrase(r.neighborhood_prompts[i], r.subject));
      }
    }
  }
}

TEST(Synthetic, RecordsConvertToValidRequests) {
  const auto recs = generate_synthetic(come::testing::small_synth(20));
  const auto tok = build_tokenizer(recs);
  for (const auto& req : to_requests(recs)) {
    EXPECT_NO_THROW(req.validate());
    for (const auto& w : model::split_words(req.prompts.base)) EXPECT_TRUE(tok.find(w).has_value());
  }
  const auto refs = references(recs);
  EXPECT_LE(refs.size(), recs.size());
  EXPECT_FALSE(refs.empty());
  for (const auto& ref : refs) EXPECT_FALSE(ref.text.empty());
  EXPECT_EQ(generation_prompts(recs).size(), recs.size());
}

TEST(Synthetic, TrainingMaterialHoldsOutParaphrases) {
  const auto recs = generate_synthetic(come::testing::small_synth(20));
  const auto mat = training_material(recs);
  EXPECT_EQ(mat.facts.size(), recs.size());
  EXPECT_FALSE(mat.neighbors.empty());
  for (const auto& t : mat.fact_templates)
    for (const auto& r : recs)
      for (const auto& p : r.paraphrase_prompts) EXPECT_NE(fill_template(t.text, r.subject), p);
  const auto tok = build_tokenizer(recs);
  const auto a = build_training_corpus(tok, mat, 2, 2, 0);
  EXPECT_EQ(a.sequences, build_training_corpus(tok, mat, 2, 2, 0).sequences);
  for (const auto& f : mat.facts) EXPECT_EQ(a.fact_index.at(f.id).size(), 2u);
}

TEST(Synthetic, InvalidSpecRejected) {
  SynthSpec s;
  s.objects_per_relation = 1;
  EXPECT_THROW(generate_synthetic(s), Error);
  s = SynthSpec{};
  s.n_facts = 100000;
  EXPECT_THROW(generate_synthetic(s), Error);
}

}  // namespace

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "come/editengine.hpp"
#include "come/evalsuite.hpp"
#include "come/unlearning.hpp"
#include "support.hpp"
#include "toy_setup.hpp"

namespace {

using namespace come;
using come::testing::Toy;

// Trained once per process; every test below reads it.
const Toy& toy() {
  static const Toy t = come::testing::build_toy();
  return t;
}

const edit::CovarianceMap& covariances() {
  static const auto c = edit::compute_covariances(toy().state, toy().cfg.edit, toy().corpus.sequences);
  return c;
}

edit::EditConfig mode_config(edit::EditMode mode) {
  auto ec = toy().cfg.edit;
  ec.mode = mode;
  return ec;
}

struct Run {
  come::testing::ToyEdit edit;
  double seconds = 0.0;
};

const Run& memit_run() {
  static const Run r = [] {
    const auto t0 = std::chrono::steady_clock::now();
    auto e = come::testing::toy_edit(toy(), mode_config(edit::EditMode::kMemit), 50, 0, covariances());
    return Run{std::move(e), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  }();
  return r;
}

const Run& come_run() {
  static const Run r = [] {
    const auto t0 = std::chrono::steady_clock::now();
    auto e = come::testing::toy_edit(toy(), mode_config(edit::EditMode::kCome), 50, 0, covariances());
    return Run{std::move(e), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  }();
  return r;
}

TEST(ToyTraining, MemorizesDefaultFacts) {
  RecordProperty("memorization", std::to_string(toy().memorization));
  RecordProperty("neighbor_memorization", std::to_string(toy().neighbor_memorization));
  RecordProperty("train_seconds", std::to_string(toy().train_seconds));
  EXPECT_EQ(toy().records.size(), 200u);
  EXPECT_GE(toy().memorization, 0.95);
}

TEST(ToyTraining, LossTraceNonIncreasingWithinNoise) {
  const auto& trace = toy().loss_trace;
  ASSERT_EQ(trace.size(), toy().cfg.train.epochs);
  for (std::size_t e = 1; e < trace.size(); ++e) EXPECT_LE(trace[e], trace[e - 1] * 1.05) << "epoch " << e;
}

TEST(ToyBaseline, UneditedModel) {
  const auto requests = data::to_requests(memit_run().edit.selected);
  const double e = eval::efficacy_cf(toy().state, requests);
  const double l = eval::locality_cf(toy().state, requests);
  RecordProperty("unedited_efficacy", std::to_string(e));
  RecordProperty("unedited_locality", std::to_string(l));
  // Old facts are memorized, so o* should rarely win before editing.
  EXPECT_LE(e, 0.2);
  EXPECT_GE(l, 0.9);
}

TEST(ToyEdit, MemitBatchOfFifty) {
  const auto& run = memit_run();
  const auto& reqs = run.edit.requests;
  ASSERT_EQ(reqs.size(), 50u);
  const double e = eval::efficacy_cf(run.edit.batch.state, reqs);
  RecordProperty("memit_efficacy", std::to_string(e));
  RecordProperty("memit_seconds", std::to_string(run.seconds));
  EXPECT_GE(e, 0.9);
  EXPECT_LT(run.seconds, 300.0);
}

TEST(ToyEdit, ResidualLossDecreasesForEveryRequest) {
  for (const auto& d : memit_run().edit.batch.diagnostics)
    EXPECT_LT(d.final_loss, d.initial_loss) << d.request_id;
}

TEST(ToyEdit, FirstLayerDeltaRaisesTargetLogprob) {
  const auto& reqs = memit_run().edit.requests;
  const auto ec = mode_config(edit::EditMode::kMemit);
  const auto targets = edit::assemble_targets(toy().state, reqs, ec);
  const auto spread = edit::spread_updates(toy().state, reqs, targets, ec, covariances());
  const auto& first = spread.updates.front();
  const auto w = model::get_mlp_out_weight(toy().state, first.layer) + first.delta;
  const auto edited = model::set_mlp_out_weight(toy().state, first.layer, w);
  double before = 0.0, after = 0.0;
  std::size_t raised = 0;
  for (const auto& r : reqs) {
    const double b = eval::object_logprob(toy().state, r.prompts.base, r.triple.new_object);
    const double a = eval::object_logprob(edited, r.prompts.base, r.triple.new_object);
    before += b;
    after += a;
    raised += a > b;
  }
  EXPECT_GT(after, before);
  EXPECT_GT(raised, reqs.size() / 2);
}

TEST(ToyEdit, ConfidentTargetNeedsTinyResidual) {
  const auto ec = mode_config(edit::EditMode::kMemit);
  std::size_t checked = 0;
  for (const auto& rec : toy().records) {
    const auto req = data::to_request(rec);
    const auto fit = edit::fit_residual(toy().state, req, req.triple.old_object, ec.final_layer(), ec.opt);
    if (fit.initial_loss() > -std::log(0.999)) continue;
    EXPECT_LE(numerics::norm(fit.delta), 0.01 * numerics::norm(fit.hidden)) << rec.id;
    if (++checked == 10) break;
  }
  RecordProperty("confident_targets", std::to_string(checked));
  EXPECT_GT(checked, 0u);
}

TEST(ToyEdit, ExactMatchDoesNotExceedProbabilityEfficacy) {
  const auto& run = come_run();
  const double cf = eval::efficacy_cf(run.edit.batch.state, run.edit.requests);
  const double zs = eval::zsre_accuracy(run.edit.batch.state, run.edit.requests, eval::ZsreKind::kEfficacy);
  RecordProperty("efficacy_cf", std::to_string(cf));
  RecordProperty("efficacy_zsre", std::to_string(zs));
  EXPECT_LE(zs, cf + 0.05);
}

TEST(ToyEdit, FluencyPreserved) {
  const auto& run = come_run();
  const auto prompts = data::generation_prompts(run.edit.selected);
  const double pre = eval::fluency(toy().state, prompts, 10);
  const double post = eval::fluency(run.edit.batch.state, prompts, 10);
  RecordProperty("fluency_pre", std::to_string(pre));
  RecordProperty("fluency_post", std::to_string(post));
  ASSERT_GT(pre, 0.0);
  EXPECT_LE(std::abs(post - pre) / pre, 0.05);
}

TEST(ToyEdit, ComeAndMemitReportedSideBySide) {
  const auto& c = come_run();
  const auto& m = memit_run();
  const auto refs = data::references(c.edit.selected);
  const auto cons_pre = eval::consistency(toy().state, c.edit.requests, refs, 10);
  const auto cons_post = eval::consistency(c.edit.batch.state, c.edit.requests, refs, 10);
  ASSERT_TRUE(cons_pre.value.has_value());
  ASSERT_TRUE(cons_post.value.has_value());
  RecordProperty("consistency_unedited", std::to_string(*cons_pre.value));
  RecordProperty("consistency_come", std::to_string(*cons_post.value));
  const double g_come = eval::generality_cf(c.edit.batch.state, c.edit.requests);
  const double g_memit = eval::generality_cf(m.edit.batch.state, m.edit.requests);
  RecordProperty("generality_come", std::to_string(g_come));
  RecordProperty("generality_memit", std::to_string(g_memit));
  EXPECT_EQ(c.edit.requests, m.edit.requests);
  for (const double v : {*cons_pre.value, *cons_post.value, g_come, g_memit}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// Synonyms: vosa and lid share an unembedding column and every training
// sequence ending in one has a twin ending in the other. Full-batch training
// keeps the columns equal, so δ and δ′ solve the same problem.
TEST(Synonyms, UnlearningVectorVanishes) {
  auto init = come::testing::tiny_model(3, 11);
  {
    auto p = init.parameters();
    const auto& tok = init.tokenizer();
    const auto vosa = *tok.find("vosa"), lid = *tok.find("lid");
    for (std::size_t i = 0; i < p.unembedding.rows(); ++i) p.unembedding(i, lid) = p.unembedding(i, vosa);
    init = init.with_parameters(std::move(p));
  }
  const std::vector<KnowledgeTriple> facts{
      {"s0", "kala", "a b {}", "vosa", "lid"}, {"s1", "kala", "a b {}", "lid", "vosa"},
      {"s2", "mora", "a b {}", "vosa", "lid"}, {"s3", "mora", "a b {}", "lid", "vosa"},
      {"c0", "rune", "a b {}", "pim", "sot"},  {"c1", "tipa", "a b {}", "sot", "pim"}};
  const RelationTemplate templ{"a b {}", "a b {}"};
  const auto corpus = train::build_corpus(init.tokenizer(), facts, std::span(&templ, 1), 2, 0);
  train::TrainConfig tc;
  tc.epochs = 300;
  tc.learning_rate = 1e-2;
  tc.batch_size = corpus.sequences.size();
  const auto trained = train::train(init, corpus, tc).state;

  edit::EditConfig ec;
  ec.target_layers = {1, 2};
  ec.mode = edit::EditMode::kCome;
  auto ratio = [&](const EditRequest& req) {
    const auto fit = edit::fit_residual(trained, req, req.triple.new_object, ec.final_layer(), ec.opt);
    const auto h = edit::subject_hidden(trained, req, ec.final_layer());
    const auto r = unlearn::come_transform(trained, req, fit.delta, h + fit.delta, ec);
    return numerics::norm(r.bundle.unlearn) / numerics::norm(r.bundle.delta_old);
  };
  const double synonym = ratio(come::testing::tiny_request("syn", "kala", "vosa", "lid"));
  const double control = ratio(come::testing::tiny_request("ctl", "rune", "pim", "sot"));
  RecordProperty("synonym_ratio", std::to_string(synonym));
  RecordProperty("control_ratio", std::to_string(control));
  EXPECT_LE(synonym, 1e-6);
  EXPECT_GT(control, 100 * synonym);
}

}  // namespace

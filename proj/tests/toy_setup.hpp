#pragma once

#include <chrono>
#include <vector>

#include "come/cli.hpp"
#include "come/datakit.hpp"
#include "come/editengine.hpp"
#include "come/evalsuite.hpp"
#include "come/trainer.hpp"

namespace come::testing {

// The reference toy: default configuration, synthetic facts, one training run.
struct Toy {
  cli::RunConfig cfg;
  std::vector<data::DatasetRecord> records;
  data::TrainingMaterial material;
  train::Corpus corpus;
  model::ModelState state;
  std::vector<double> loss_trace;
  double memorization = 0.0;
  double neighbor_memorization = 0.0;
  double train_seconds = 0.0;
};

inline Toy build_toy() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = cli::resolve_config(cli::default_config());
  auto records = data::generate_synthetic(cfg.synth);
  auto tok = data::build_tokenizer(records);
  auto material = data::training_material(records);
  auto corpus = data::build_training_corpus(tok, material, cfg.fact_repetitions,
                                            cfg.neighbor_repetitions, cfg.train.seed);
  auto init = model::ModelState::initialize(cfg.model, tok);
  auto trained = train::train(init, corpus, cfg.train);
  Toy toy{std::move(cfg), std::move(records), std::move(material), std::move(corpus),
          std::move(trained.state), std::move(trained.loss_trace)};
  toy.memorization = train::memorization_check(toy.state, toy.material.facts);
  toy.neighbor_memorization = train::memorization_check(toy.state, toy.material.neighbors);
  toy.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return toy;
}

struct ToyEdit {
  std::vector<data::DatasetRecord> selected;
  std::vector<EditRequest> requests;
  edit::BatchResult batch;
};

inline ToyEdit toy_edit(const Toy& toy, const edit::EditConfig& ec, std::size_t n, std::uint64_t seed,
                        const edit::CovarianceMap& covs) {
  auto selected = data::select_records(toy.records, n, seed);
  auto requests = data::to_requests(selected);
  auto batch = edit::edit_batch(toy.state, requests, ec, covs);
  return {std::move(selected), std::move(requests), std::move(batch)};
}

}  // namespace come::testing

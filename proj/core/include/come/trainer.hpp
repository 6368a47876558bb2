#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "come/knowledge.hpp"
#include "come/model.hpp"

namespace come::train {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  double target_memorization = 0.95;

  void validate() const;
};

struct ObjectPosition {
  std::size_t sequence = 0;
  std::size_t position = 0;
};

struct Corpus {
  std::vector<model::TokenSequence> sequences;
  // Triple id -> every position holding one of its old-object tokens.
  std::map<std::string, std::vector<ObjectPosition>> fact_index;
};

// Each triple yields `repetitions` sequences "<bos> [prefix] template(s) o",
// cycling over the templates registered for its relation. The first pass over
// the templates carries no prefix; later ones draw from `prefix_pool` when given.
Corpus build_corpus(const model::Tokenizer& tok, std::span<const KnowledgeTriple> triples,
                    std::span<const RelationTemplate> templates, std::size_t repetitions,
                    std::uint64_t seed, std::span<const std::string> prefix_pool = {});

// Appends `from` to `into`, shifting fact positions to the new sequence indices.
void append_corpus(Corpus& into, const Corpus& from);

struct TrainResult {
  model::ModelState state;
  std::vector<double> loss_trace;  // mean next-token loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

// Next-token cross-entropy with Adam at a constant learning rate. Throws
// kDivergence (message carries the trace) when an epoch's loss exceeds 10x the
// loss measured before the first update.
TrainResult train(const model::ModelState& state, const Corpus& corpus, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Fraction of triples whose old object is the greedy continuation of their
// base prompt. Vacuously 1 for an empty list.
double memorization_check(const model::ModelState& state, std::span<const KnowledgeTriple> triples);

}  // namespace come::train

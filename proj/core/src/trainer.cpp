#include "come/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "come/error.hpp"

namespace come::train {

using model::Matrix;
using model::ModelState;
using model::Parameters;
using model::TokenSequence;

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kInvalidConfig, "train: epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidConfig, "train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::kInvalidConfig, "train: learning_rate must be >= 0");
  if (!(target_memorization >= 0.0 && target_memorization <= 1.0))
    throw Error(ErrorCode::kInvalidConfig, "train: target_memorization must lie in [0,1]");
}

Corpus build_corpus(const model::Tokenizer& tok, std::span<const KnowledgeTriple> triples,
                    std::span<const RelationTemplate> templates, std::size_t repetitions,
                    std::uint64_t seed, std::span<const std::string> prefix_pool) {
  for (const auto& t : templates)
    if (count_placeholders(t.text) != 1)
      throw Error(ErrorCode::kInvalidData,
                  "build_corpus: template without a single subject placeholder: '" + t.text + "'");
  std::mt19937_64 rng(seed);
  Corpus corpus;
  for (const auto& triple : triples) {
    std::vector<const RelationTemplate*> matching;
    for (const auto& t : templates)
      if (t.relation == triple.relation) matching.push_back(&t);
    if (matching.empty())
      throw Error(ErrorCode::kInvalidData,
                  "build_corpus: no template for relation of triple '" + triple.id + "'");
    const TokenSequence object = tok.encode(triple.old_object);
    auto& index = corpus.fact_index[triple.id];
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      std::string prefix;
      if (rep >= matching.size() && !prefix_pool.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, prefix_pool.size() - 1);
        prefix = prefix_pool[pick(rng)];
      }
      const auto& templ = *matching[rep % matching.size()];
      TokenSequence seq = encode_prompt(tok, prefix, fill_template(templ.text, triple.subject));
      for (auto t : object) {
        index.push_back({corpus.sequences.size(), seq.size()});
        seq.push_back(t);
      }
      corpus.sequences.push_back(std::move(seq));
    }
  }
  return corpus;
}

void append_corpus(Corpus& into, const Corpus& from) {
  const std::size_t offset = into.sequences.size();
  into.sequences.insert(into.sequences.end(), from.sequences.begin(), from.sequences.end());
  for (const auto& [id, positions] : from.fact_index) {
    auto& dst = into.fact_index[id];
    for (auto p : positions) dst.push_back({p.sequence + offset, p.position});
  }
}

namespace {

// Mean next-token loss over the sequence; accumulates parameter gradients of
// the summed (not mean) loss into grads when non-null. Returns the summed loss.
double sequence_loss(const ModelState& state, const TokenSequence& seq, Parameters* grads) {
  const std::span<const model::TokenId> inputs(seq.data(), seq.size() - 1);
  const auto tr = model::trace_forward(state, inputs);
  const Matrix lp = model::log_softmax(tr.logits);
  Matrix d_logits(inputs.size(), state.config().vocab_size);
  double loss = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto target = seq[t + 1];
    loss -= lp(t, target);
    auto dl = d_logits.row(t);
    auto lr = lp.row(t);
    for (std::size_t c = 0; c < dl.size(); ++c) dl[c] = std::exp(lr[c]);
    dl[target] -= 1.0;
  }
  if (grads) model::backward(state, tr, d_logits, grads, std::nullopt);
  return loss;
}

struct Adam {
  explicit Adam(const Parameters& like) : m(zeroed(like)), v(zeroed(like)) {}

  static Parameters zeroed(Parameters p) {
    for (auto& [name, t] : p.named()) std::fill(t->values().begin(), t->values().end(), 0.0);
    return p;
  }

  void step(Parameters& params, Parameters& grads, double lr, double grad_scale) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto pn = params.named();
    auto gn = grads.named();
    auto mn = m.named();
    auto vn = v.named();
    for (std::size_t i = 0; i < pn.size(); ++i) {
      auto p = pn[i].second->values();
      auto g = gn[i].second->values();
      auto mm = mn[i].second->values();
      auto vv = vn[i].second->values();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j] * grad_scale;
        mm[j] = beta1 * mm[j] + (1.0 - beta1) * gj;
        vv[j] = beta2 * vv[j] + (1.0 - beta2) * gj * gj;
        p[j] -= lr * (mm[j] / c1) / (std::sqrt(vv[j] / c2) + eps);
      }
    }
  }

  Parameters m, v;
  std::size_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

}  // namespace

TrainResult train(const ModelState& state, const Corpus& corpus, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.sequences.empty()) throw Error(ErrorCode::kEmptyInput, "train: empty corpus");
  for (const auto& seq : corpus.sequences)
    if (seq.size() < 2) throw Error(ErrorCode::kInvalidData, "train: sequence shorter than 2 tokens");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(corpus.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  Parameters params = state.parameters();
  Adam adam(params);
  TrainResult result{state, {}};
  ModelState current = state;
  double reference_loss = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Parameters grads = Adam::zeroed(params);
      double batch_loss = 0.0;
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& seq = corpus.sequences[order[i]];
        batch_loss += sequence_loss(current, seq, &grads);
        batch_tokens += seq.size() - 1;
      }
      if (reference_loss < 0.0) reference_loss = batch_loss / static_cast<double>(batch_tokens);
      epoch_loss += batch_loss;
      epoch_tokens += batch_tokens;
      adam.step(params, grads, cfg.learning_rate, 1.0 / static_cast<double>(batch_tokens));
      current = ModelState(state.config(), state.tokenizer(), params, state.version());
    }
    const double mean = epoch_loss / static_cast<double>(epoch_tokens);
    result.loss_trace.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
    if (!std::isfinite(mean) || mean > 10.0 * reference_loss) {
      std::ostringstream msg;
      msg << "train: diverged at epoch " << epoch << "; loss trace:";
      for (double l : result.loss_trace) msg << ' ' << l;
      throw Error(ErrorCode::kDivergence, msg.str());
    }
  }
  result.state = current;
  return result;
}

double memorization_check(const ModelState& state, std::span<const KnowledgeTriple> triples) {
  if (triples.empty()) return 1.0;
  const auto& tok = state.tokenizer();
  std::size_t hits = 0;
  for (const auto& triple : triples) {
    const auto prompt = encode_prompt(tok, "", fill_template(triple.relation, triple.subject));
    const auto object = tok.encode(triple.old_object);
    if (object.empty()) continue;
    const auto produced = model::generate(state, prompt, object.size());
    if (produced == object) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(triples.size());
}

}  // namespace come::train

#pragma once

#include <random>
#include <string>
#include <vector>

#include "come/datakit.hpp"
#include "come/knowledge.hpp"
#include "come/model.hpp"
#include "come/numerics.hpp"

namespace come::testing {

using numerics::Matrix;
using numerics::Vector;

inline Vector random_vector(std::size_t dim, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = n(rng);
  return v;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& x : m.values()) x = n(rng);
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double relative_error(const Vector& a, const Vector& b) {
  return numerics::norm(a - b) / std::max(numerics::norm(b), 1e-300);
}

// Small vocabulary covering the hand-written requests below.
inline model::Tokenizer tiny_tokenizer() {
  return model::Tokenizer::from_words({"a", "b", "c", "d", "e", "kala", "mora", "tipa", "rune",
                                       "vosa", "lid", "pim", "sot", "ox", "fen", "gar"});
}

inline model::ModelConfig tiny_config(std::size_t layers = 3) {
  model::ModelConfig c;
  c.layer_count = layers;
  c.head_count = 2;
  c.d_model = 16;
  c.d_mlp = 32;
  c.max_seq = 16;
  c.seed = 7;
  return c;
}

inline model::ModelState tiny_model(std::size_t layers = 3, std::uint64_t seed = 7) {
  auto c = tiny_config(layers);
  c.seed = seed;
  return model::ModelState::initialize(c, tiny_tokenizer());
}

inline EditRequest tiny_request(std::string id = "r0", std::string subject = "kala",
                                std::string old_object = "vosa", std::string new_object = "lid") {
  EditRequest r;
  r.triple = {std::move(id), subject, "a b {}", std::move(old_object), std::move(new_object)};
  r.prompts.base = "a b " + subject;
  r.prompts.paraphrases = {"c d " + subject};
  r.prompts.neighborhood = {"a b gar"};
  return r;
}

// Constant logits favoring `token` at every position: final LayerNorm gain 0,
// bias pointing along e_0, unembedding reading e_0.
inline model::ModelState emitter(const model::ModelState& base, model::TokenId token, double margin = 10.0) {
  model::Parameters p = base.parameters();
  for (auto& x : p.final_gain.values()) x = 0.0;
  for (auto& x : p.final_bias.values()) x = 0.0;
  p.final_bias(0, 0) = 1.0;
  for (auto& x : p.unembedding.values()) x = 0.0;
  p.unembedding(0, token) = margin;
  return base.with_parameters(std::move(p));
}

inline model::ModelState uniform_model(const model::ModelState& base) {
  model::Parameters p = base.parameters();
  for (auto& x : p.unembedding.values()) x = 0.0;
  return base.with_parameters(std::move(p));
}

inline data::SynthSpec small_synth(std::size_t n_facts = 12, std::uint64_t seed = 0) {
  data::SynthSpec s;
  s.n_facts = n_facts;
  s.seed = seed;
  return s;
}

}  // namespace come::testing

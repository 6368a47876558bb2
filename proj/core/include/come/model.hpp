#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "come/numerics.hpp"
#include "come/tokenizer.hpp"

namespace come::model {

using numerics::Matrix;
using numerics::Vector;

struct ModelConfig {
  std::size_t layer_count = 4;
  std::size_t head_count = 4;
  std::size_t d_model = 64;
  std::size_t d_mlp = 256;
  std::size_t vocab_size = Tokenizer::kReserved;
  std::size_t max_seq = 32;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Linear maps are stored input-major (in × out) so that a row of activations
// times the matrix yields the output row. The MLP output projection is thus
// stored as d_mlp × d_model; get_mlp_out_weight() hands out the d_model × d_mlp
// view used by the editing math.
struct BlockParameters {
  Matrix ln1_gain, ln1_bias;
  Matrix qkv_weight, qkv_bias;
  Matrix attn_out_weight, attn_out_bias;
  Matrix ln2_gain, ln2_bias;
  Matrix mlp_in_weight, mlp_in_bias;
  Matrix mlp_out_weight, mlp_out_bias;

  bool operator==(const BlockParameters&) const = default;
};

struct Parameters {
  Matrix token_embedding;     // vocab × d_model
  Matrix position_embedding;  // max_seq × d_model
  std::vector<BlockParameters> blocks;
  Matrix final_gain, final_bias;
  Matrix unembedding;  // d_model × vocab

  static Parameters zeros(const ModelConfig& config);

  // Stable (name, tensor) listing used by checkpoints, optimizers and diffs.
  std::vector<std::pair<std::string, Matrix*>> named();
  std::vector<std::pair<std::string, const Matrix*>> named() const;

  bool operator==(const Parameters&) const = default;
};

std::string mlp_out_weight_name(std::size_t layer);

// Immutable model value. Copies share the underlying parameters.
class ModelState {
 public:
  ModelState(ModelConfig config, Tokenizer tokenizer, Parameters parameters,
             std::uint64_t version = 0);

  // Random initialization from config.seed; vocab_size is taken from the tokenizer.
  static ModelState initialize(ModelConfig config, Tokenizer tokenizer);

  const ModelConfig& config() const noexcept { return config_; }
  const Tokenizer& tokenizer() const noexcept { return *tokenizer_; }
  const Parameters& parameters() const noexcept { return *parameters_; }
  std::uint64_t version() const noexcept { return version_; }

  // New state holding `parameters`, version + 1.
  ModelState with_parameters(Parameters parameters) const;

 private:
  ModelConfig config_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  std::shared_ptr<const Parameters> parameters_;
  std::uint64_t version_ = 0;
};

// Adds `delta` to the residual stream leaving block `layer` at `position`.
struct Intervention {
  std::size_t layer = 0;
  std::size_t position = 0;
  Vector delta;
};

struct CaptureSite {
  std::size_t layer = 0;
  std::size_t position = 0;
};

struct HiddenCapture {
  std::size_t layer = 0;
  std::size_t position = 0;
  Vector hidden;   // residual stream after the block, interventions included
  Vector mlp_key;  // post-GELU activation feeding the MLP output projection
};

struct LayerTrace {
  Matrix input;
  Matrix ln1_hat, ln1_out;
  std::vector<double> ln1_rstd;
  Matrix qkv;
  std::vector<Matrix> attn_probs;  // one causal T×T matrix per head
  Matrix attn_concat;
  Matrix mid;
  Matrix ln2_hat, ln2_out;
  std::vector<double> ln2_rstd;
  Matrix mlp_pre;
  Matrix mlp_act;
  Matrix output;
};

// Every activation of one forward pass, kept for the backward pass.
struct ForwardTrace {
  TokenSequence tokens;
  std::vector<LayerTrace> layers;
  Matrix final_hat, final_out;
  std::vector<double> final_rstd;
  Matrix logits;  // T × vocab; empty when the pass stopped early
};

struct ForwardOutput {
  Matrix logits;
  std::vector<HiddenCapture> captures;
};

// Causal forward pass. Captures are returned in the order requested.
ForwardOutput forward(const ModelState& state, std::span<const TokenId> tokens,
                      std::span<const Intervention> interventions = {},
                      std::span<const CaptureSite> captures = {});

// Runs only as many blocks as the deepest capture needs; no logits.
std::vector<HiddenCapture> capture_hidden(const ModelState& state, std::span<const TokenId> tokens,
                                          std::span<const CaptureSite> captures,
                                          std::span<const Intervention> interventions = {});

// When `last_layer` is set, stops after that block and leaves logits empty.
ForwardTrace trace_forward(const ModelState& state, std::span<const TokenId> tokens,
                           std::span<const Intervention> interventions = {},
                           std::optional<std::size_t> last_layer = std::nullopt);

// Backpropagates d_logits. Parameter gradients are accumulated into `grads`
// when non-null. With `stop_layer`, returns d loss / d(output of that block)
// without descending further; otherwise returns d loss / d(embedding sum).
Matrix backward(const ModelState& state, const ForwardTrace& trace, const Matrix& d_logits,
                Parameters* grads, std::optional<std::size_t> stop_layer = std::nullopt);

// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits);

// Σ log P(target_k | prompt, target_<k).
double logprob_sequence(const ModelState& state, std::span<const TokenId> prompt,
                        std::span<const TokenId> target,
                        std::span<const Intervention> interventions = {});

struct LogProbGradient {
  double value = 0.0;
  Vector gradient;  // d value / d intervention.delta
};

LogProbGradient logprob_with_gradient(const ModelState& state, std::span<const TokenId> prompt,
                                      std::span<const TokenId> target,
                                      const Intervention& intervention);

Matrix get_mlp_out_weight(const ModelState& state, std::size_t layer);
ModelState set_mlp_out_weight(const ModelState& state, std::size_t layer, const Matrix& w);

// Greedy decoding when temperature is 0; otherwise softmax sampling seeded by `seed`.
// Stops at <eos> (not included) or after max_new tokens.
TokenSequence generate(const ModelState& state, std::span<const TokenId> prompt,
                       std::size_t max_new, std::uint64_t seed = 0, double temperature = 0.0);

}  // namespace come::model

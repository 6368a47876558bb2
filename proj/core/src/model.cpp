#include "come/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "come/error.hpp"

namespace come::model {

namespace k = numerics::kernels;

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix row_vector(std::size_t n, double fill) { return Matrix(1, n, fill); }

void fill_normal(Matrix& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : m.values()) x = dist(rng);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& hat,
                Matrix& out, std::vector<double>& rstd) {
  const std::size_t t = x.rows(), d = x.cols();
  hat = Matrix(t, d);
  out = Matrix(t, d);
  rstd.assign(t, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    auto hr = hat.row(r);
    auto orow = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * rs;
      orow[c] = hr[c] * gain(0, c) + bias(0, c);
    }
  }
}

// Adds d input into dx.
void layer_norm_backward(const Matrix& dy, const Matrix& hat, const std::vector<double>& rstd,
                         const Matrix& gain, Matrix& dx, Matrix* dgain, Matrix* dbias) {
  const std::size_t t = dy.rows(), d = dy.cols();
  std::vector<double> dhat(d);
  for (std::size_t r = 0; r < t; ++r) {
    auto dyr = dy.row(r);
    auto hr = hat.row(r);
    double mean_dhat = 0.0, mean_dhat_hat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dhat[c] = dyr[c] * gain(0, c);
      mean_dhat += dhat[c];
      mean_dhat_hat += dhat[c] * hr[c];
      if (dgain) (*dgain)(0, c) += dyr[c] * hr[c];
      if (dbias) (*dbias)(0, c) += dyr[c];
    }
    mean_dhat /= static_cast<double>(d);
    mean_dhat_hat /= static_cast<double>(d);
    auto dxr = dx.row(r);
    for (std::size_t c = 0; c < d; ++c)
      dxr[c] += rstd[r] * (dhat[c] - mean_dhat - hr[c] * mean_dhat_hat);
  }
}

// out[t×n] = x[t×k] · w[k×n] + bias
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& bias) {
  Matrix out(x.rows(), w.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) std::copy(bias.values().begin(), bias.values().end(), out.row(r).begin());
  k::gemm_nn(x.values(), w.values(), out.values(), x.rows(), x.cols(), w.cols());
  return out;
}

// Accumulates the affine map's gradients and returns d x.
Matrix affine_backward(const Matrix& dy, const Matrix& x, const Matrix& w, Matrix* dw, Matrix* db) {
  Matrix dx(x.rows(), x.cols());
  k::gemm_nt(dy.values(), w.values(), dx.values(), dy.rows(), dy.cols(), w.rows());
  if (dw) k::gemm_tn(x.values(), dy.values(), dw->values(), x.cols(), x.rows(), dy.cols());
  if (db)
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      auto dyr = dy.row(r);
      for (std::size_t c = 0; c < dy.cols(); ++c) (*db)(0, c) += dyr[c];
    }
  return dx;
}

void check_tokens(const ModelState& state, std::span<const TokenId> tokens) {
  const auto& cfg = state.config();
  if (tokens.empty()) throw Error(ErrorCode::kEmptyInput, "forward: empty token sequence");
  if (tokens.size() > cfg.max_seq) {
    std::ostringstream msg;
    msg << "forward: sequence length " << tokens.size() << " exceeds max_seq " << cfg.max_seq;
    throw Error(ErrorCode::kOutOfRange, msg.str());
  }
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= cfg.vocab_size) {
      std::ostringstream msg;
      msg << "forward: token id " << tokens[i] << " at position " << i << " outside vocabulary of "
          << cfg.vocab_size;
      throw Error(ErrorCode::kOutOfRange, msg.str());
    }
}

void check_site(const ModelState& state, std::size_t layer, std::size_t position, std::size_t len,
                const char* what) {
  if (layer >= state.config().layer_count || position >= len) {
    std::ostringstream msg;
    msg << what << ": site (layer " << layer << ", position " << position
        << ") out of range for " << state.config().layer_count << " layers and " << len
        << " tokens";
    throw Error(ErrorCode::kOutOfRange, msg.str());
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layer_count == 0) throw Error(ErrorCode::kInvalidConfig, "model: layer_count must be >= 1");
  if (head_count == 0 || d_model % head_count != 0)
    throw Error(ErrorCode::kInvalidConfig, "model: d_model must be divisible by head_count");
  if (d_mlp == 0) throw Error(ErrorCode::kInvalidConfig, "model: d_mlp must be >= 1");
  if (vocab_size < Tokenizer::kReserved)
    throw Error(ErrorCode::kInvalidConfig, "model: vocab_size must be >= 4");
  if (max_seq == 0) throw Error(ErrorCode::kInvalidConfig, "model: max_seq must be >= 1");
}

Parameters Parameters::zeros(const ModelConfig& c) {
  Parameters p;
  p.token_embedding = Matrix(c.vocab_size, c.d_model);
  p.position_embedding = Matrix(c.max_seq, c.d_model);
  p.blocks.resize(c.layer_count);
  for (auto& b : p.blocks) {
    b.ln1_gain = row_vector(c.d_model, 0.0);
    b.ln1_bias = row_vector(c.d_model, 0.0);
    b.qkv_weight = Matrix(c.d_model, 3 * c.d_model);
    b.qkv_bias = row_vector(3 * c.d_model, 0.0);
    b.attn_out_weight = Matrix(c.d_model, c.d_model);
    b.attn_out_bias = row_vector(c.d_model, 0.0);
    b.ln2_gain = row_vector(c.d_model, 0.0);
    b.ln2_bias = row_vector(c.d_model, 0.0);
    b.mlp_in_weight = Matrix(c.d_model, c.d_mlp);
    b.mlp_in_bias = row_vector(c.d_mlp, 0.0);
    b.mlp_out_weight = Matrix(c.d_mlp, c.d_model);
    b.mlp_out_bias = row_vector(c.d_model, 0.0);
  }
  p.final_gain = row_vector(c.d_model, 0.0);
  p.final_bias = row_vector(c.d_model, 0.0);
  p.unembedding = Matrix(c.d_model, c.vocab_size);
  return p;
}

namespace {

template <typename Self, typename Out>
void list_named(Self& p, Out& out) {
  out.emplace_back("tok_emb", &p.token_embedding);
  out.emplace_back("pos_emb", &p.position_embedding);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1.gain", &b.ln1_gain);
    out.emplace_back(pre + "ln1.bias", &b.ln1_bias);
    out.emplace_back(pre + "attn.qkv.weight", &b.qkv_weight);
    out.emplace_back(pre + "attn.qkv.bias", &b.qkv_bias);
    out.emplace_back(pre + "attn.out.weight", &b.attn_out_weight);
    out.emplace_back(pre + "attn.out.bias", &b.attn_out_bias);
    out.emplace_back(pre + "ln2.gain", &b.ln2_gain);
    out.emplace_back(pre + "ln2.bias", &b.ln2_bias);
    out.emplace_back(pre + "mlp.in.weight", &b.mlp_in_weight);
    out.emplace_back(pre + "mlp.in.bias", &b.mlp_in_bias);
    out.emplace_back(pre + "mlp.out.weight", &b.mlp_out_weight);
    out.emplace_back(pre + "mlp.out.bias", &b.mlp_out_bias);
  }
  out.emplace_back("ln_f.gain", &p.final_gain);
  out.emplace_back("ln_f.bias", &p.final_bias);
  out.emplace_back("unembed", &p.unembedding);
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> Parameters::named() {
  std::vector<std::pair<std::string, Matrix*>> out;
  list_named(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> Parameters::named() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  list_named(*this, out);
  return out;
}

std::string mlp_out_weight_name(std::size_t layer) {
  return "blocks." + std::to_string(layer) + ".mlp.out.weight";
}

ModelState::ModelState(ModelConfig config, Tokenizer tokenizer, Parameters parameters,
                       std::uint64_t version)
    : config_(config),
      tokenizer_(std::make_shared<const Tokenizer>(std::move(tokenizer))),
      parameters_(std::make_shared<const Parameters>(std::move(parameters))),
      version_(version) {
  config_.validate();
  if (tokenizer_->size() != config_.vocab_size)
    throw Error(ErrorCode::kInvalidConfig, "model: tokenizer size differs from vocab_size");
  const Parameters expected = Parameters::zeros(config_);
  auto want = expected.named();
  auto have = parameters_->named();
  if (want.size() != have.size())
    throw Error(ErrorCode::kDimensionMismatch, "model: parameter set does not match config");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].second->rows() != have[i].second->rows() ||
        want[i].second->cols() != have[i].second->cols())
      throw Error(ErrorCode::kDimensionMismatch, "model: parameter '" + want[i].first +
                                                     "' has the wrong shape");
    if (!numerics::all_finite(have[i].second->values()))
      throw Error(ErrorCode::kNonFinite, "model: parameter '" + want[i].first + "' is not finite");
  }
}

ModelState ModelState::initialize(ModelConfig config, Tokenizer tokenizer) {
  config.vocab_size = tokenizer.size();
  config.validate();
  Parameters p = Parameters::zeros(config);
  std::mt19937_64 rng(config.seed);
  const double std_base = 0.02;
  const double std_proj = 0.02 / std::sqrt(2.0 * static_cast<double>(config.layer_count));
  fill_normal(p.token_embedding, rng, std_base);
  fill_normal(p.position_embedding, rng, std_base);
  for (auto& b : p.blocks) {
    std::fill(b.ln1_gain.values().begin(), b.ln1_gain.values().end(), 1.0);
    std::fill(b.ln2_gain.values().begin(), b.ln2_gain.values().end(), 1.0);
    fill_normal(b.qkv_weight, rng, std_base);
    fill_normal(b.attn_out_weight, rng, std_proj);
    fill_normal(b.mlp_in_weight, rng, std_base);
    fill_normal(b.mlp_out_weight, rng, std_proj);
  }
  std::fill(p.final_gain.values().begin(), p.final_gain.values().end(), 1.0);
  fill_normal(p.unembedding, rng, std_base);
  return ModelState(config, std::move(tokenizer), std::move(p), 0);
}

ModelState ModelState::with_parameters(Parameters parameters) const {
  return ModelState(config_, *tokenizer_, std::move(parameters), version_ + 1);
}

ForwardTrace trace_forward(const ModelState& state, std::span<const TokenId> tokens,
                           std::span<const Intervention> interventions,
                           std::optional<std::size_t> last_layer) {
  check_tokens(state, tokens);
  const auto& cfg = state.config();
  const auto& p = state.parameters();
  const std::size_t t_len = tokens.size(), d = cfg.d_model, heads = cfg.head_count;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& iv : interventions) {
    check_site(state, iv.layer, iv.position, t_len, "intervention");
    if (iv.delta.dim() != d)
      throw Error(ErrorCode::kDimensionMismatch, "intervention: delta dim differs from d_model");
  }
  const std::size_t stop = last_layer.value_or(cfg.layer_count - 1);
  if (stop >= cfg.layer_count) throw Error(ErrorCode::kOutOfRange, "forward: layer out of range");

  ForwardTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  Matrix x(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto xr = x.row(t);
    auto te = p.token_embedding.row(tokens[t]);
    auto pe = p.position_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) xr[c] = te[c] + pe[c];
  }

  tr.layers.reserve(stop + 1);
  for (std::size_t li = 0; li <= stop; ++li) {
    const auto& b = p.blocks[li];
    LayerTrace lt;
    lt.input = x;
    layer_norm(x, b.ln1_gain, b.ln1_bias, lt.ln1_hat, lt.ln1_out, lt.ln1_rstd);
    lt.qkv = affine(lt.ln1_out, b.qkv_weight, b.qkv_bias);
    lt.attn_concat = Matrix(t_len, d);
    lt.attn_probs.assign(heads, Matrix(t_len, t_len));
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix& probs = lt.attn_probs[h];
      for (std::size_t i = 0; i < t_len; ++i) {
        const auto qi = lt.qkv.row(i).subspan(h * dh, dh);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double s = scale * k::dot(qi, lt.qkv.row(j).subspan(d + h * dh, dh));
          probs(i, j) = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          probs(i, j) = std::exp(probs(i, j) - mx);
          z += probs(i, j);
        }
        auto out = lt.attn_concat.row(i).subspan(h * dh, dh);
        for (std::size_t j = 0; j <= i; ++j) {
          probs(i, j) /= z;
          const double pij = probs(i, j);
          const auto vj = lt.qkv.row(j).subspan(2 * d + h * dh, dh);
          for (std::size_t c = 0; c < dh; ++c) out[c] += pij * vj[c];
        }
      }
    }
    lt.mid = affine(lt.attn_concat, b.attn_out_weight, b.attn_out_bias);
    {
      auto mv = lt.mid.values();
      auto xv = x.values();
      for (std::size_t i = 0; i < mv.size(); ++i) mv[i] += xv[i];
    }
    layer_norm(lt.mid, b.ln2_gain, b.ln2_bias, lt.ln2_hat, lt.ln2_out, lt.ln2_rstd);
    lt.mlp_pre = affine(lt.ln2_out, b.mlp_in_weight, b.mlp_in_bias);
    lt.mlp_act = Matrix(t_len, cfg.d_mlp);
    {
      auto pre = lt.mlp_pre.values();
      auto act = lt.mlp_act.values();
      for (std::size_t i = 0; i < pre.size(); ++i) act[i] = gelu(pre[i]);
    }
    lt.output = affine(lt.mlp_act, b.mlp_out_weight, b.mlp_out_bias);
    {
      auto ov = lt.output.values();
      auto mv = lt.mid.values();
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += mv[i];
    }
    for (const auto& iv : interventions) {
      if (iv.layer != li) continue;
      auto row = lt.output.row(iv.position);
      for (std::size_t c = 0; c < d; ++c) row[c] += iv.delta[c];
    }
    x = lt.output;
    tr.layers.push_back(std::move(lt));
  }

  if (stop + 1 == cfg.layer_count) {
    layer_norm(x, p.final_gain, p.final_bias, tr.final_hat, tr.final_out, tr.final_rstd);
    tr.logits = Matrix(t_len, cfg.vocab_size);
    k::gemm_nn(tr.final_out.values(), p.unembedding.values(), tr.logits.values(), t_len, d,
               cfg.vocab_size);
  }
  return tr;
}

namespace {

std::vector<HiddenCapture> collect_captures(const ForwardTrace& tr,
                                            std::span<const CaptureSite> captures) {
  std::vector<HiddenCapture> out;
  out.reserve(captures.size());
  for (const auto& site : captures) {
    const auto& lt = tr.layers[site.layer];
    auto h = lt.output.row(site.position);
    auto key = lt.mlp_act.row(site.position);
    out.push_back({site.layer, site.position, Vector(std::vector<double>(h.begin(), h.end())),
                   Vector(std::vector<double>(key.begin(), key.end()))});
  }
  return out;
}

}  // namespace

ForwardOutput forward(const ModelState& state, std::span<const TokenId> tokens,
                      std::span<const Intervention> interventions,
                      std::span<const CaptureSite> captures) {
  for (const auto& site : captures)
    check_site(state, site.layer, site.position, tokens.size(), "capture");
  ForwardTrace tr = trace_forward(state, tokens, interventions);
  return {std::move(tr.logits), collect_captures(tr, captures)};
}

std::vector<HiddenCapture> capture_hidden(const ModelState& state, std::span<const TokenId> tokens,
                                          std::span<const CaptureSite> captures,
                                          std::span<const Intervention> interventions) {
  if (captures.empty()) return {};
  std::size_t deepest = 0;
  for (const auto& site : captures) {
    check_site(state, site.layer, site.position, tokens.size(), "capture");
    deepest = std::max(deepest, site.layer);
  }
  ForwardTrace tr = trace_forward(state, tokens, interventions, deepest);
  return collect_captures(tr, captures);
}

Matrix backward(const ModelState& state, const ForwardTrace& tr, const Matrix& d_logits,
                Parameters* grads, std::optional<std::size_t> stop_layer) {
  const auto& cfg = state.config();
  const auto& p = state.parameters();
  const std::size_t t_len = tr.tokens.size(), d = cfg.d_model, heads = cfg.head_count;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (tr.logits.rows() != t_len || tr.layers.size() != cfg.layer_count)
    throw Error(ErrorCode::kInvalidData, "backward: trace does not cover the full model");
  if (d_logits.rows() != t_len || d_logits.cols() != cfg.vocab_size)
    throw Error(ErrorCode::kDimensionMismatch, "backward: d_logits shape mismatch");

  Matrix d_final(t_len, d);
  k::gemm_nt(d_logits.values(), p.unembedding.values(), d_final.values(), t_len, cfg.vocab_size, d);
  if (grads)
    k::gemm_tn(tr.final_out.values(), d_logits.values(), grads->unembedding.values(), d, t_len,
               cfg.vocab_size);
  Matrix dx(t_len, d);
  layer_norm_backward(d_final, tr.final_hat, tr.final_rstd, p.final_gain, dx,
                      grads ? &grads->final_gain : nullptr, grads ? &grads->final_bias : nullptr);

  for (std::size_t li = cfg.layer_count; li-- > 0;) {
    if (stop_layer && *stop_layer == li) return dx;
    const auto& b = p.blocks[li];
    const auto& lt = tr.layers[li];
    BlockParameters* gb = grads ? &grads->blocks[li] : nullptr;

    // MLP: output = mid + act·W_out + b_out
    Matrix d_act = affine_backward(dx, lt.mlp_act, b.mlp_out_weight,
                                   gb ? &gb->mlp_out_weight : nullptr,
                                   gb ? &gb->mlp_out_bias : nullptr);
    {
      auto da = d_act.values();
      auto pre = lt.mlp_pre.values();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= gelu_grad(pre[i]);
    }
    Matrix d_ln2 = affine_backward(d_act, lt.ln2_out, b.mlp_in_weight,
                                   gb ? &gb->mlp_in_weight : nullptr,
                                   gb ? &gb->mlp_in_bias : nullptr);
    Matrix d_mid = dx;
    layer_norm_backward(d_ln2, lt.ln2_hat, lt.ln2_rstd, b.ln2_gain, d_mid,
                        gb ? &gb->ln2_gain : nullptr, gb ? &gb->ln2_bias : nullptr);

    // Attention: mid = input + concat·W_o + b_o
    Matrix d_concat = affine_backward(d_mid, lt.attn_concat, b.attn_out_weight,
                                      gb ? &gb->attn_out_weight : nullptr,
                                      gb ? &gb->attn_out_bias : nullptr);
    Matrix d_qkv(t_len, 3 * d);
    std::vector<double> dp(t_len);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& probs = lt.attn_probs[h];
      for (std::size_t i = 0; i < t_len; ++i) {
        const auto dout = d_concat.row(i).subspan(h * dh, dh);
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          dp[j] = k::dot(dout, lt.qkv.row(j).subspan(2 * d + h * dh, dh));
          weighted += probs(i, j) * dp[j];
          auto dv = d_qkv.row(j).subspan(2 * d + h * dh, dh);
          const double pij = probs(i, j);
          for (std::size_t c = 0; c < dh; ++c) dv[c] += pij * dout[c];
        }
        const auto qi = lt.qkv.row(i).subspan(h * dh, dh);
        auto dq = d_qkv.row(i).subspan(h * dh, dh);
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = probs(i, j) * (dp[j] - weighted) * scale;
          const auto kj = lt.qkv.row(j).subspan(d + h * dh, dh);
          auto dk = d_qkv.row(j).subspan(d + h * dh, dh);
          for (std::size_t c = 0; c < dh; ++c) {
            dq[c] += ds * kj[c];
            dk[c] += ds * qi[c];
          }
        }
      }
    }
    Matrix d_ln1 = affine_backward(d_qkv, lt.ln1_out, b.qkv_weight,
                                   gb ? &gb->qkv_weight : nullptr, gb ? &gb->qkv_bias : nullptr);
    layer_norm_backward(d_ln1, lt.ln1_hat, lt.ln1_rstd, b.ln1_gain, d_mid,
                        gb ? &gb->ln1_gain : nullptr, gb ? &gb->ln1_bias : nullptr);
    dx = std::move(d_mid);
  }

  if (grads) {
    for (std::size_t t = 0; t < t_len; ++t) {
      auto src = dx.row(t);
      auto te = grads->token_embedding.row(tr.tokens[t]);
      auto pe = grads->position_embedding.row(t);
      for (std::size_t c = 0; c < d; ++c) {
        te[c] += src[c];
        pe[c] += src[c];
      }
    }
  }
  return dx;
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto lr = logits.row(r);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double z = 0.0;
    for (double v : lr) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    auto orow = out.row(r);
    for (std::size_t c = 0; c < lr.size(); ++c) orow[c] = lr[c] - lse;
  }
  return out;
}

namespace {

TokenSequence join_for_scoring(std::span<const TokenId> prompt, std::span<const TokenId> target) {
  if (prompt.empty() || target.empty())
    throw Error(ErrorCode::kEmptyInput, "logprob: prompt and target must be non-empty");
  TokenSequence seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  return seq;
}

}  // namespace

double logprob_sequence(const ModelState& state, std::span<const TokenId> prompt,
                        std::span<const TokenId> target,
                        std::span<const Intervention> interventions) {
  const TokenSequence seq = join_for_scoring(prompt, target);
  const ForwardTrace tr = trace_forward(state, seq, interventions);
  const Matrix lp = log_softmax(tr.logits);
  double total = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] >= state.config().vocab_size)
      throw Error(ErrorCode::kOutOfRange, "logprob: target token outside vocabulary");
    total += lp(prompt.size() - 1 + k, target[k]);
  }
  return total;
}

LogProbGradient logprob_with_gradient(const ModelState& state, std::span<const TokenId> prompt,
                                      std::span<const TokenId> target,
                                      const Intervention& intervention) {
  const TokenSequence seq = join_for_scoring(prompt, target);
  const ForwardTrace tr = trace_forward(state, seq, std::span(&intervention, 1));
  const Matrix lp = log_softmax(tr.logits);
  Matrix d_logits(seq.size(), state.config().vocab_size);
  LogProbGradient out;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] >= state.config().vocab_size)
      throw Error(ErrorCode::kOutOfRange, "logprob: target token outside vocabulary");
    const std::size_t row = prompt.size() - 1 + k;
    out.value += lp(row, target[k]);
    // d log p_target / d logits = onehot − softmax
    auto dl = d_logits.row(row);
    auto lr = lp.row(row);
    for (std::size_t c = 0; c < dl.size(); ++c) dl[c] -= std::exp(lr[c]);
    dl[target[k]] += 1.0;
  }
  const Matrix d_hidden = backward(state, tr, d_logits, nullptr, intervention.layer);
  auto g = d_hidden.row(intervention.position);
  out.gradient = Vector(std::vector<double>(g.begin(), g.end()));
  return out;
}

Matrix get_mlp_out_weight(const ModelState& state, std::size_t layer) {
  if (layer >= state.config().layer_count)
    throw Error(ErrorCode::kOutOfRange, "get_mlp_out_weight: layer out of range");
  return state.parameters().blocks[layer].mlp_out_weight.transpose();
}

ModelState set_mlp_out_weight(const ModelState& state, std::size_t layer, const Matrix& w) {
  const auto& cfg = state.config();
  if (layer >= cfg.layer_count)
    throw Error(ErrorCode::kOutOfRange, "set_mlp_out_weight: layer out of range");
  if (w.rows() != cfg.d_model || w.cols() != cfg.d_mlp) {
    std::ostringstream msg;
    msg << "set_mlp_out_weight: expected " << cfg.d_model << "x" << cfg.d_mlp << ", got "
        << w.rows() << "x" << w.cols();
    throw Error(ErrorCode::kDimensionMismatch, msg.str());
  }
  if (!numerics::all_finite(w.values()))
    throw Error(ErrorCode::kNonFinite, "set_mlp_out_weight: non-finite weight");
  Parameters p = state.parameters();
  p.blocks[layer].mlp_out_weight = w.transpose();
  return state.with_parameters(std::move(p));
}

TokenSequence generate(const ModelState& state, std::span<const TokenId> prompt,
                       std::size_t max_new, std::uint64_t seed, double temperature) {
  if (max_new == 0) throw Error(ErrorCode::kInvalidConfig, "generate: max_new must be >= 1");
  if (prompt.empty()) throw Error(ErrorCode::kEmptyInput, "generate: empty prompt");
  std::mt19937_64 rng(seed);
  const std::size_t window = state.config().max_seq;
  TokenSequence context(prompt.begin(), prompt.end());
  TokenSequence produced;
  for (std::size_t step = 0; step < max_new; ++step) {
    // Sliding window keeps the last max_seq tokens.
    const std::size_t start = context.size() > window ? context.size() - window : 0;
    const ForwardTrace tr =
        trace_forward(state, std::span(context).subspan(start));
    auto last = tr.logits.row(tr.logits.rows() - 1);
    TokenId next = 0;
    if (temperature <= 0.0) {
      next = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
    } else {
      std::vector<double> weights(last.size());
      const double mx = *std::max_element(last.begin(), last.end());
      for (std::size_t c = 0; c < last.size(); ++c)
        weights[c] = std::exp((last[c] - mx) / temperature);
      std::discrete_distribution<TokenId> dist(weights.begin(), weights.end());
      next = dist(rng);
    }
    if (next == Tokenizer::kEos) break;
    produced.push_back(next);
    context.push_back(next);
  }
  return produced;
}

}  // namespace come::model

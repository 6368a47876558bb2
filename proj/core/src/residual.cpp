#include "come/residual.hpp"

#include <cmath>

#include "come/edit_config.hpp"
#include "come/error.hpp"

namespace come::edit {

using model::Intervention;
using model::TokenSequence;

std::string_view to_string(EditMode mode) {
  switch (mode) {
    case EditMode::kMemit: return "MEMIT";
    case EditMode::kRome: return "ROME";
    case EditMode::kCome: return "COME";
  }
  return "?";
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::kFull: return "full";
    case Ablation::kNoDeltaOld: return "no_delta_old";
    case Ablation::kNoDeltaCommon: return "no_delta_common";
    case Ablation::kNoRestriction: return "no_restriction";
  }
  return "?";
}

EditMode parse_edit_mode(std::string_view text) {
  if (text == "MEMIT" || text == "memit") return EditMode::kMemit;
  if (text == "ROME" || text == "rome") return EditMode::kRome;
  if (text == "COME" || text == "come") return EditMode::kCome;
  throw Error(ErrorCode::kInvalidConfig, "unknown edit mode '" + std::string(text) + "'");
}

Ablation parse_ablation(std::string_view text) {
  for (auto a : {Ablation::kFull, Ablation::kNoDeltaOld, Ablation::kNoDeltaCommon,
                 Ablation::kNoRestriction})
    if (to_string(a) == text) return a;
  throw Error(ErrorCode::kInvalidConfig, "unknown ablation '" + std::string(text) + "'");
}

void EditConfig::validate(const model::ModelConfig& model) const {
  if (target_layers.empty()) throw Error(ErrorCode::kInvalidConfig, "edit: no target layers");
  for (std::size_t i = 0; i < target_layers.size(); ++i) {
    if (target_layers[i] >= model.layer_count)
      throw Error(ErrorCode::kInvalidConfig,
                  "edit: target layer " + std::to_string(target_layers[i]) + " out of range");
    if (i > 0 && target_layers[i] <= target_layers[i - 1])
      throw Error(ErrorCode::kInvalidConfig, "edit: target layers must be strictly ascending");
  }
  if (mode == EditMode::kRome && target_layers.size() != 1)
    throw Error(ErrorCode::kInvalidConfig, "edit: ROME mode requires exactly one target layer");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::kInvalidConfig, "edit: lambda must be >= 0");
  if (covariance_samples < 1)
    throw Error(ErrorCode::kInvalidConfig, "edit: covariance_samples must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw Error(ErrorCode::kInvalidConfig, "edit: alpha must be >= 0");
  if (!(top_p >= 0.0 && top_p <= 100.0))
    throw Error(ErrorCode::kInvalidConfig, "edit: top_p must lie in [0,100]");
  opt.validate();
}

SubjectSite locate_subject(const model::Tokenizer& tok, const EditRequest& request,
                           std::string_view prefix, std::string_view prompt) {
  const TokenSequence subject = tok.encode(request.triple.subject);
  const TokenSequence prompt_tokens = tok.encode(prompt);
  const auto start = model::find_subsequence(prompt_tokens, subject);
  if (!start)
    throw Error(ErrorCode::kSubjectNotFound, "request '" + request.triple.id + "': subject '" +
                                                 request.triple.subject +
                                                 "' not found in prompt '" + std::string(prompt) + "'");
  SubjectSite site;
  site.tokens = encode_prompt(tok, prefix, prompt);
  const std::size_t prefix_len = site.tokens.size() - 1 - prompt_tokens.size();
  site.position = 1 + prefix_len + *start + subject.size() - 1;
  return site;
}

std::vector<std::string> effective_prefixes(const PromptSet& prompts) {
  if (prompts.prefixes.empty()) return {std::string()};
  return prompts.prefixes;
}

Vector collect_key(const model::ModelState& state, const EditRequest& request, std::size_t layer) {
  const auto prefixes = effective_prefixes(request.prompts);
  Vector sum(state.config().d_mlp);
  for (const auto& prefix : prefixes) {
    const auto site = locate_subject(state.tokenizer(), request, prefix, request.prompts.base);
    const model::CaptureSite where{layer, site.position};
    const auto captured = model::capture_hidden(state, site.tokens, std::span(&where, 1));
    sum = sum + captured.front().mlp_key;
  }
  return (1.0 / static_cast<double>(prefixes.size())) * sum;
}

Vector subject_hidden(const model::ModelState& state, const EditRequest& request, std::size_t layer) {
  const auto site = locate_subject(state.tokenizer(), request, "", request.prompts.base);
  const model::CaptureSite where{layer, site.position};
  return model::capture_hidden(state, site.tokens, std::span(&where, 1)).front().hidden;
}

namespace {

TokenSequence encode_target(const model::Tokenizer& tok, const EditRequest& request,
                            std::string_view target_object) {
  TokenSequence target = tok.encode(target_object);
  if (target.empty())
    throw Error(ErrorCode::kInvalidData, "request '" + request.triple.id + "': empty target object");
  for (auto t : target)
    if (t == model::Tokenizer::kUnk)
      throw Error(ErrorCode::kInvalidData, "request '" + request.triple.id + "': target '" +
                                               std::string(target_object) +
                                               "' is not in the vocabulary");
  return target;
}

}  // namespace

double residual_objective(const model::ModelState& state, const EditRequest& request,
                          std::string_view target_object, std::size_t layer, const Vector& delta,
                          Vector* gradient) {
  const TokenSequence target = encode_target(state.tokenizer(), request, target_object);
  const auto prefixes = effective_prefixes(request.prompts);
  const double scale = 1.0 / static_cast<double>(prefixes.size());
  double loss = 0.0;
  if (gradient) *gradient = Vector(delta.dim());
  for (const auto& prefix : prefixes) {
    const auto site = locate_subject(state.tokenizer(), request, prefix, request.prompts.base);
    const Intervention iv{layer, site.position, delta};
    if (gradient) {
      const auto lg = model::logprob_with_gradient(state, site.tokens, target, iv);
      loss -= scale * lg.value;
      for (std::size_t i = 0; i < delta.dim(); ++i) (*gradient)[i] -= scale * lg.gradient[i];
    } else {
      loss -= scale * model::logprob_sequence(state, site.tokens, target, std::span(&iv, 1));
    }
  }
  return loss;
}

ResidualFit fit_residual(const model::ModelState& state, const EditRequest& request,
                         std::string_view target_object, std::size_t layer,
                         const numerics::OptimizerConfig& opt) {
  ResidualFit fit;
  fit.hidden = subject_hidden(state, request, layer);
  const double max_norm = opt.clamp_factor * numerics::norm(fit.hidden);
  auto objective = [&](const Vector& x, Vector& grad) {
    return residual_objective(state, request, target_object, layer, x, &grad);
  };
  auto clamp = [max_norm](Vector& x) {
    const double n = numerics::norm(x);
    if (n <= max_norm) return;
    // Shrink slightly below the bound so rounding cannot leave ‖x‖ above it.
    const double s = (max_norm / n) * (1.0 - 1e-12);
    for (std::size_t i = 0; i < x.dim(); ++i) x[i] *= s;
  };
  auto result = numerics::descend_traced(objective, Vector(state.config().d_model), opt, clamp);
  fit.delta = std::move(result.argument);
  fit.loss_trace = std::move(result.loss_trace);
  return fit;
}

}  // namespace come::edit

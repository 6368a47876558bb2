#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "come/knowledge.hpp"
#include "come/model.hpp"
#include "come/numerics.hpp"

namespace come::edit {

using numerics::Vector;

struct SubjectSite {
  model::TokenSequence tokens;  // <bos> + prefix + prompt
  std::size_t position = 0;     // last subject token
};

// Locates the subject's last token by exact token-span match in `prompt`.
// Throws kSubjectNotFound naming the request.
SubjectSite locate_subject(const model::Tokenizer& tok, const EditRequest& request,
                           std::string_view prefix, std::string_view prompt);

// The request's prefixes, or a single empty prefix when none are listed.
std::vector<std::string> effective_prefixes(const PromptSet& prompts);

// Mean over prefixes of the post-GELU MLP activation at the last subject token.
Vector collect_key(const model::ModelState& state, const EditRequest& request, std::size_t layer);

// Residual stream after block `layer` at the last subject token of the bare base prompt.
Vector subject_hidden(const model::ModelState& state, const EditRequest& request, std::size_t layer);

struct ResidualFit {
  Vector delta;
  Vector hidden;  // h at the optimized layer, used for the norm clamp
  std::vector<double> loss_trace;

  double initial_loss() const { return loss_trace.front(); }
  double final_loss() const { return loss_trace.back(); }
};

// Minimizes the prefix-averaged negative log-probability of `target_object`
// with δ added at the last subject token of `layer`, keeping
// ‖δ‖ ≤ clamp_factor·‖h‖. δ starts at zero.
ResidualFit fit_residual(const model::ModelState& state, const EditRequest& request,
                         std::string_view target_object, std::size_t layer,
                         const numerics::OptimizerConfig& opt);

inline Vector optimize_residual(const model::ModelState& state, const EditRequest& request,
                                std::string_view target_object, std::size_t layer,
                                const numerics::OptimizerConfig& opt) {
  return fit_residual(state, request, target_object, layer, opt).delta;
}

// The objective minimized by fit_residual, exposed for gradient checks.
double residual_objective(const model::ModelState& state, const EditRequest& request,
                          std::string_view target_object, std::size_t layer, const Vector& delta,
                          Vector* gradient);

}  // namespace come::edit

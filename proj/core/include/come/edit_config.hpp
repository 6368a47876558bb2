#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "come/model.hpp"
#include "come/numerics.hpp"

namespace come::edit {

enum class EditMode { kMemit, kRome, kCome };

// Ablations of the conflict-free pipeline.
enum class Ablation {
  kFull,
  kNoDeltaOld,     // no outdated residual: u = 0
  kNoDeltaCommon,  // no shared component: u = δ′
  kNoRestriction,  // top-p forced to 100
};

std::string_view to_string(EditMode mode);
std::string_view to_string(Ablation ablation);
EditMode parse_edit_mode(std::string_view text);
Ablation parse_ablation(std::string_view text);

struct EditConfig {
  // Ascending; the last entry is the layer whose hidden state is optimized.
  std::vector<std::size_t> target_layers{1, 2};
  double lambda = 1.0;
  std::size_t covariance_samples = 1000;
  std::uint64_t covariance_seed = 0;
  numerics::OptimizerConfig opt;
  EditMode mode = EditMode::kCome;
  double alpha = 0.1;
  double top_p = 20.0;
  Ablation ablation = Ablation::kFull;
  // Diagnostic: pick the top-p coordinates across the whole batch instead of per request.
  bool pooled_mask = false;
  // Diagnostic: when false, keys stay at their pre-edit values and the remaining
  // residual is book-kept arithmetically instead of re-measured after each layer.
  bool recompute_between_layers = true;

  std::size_t final_layer() const { return target_layers.back(); }
  // Unlearning strength after the ablation is applied.
  double effective_top_p() const { return ablation == Ablation::kNoRestriction ? 100.0 : top_p; }
  void validate(const model::ModelConfig& model) const;
};

}  // namespace come::edit

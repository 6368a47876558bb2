#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "come/edit_config.hpp"
#include "come/knowledge.hpp"
#include "come/model.hpp"
#include "come/numerics.hpp"
#include "come/residual.hpp"
#include "come/unlearning.hpp"

namespace come::edit {

using numerics::Matrix;

struct TargetVector {
  std::string request_id;
  Vector z;
  Vector h_l;
  Vector residual;  // z − h_l
};

// Builds z = h + δ and stores the residual as z − h.
TargetVector make_target(std::string request_id, const Vector& h_l, const Vector& delta);
// Keeps a precomputed z (e.g. after unlearning) and recomputes the residual.
TargetVector target_from_z(std::string request_id, const Vector& h_l, Vector z);

struct RequestDiagnostics {
  std::string request_id;
  double hidden_norm = 0.0;
  double delta_norm = 0.0;
  double delta_old_norm = 0.0;
  double unlearn_norm = 0.0;
  std::size_t masked_count = 0;
  bool degenerate = false;
  double initial_loss = 0.0;  // −log P(o*) before optimization
  double final_loss = 0.0;
  double old_initial_loss = 0.0;  // −log P(o) before optimizing δ′ (CoME only)
  double old_final_loss = 0.0;
};

struct TargetAssembly {
  std::vector<TargetVector> targets;
  std::vector<RequestDiagnostics> diagnostics;
  // Filled in CoME mode only.
  std::vector<unlearn::ResidualBundle> bundles;
  std::vector<unlearn::MaskSpec> masks;
};

TargetAssembly assemble_targets_detailed(const model::ModelState& state,
                                         std::span<const EditRequest> requests,
                                         const EditConfig& config);

inline std::vector<TargetVector> assemble_targets(const model::ModelState& state,
                                                  std::span<const EditRequest> requests,
                                                  const EditConfig& config) {
  return assemble_targets_detailed(state, requests, config).targets;
}

// λ·(1/n)·Σ k kᵀ, exactly symmetric.
Matrix second_moment(std::span<const Vector> keys, double lambda);

// Second moment of MLP keys at `layer`, sampled at n uniformly random
// (sequence, position) pairs of `samples`.
Matrix estimate_covariance(const model::ModelState& state, std::size_t layer,
                           std::span<const model::TokenSequence> samples, std::size_t n,
                           double lambda, std::uint64_t seed);

using CovarianceMap = std::map<std::size_t, Matrix>;

// One covariance per target layer, seeds derived from config.covariance_seed.
CovarianceMap compute_covariances(const model::ModelState& state, const EditConfig& config,
                                  std::span<const model::TokenSequence> samples);

// Δ = R K̂ᵀ (C + K̂K̂ᵀ)⁻¹
Matrix closed_form_delta(const Matrix& residuals, const Matrix& keys, const Matrix& covariance);

struct LayerUpdate {
  std::size_t layer = 0;
  Matrix keys;        // d_mlp × N
  Matrix values;      // d_model × N, W K̂ + R
  Matrix residuals;   // d_model × N
  Matrix covariance;  // d_mlp × d_mlp
  Matrix delta;       // d_model × d_mlp
};

struct SpreadResult {
  model::ModelState state;
  std::vector<LayerUpdate> updates;
};

// Distributes the residuals over the target layers in ascending order,
// solving one closed-form update per layer.
SpreadResult spread_updates(const model::ModelState& state, std::span<const EditRequest> requests,
                            std::span<const TargetVector> targets, const EditConfig& config,
                            const CovarianceMap& covariances);

struct LayerSummary {
  std::size_t layer = 0;
  double delta_frobenius = 0.0;
  double residual_frobenius = 0.0;
};

struct BatchResult {
  model::ModelState state;
  std::vector<RequestDiagnostics> diagnostics;
  std::vector<LayerSummary> layers;
  std::vector<unlearn::ResidualBundle> bundles;
  std::vector<unlearn::MaskSpec> masks;
};

// Keys → residuals → [unlearning] → spread. The input state is never touched;
// any failure propagates before a new state is returned.
BatchResult edit_batch(const model::ModelState& state, std::span<const EditRequest> requests,
                       const EditConfig& config, const CovarianceMap& covariances);

}  // namespace come::edit

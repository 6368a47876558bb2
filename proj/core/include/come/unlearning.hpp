#pragma once

#include <span>
#include <string>
#include <vector>

#include "come/edit_config.hpp"
#include "come/knowledge.hpp"
#include "come/model.hpp"
#include "come/numerics.hpp"
#include "come/residual.hpp"

// Conflict-free unlearning of outdated knowledge on top of the target vectors:
// extract the residual toward the old object, keep the part it shares with the
// new-object residual, and subtract the rest on the largest coordinates only.
namespace come::unlearn {

using numerics::Vector;

inline constexpr double kAntiParallelTolerance = 1e-8;
inline constexpr double kZeroNormTolerance = 1e-12;

struct Direction {
  Vector direction;
  bool degenerate = false;
};

// δ/‖δ‖ + δ′/‖δ′‖. Degenerate when either input has norm < 1e-12 (only the
// non-zero unit vector is summed) or the sum has norm < 1e-8.
Direction common_direction(const Vector& delta_new, const Vector& delta_old);

// Vector projection of δ′ onto the unit direction; zero when degenerate.
Vector project_common(const Vector& delta_old, const Vector& direction, bool degenerate);

// u = δ′ − δ″
Vector unlearn_vector(const Vector& delta_old, const Vector& common);

struct MaskSpec {
  double p = 0.0;
  std::vector<std::size_t> selected;  // ascending coordinate indices
  double threshold = 0.0;             // smallest |u| among selected coordinates
};

// ceil(p·count/100), computed exactly for integral p.
std::size_t mask_cardinality(double p, std::size_t count);

// Top-p% coordinates of |u|, ties broken by lower index. Empty when p = 0 or u = 0.
MaskSpec build_mask(const Vector& u, double p);

// Diagnostic variant: one threshold over all requests' coordinates.
std::vector<MaskSpec> build_pooled_masks(std::span<const Vector> us, double p);

// z′[j] = z[j] − α·u[j] on the selected coordinates, z[j] elsewhere.
Vector apply_unlearning(const Vector& z, const Vector& u, double alpha, const MaskSpec& mask);

struct ResidualBundle {
  std::string request_id;
  Vector delta_new;
  Vector delta_old;
  Vector direction;
  Vector common;
  Vector unlearn;
  bool degenerate = false;
};

// Direction, projection and difference under an ablation.
ResidualBundle make_bundle(std::string request_id, const Vector& delta_new, const Vector& delta_old,
                           edit::Ablation ablation);

struct ComeResult {
  Vector z_prime;
  ResidualBundle bundle;
  MaskSpec mask;
  // Loss trace of the outdated-object fit; empty when the ablation skips it.
  std::vector<double> old_loss_trace;
};

// Fits δ′ toward the request's old object with the same optimizer settings as δ,
// then runs direction → projection → subtraction → top-p restriction.
ComeResult come_transform(const model::ModelState& state, const EditRequest& request,
                          const Vector& delta_new, const Vector& z, const edit::EditConfig& config);

}  // namespace come::unlearn

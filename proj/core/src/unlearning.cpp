#include "come/unlearning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "come/error.hpp"

namespace come::unlearn {

namespace {

void require_dims(const Vector& a, const Vector& b, const char* what) {
  if (a.dim() != b.dim())
    throw Error(ErrorCode::kDimensionMismatch, std::string(what) + ": dimension mismatch");
}

}  // namespace

Direction common_direction(const Vector& delta_new, const Vector& delta_old) {
  require_dims(delta_new, delta_old, "common_direction");
  const double n_new = numerics::norm(delta_new);
  const double n_old = numerics::norm(delta_old);
  Direction out{Vector(delta_new.dim()), false};
  if (n_new >= kZeroNormTolerance)
    for (std::size_t i = 0; i < delta_new.dim(); ++i) out.direction[i] += delta_new[i] / n_new;
  if (n_old >= kZeroNormTolerance)
    for (std::size_t i = 0; i < delta_old.dim(); ++i) out.direction[i] += delta_old[i] / n_old;
  out.degenerate = n_new < kZeroNormTolerance || n_old < kZeroNormTolerance ||
                   numerics::norm(out.direction) < kAntiParallelTolerance;
  return out;
}

Vector project_common(const Vector& delta_old, const Vector& direction, bool degenerate) {
  require_dims(delta_old, direction, "project_common");
  if (degenerate) return Vector(delta_old.dim());
  const double n = numerics::norm(direction);
  if (n < kAntiParallelTolerance) return Vector(delta_old.dim());
  const Vector unit = (1.0 / n) * direction;
  // Second Gram-Schmidt pass recovers the coefficient lost to cancellation.
  const double c1 = numerics::dot(delta_old, unit);
  const Vector rest = delta_old - c1 * unit;
  const double c2 = numerics::dot(rest, unit);
  return (c1 + c2) * unit;
}

Vector unlearn_vector(const Vector& delta_old, const Vector& common) {
  require_dims(delta_old, common, "unlearn_vector");
  return delta_old - common;
}

std::size_t mask_cardinality(double p, std::size_t count) {
  if (!(p >= 0.0 && p <= 100.0))
    throw Error(ErrorCode::kInvalidConfig, "mask: p must lie in [0,100]");
  if (p == std::floor(p)) {
    const auto pi = static_cast<std::size_t>(p);
    return (pi * count + 99) / 100;
  }
  return std::min(count, static_cast<std::size_t>(std::ceil(p * static_cast<double>(count) / 100.0)));
}

namespace {

struct Entry {
  double magnitude;
  std::size_t index;
};

// Sorts descending by magnitude, ascending index on ties.
void rank(std::vector<Entry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    return a.index < b.index;
  });
}

bool is_zero(const Vector& u) {
  return std::all_of(u.values().begin(), u.values().end(), [](double x) { return x == 0.0; });
}

}  // namespace

MaskSpec build_mask(const Vector& u, double p) {
  MaskSpec mask;
  mask.p = p;
  const std::size_t k = mask_cardinality(p, u.dim());
  if (k == 0 || is_zero(u)) return mask;
  std::vector<Entry> entries(u.dim());
  for (std::size_t i = 0; i < u.dim(); ++i) entries[i] = {std::abs(u[i]), i};
  rank(entries);
  mask.selected.reserve(k);
  for (std::size_t i = 0; i < k; ++i) mask.selected.push_back(entries[i].index);
  mask.threshold = entries[k - 1].magnitude;
  std::sort(mask.selected.begin(), mask.selected.end());
  return mask;
}

std::vector<MaskSpec> build_pooled_masks(std::span<const Vector> us, double p) {
  std::vector<MaskSpec> masks(us.size());
  std::size_t total = 0;
  for (std::size_t r = 0; r < us.size(); ++r) {
    masks[r].p = p;
    total += us[r].dim();
  }
  const std::size_t k = mask_cardinality(p, total);
  bool all_zero = true;
  for (const auto& u : us) all_zero = all_zero && is_zero(u);
  if (k == 0 || all_zero) return masks;
  std::vector<Entry> entries;
  entries.reserve(total);
  std::vector<std::size_t> owner;
  owner.reserve(total);
  std::vector<std::size_t> offset(us.size());
  std::size_t flat = 0;
  for (std::size_t r = 0; r < us.size(); ++r) {
    offset[r] = flat;
    for (std::size_t i = 0; i < us[r].dim(); ++i, ++flat) {
      entries.push_back({std::abs(us[r][i]), flat});
      owner.push_back(r);
    }
  }
  rank(entries);
  const double threshold = entries[k - 1].magnitude;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t r = owner[entries[i].index];
    masks[r].selected.push_back(entries[i].index - offset[r]);
  }
  for (auto& m : masks) {
    std::sort(m.selected.begin(), m.selected.end());
    m.threshold = m.selected.empty() ? 0.0 : threshold;
  }
  return masks;
}

Vector apply_unlearning(const Vector& z, const Vector& u, double alpha, const MaskSpec& mask) {
  require_dims(z, u, "apply_unlearning");
  Vector out = z;
  if (alpha == 0.0) return out;
  for (std::size_t j : mask.selected) {
    if (j >= z.dim()) throw Error(ErrorCode::kOutOfRange, "apply_unlearning: mask index out of range");
    out[j] = z[j] - alpha * u[j];
  }
  return out;
}

ResidualBundle make_bundle(std::string request_id, const Vector& delta_new, const Vector& delta_old,
                           edit::Ablation ablation) {
  ResidualBundle b;
  b.request_id = std::move(request_id);
  b.delta_new = delta_new;
  b.delta_old = ablation == edit::Ablation::kNoDeltaOld ? Vector(delta_new.dim()) : delta_old;
  auto dir = common_direction(b.delta_new, b.delta_old);
  b.direction = std::move(dir.direction);
  b.degenerate = dir.degenerate;
  b.common = ablation == edit::Ablation::kNoDeltaCommon
                 ? Vector(delta_new.dim())
                 : project_common(b.delta_old, b.direction, b.degenerate);
  b.unlearn = unlearn_vector(b.delta_old, b.common);
  return b;
}

ComeResult come_transform(const model::ModelState& state, const EditRequest& request,
                          const Vector& delta_new, const Vector& z, const edit::EditConfig& config) {
  ComeResult out;
  Vector delta_old(delta_new.dim());
  if (config.ablation != edit::Ablation::kNoDeltaOld) {
    auto fit = edit::fit_residual(state, request, request.triple.old_object, config.final_layer(),
                                  config.opt);
    delta_old = std::move(fit.delta);
    out.old_loss_trace = std::move(fit.loss_trace);
  }
  out.bundle = make_bundle(request.triple.id, delta_new, delta_old, config.ablation);
  out.mask = build_mask(out.bundle.unlearn, config.effective_top_p());
  out.z_prime = apply_unlearning(z, out.bundle.unlearn, config.alpha, out.mask);
  return out;
}

}  // namespace come::unlearn

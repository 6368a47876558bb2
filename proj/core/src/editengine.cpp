#include "come/editengine.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "come/error.hpp"

namespace come::edit {

TargetVector make_target(std::string request_id, const Vector& h_l, const Vector& delta) {
  if (h_l.dim() != delta.dim())
    throw Error(ErrorCode::kDimensionMismatch, "make_target: dimension mismatch");
  Vector z = h_l + delta;
  return target_from_z(std::move(request_id), h_l, std::move(z));
}

TargetVector target_from_z(std::string request_id, const Vector& h_l, Vector z) {
  if (h_l.dim() != z.dim())
    throw Error(ErrorCode::kDimensionMismatch, "target_from_z: dimension mismatch");
  TargetVector t;
  t.request_id = std::move(request_id);
  t.residual = z - h_l;
  t.z = std::move(z);
  t.h_l = h_l;
  return t;
}

TargetAssembly assemble_targets_detailed(const model::ModelState& state,
                                         std::span<const EditRequest> requests,
                                         const EditConfig& config) {
  const std::size_t l = config.final_layer();
  TargetAssembly out;
  std::vector<Vector> hidden, deltas;
  for (const auto& request : requests) {
    auto fit = fit_residual(state, request, request.triple.new_object, l, config.opt);
    RequestDiagnostics d;
    d.request_id = request.triple.id;
    d.hidden_norm = numerics::norm(fit.hidden);
    d.delta_norm = numerics::norm(fit.delta);
    d.initial_loss = fit.initial_loss();
    d.final_loss = fit.final_loss();
    if (d.delta_norm > config.opt.clamp_factor * d.hidden_norm)
      throw Error(ErrorCode::kOutOfRange, "request '" + request.triple.id + "': residual norm " +
                                              std::to_string(d.delta_norm) + " exceeds clamp");
    out.diagnostics.push_back(std::move(d));
    hidden.push_back(std::move(fit.hidden));
    deltas.push_back(std::move(fit.delta));
  }

  if (config.mode != EditMode::kCome) {
    for (std::size_t i = 0; i < requests.size(); ++i)
      out.targets.push_back(make_target(requests[i].triple.id, hidden[i], deltas[i]));
    return out;
  }

  std::vector<Vector> us;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& request = requests[i];
    Vector delta_old(deltas[i].dim());
    if (config.ablation != Ablation::kNoDeltaOld) {
      auto fit = fit_residual(state, request, request.triple.old_object, l, config.opt);
      out.diagnostics[i].old_initial_loss = fit.initial_loss();
      out.diagnostics[i].old_final_loss = fit.final_loss();
      delta_old = std::move(fit.delta);
    }
    out.bundles.push_back(
        unlearn::make_bundle(request.triple.id, deltas[i], delta_old, config.ablation));
    us.push_back(out.bundles.back().unlearn);
  }
  const double p = config.effective_top_p();
  if (config.pooled_mask) {
    out.masks = unlearn::build_pooled_masks(us, p);
  } else {
    for (const auto& u : us) out.masks.push_back(unlearn::build_mask(u, p));
  }
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& b = out.bundles[i];
    auto& d = out.diagnostics[i];
    d.delta_old_norm = numerics::norm(b.delta_old);
    d.unlearn_norm = numerics::norm(b.unlearn);
    d.masked_count = out.masks[i].selected.size();
    d.degenerate = b.degenerate;
    const Vector z = hidden[i] + deltas[i];
    out.targets.push_back(target_from_z(requests[i].triple.id, hidden[i],
                                        unlearn::apply_unlearning(z, b.unlearn, config.alpha,
                                                                  out.masks[i])));
  }
  return out;
}

Matrix second_moment(std::span<const Vector> keys, double lambda) {
  if (keys.empty()) throw Error(ErrorCode::kEmptyInput, "second_moment: no keys");
  const std::size_t d = keys.front().dim();
  Matrix c(d, d);
  for (const auto& k : keys) {
    if (k.dim() != d) throw Error(ErrorCode::kDimensionMismatch, "second_moment: key dims differ");
    for (std::size_t i = 0; i < d; ++i) {
      const double ki = k[i];
      if (ki == 0.0) continue;
      auto row = c.row(i);
      for (std::size_t j = i; j < d; ++j) row[j] += ki * k[j];
    }
  }
  const double scale = lambda / static_cast<double>(keys.size());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      c(i, j) *= scale;
      c(j, i) = c(i, j);
    }
  return c;
}

Matrix estimate_covariance(const model::ModelState& state, std::size_t layer,
                           std::span<const model::TokenSequence> samples, std::size_t n,
                           double lambda, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidConfig, "estimate_covariance: n must be >= 1");
  if (layer >= state.config().layer_count)
    throw Error(ErrorCode::kOutOfRange, "estimate_covariance: layer out of range");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!samples[i].empty()) usable.push_back(i);
  if (usable.empty()) throw Error(ErrorCode::kEmptyInput, "estimate_covariance: empty sample corpus");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_seq(0, usable.size() - 1);
  std::map<std::size_t, std::vector<std::size_t>> positions;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t seq = usable[pick_seq(rng)];
    const std::size_t len = std::min(samples[seq].size(), state.config().max_seq);
    std::uniform_int_distribution<std::size_t> pick_pos(0, len - 1);
    positions[seq].push_back(pick_pos(rng));
  }

  std::vector<Vector> keys;
  keys.reserve(n);
  for (const auto& [seq, where] : positions) {
    const auto& tokens = samples[seq];
    const std::size_t len = std::min(tokens.size(), state.config().max_seq);
    std::vector<model::CaptureSite> sites;
    for (auto p : where) sites.push_back({layer, p});
    auto captured = model::capture_hidden(state, std::span(tokens.data(), len), sites);
    for (auto& c : captured) keys.push_back(std::move(c.mlp_key));
  }
  return second_moment(keys, lambda);
}

CovarianceMap compute_covariances(const model::ModelState& state, const EditConfig& config,
                                  std::span<const model::TokenSequence> samples) {
  CovarianceMap out;
  for (auto t : config.target_layers)
    out.emplace(t, estimate_covariance(state, t, samples, config.covariance_samples, config.lambda,
                                       config.covariance_seed + 0x9E3779B97F4A7C15ULL * (t + 1)));
  return out;
}

Matrix closed_form_delta(const Matrix& residuals, const Matrix& keys, const Matrix& covariance) {
  if (residuals.cols() != keys.cols())
    throw Error(ErrorCode::kDimensionMismatch, "closed_form_delta: R and K column counts differ");
  if (covariance.rows() != keys.rows() || covariance.cols() != keys.rows())
    throw Error(ErrorCode::kDimensionMismatch, "closed_form_delta: covariance shape mismatch");
  const Matrix kt = keys.transpose();
  const Matrix a = covariance + numerics::matmul(keys, kt);
  // (C + KKᵀ) is symmetric, so Δᵀ = (C + KKᵀ)⁻¹ K Rᵀ.
  const Matrix b = numerics::matmul(keys, residuals.transpose());
  return numerics::solve_spd(a, b).transpose();
}

namespace {

Vector divide(const Vector& v, double d) {
  Vector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = v[i] / d;
  return out;
}

Matrix collect_keys(const model::ModelState& state, std::span<const EditRequest> requests,
                    std::size_t layer) {
  std::vector<Vector> keys;
  keys.reserve(requests.size());
  for (const auto& r : requests) keys.push_back(collect_key(state, r, layer));
  return Matrix::from_columns(keys);
}

}  // namespace

SpreadResult spread_updates(const model::ModelState& state, std::span<const EditRequest> requests,
                            std::span<const TargetVector> targets, const EditConfig& config,
                            const CovarianceMap& covariances) {
  if (targets.empty()) throw Error(ErrorCode::kEmptyInput, "spread_updates: no targets");
  if (targets.size() != requests.size())
    throw Error(ErrorCode::kDimensionMismatch, "spread_updates: one target per request required");
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i].request_id != requests[i].triple.id)
      throw Error(ErrorCode::kInvalidData, "spread_updates: target order does not match requests");

  const std::size_t l = config.final_layer();
  SpreadResult out{state, {}};
  std::vector<Vector> remaining;
  for (const auto& t : targets) remaining.push_back(t.residual);

  for (auto t : config.target_layers) {
    const auto cov = covariances.find(t);
    if (cov == covariances.end())
      throw Error(ErrorCode::kInvalidConfig, "spread_updates: no covariance for layer " +
                                                 std::to_string(t));
    const double denom = static_cast<double>(l - t + 1);
    LayerUpdate u;
    u.layer = t;
    std::vector<Vector> r_cols;
    if (config.recompute_between_layers) {
      u.keys = collect_keys(out.state, requests, t);
      for (std::size_t i = 0; i < requests.size(); ++i) {
        const Vector h = subject_hidden(out.state, requests[i], l);
        r_cols.push_back(divide(targets[i].z - h, denom));
      }
    } else {
      u.keys = collect_keys(state, requests, t);
      for (auto& rem : remaining) {
        r_cols.push_back(divide(rem, denom));
        rem = rem - r_cols.back();
      }
    }
    u.residuals = Matrix::from_columns(r_cols);
    const Matrix w = model::get_mlp_out_weight(out.state, t);
    u.values = numerics::matmul(w, u.keys) + u.residuals;
    u.covariance = cov->second;
    try {
      u.delta = closed_form_delta(u.residuals, u.keys, u.covariance);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
      throw Error(ErrorCode::kNotPositiveDefinite,
                  "layer " + std::to_string(t) + ": " + e.what() +
                      "; C + KK^T is singular, use lambda > 0");
    }
    out.state = model::set_mlp_out_weight(out.state, t, w + u.delta);
    out.updates.push_back(std::move(u));
  }
  return out;
}

BatchResult edit_batch(const model::ModelState& state, std::span<const EditRequest> requests,
                       const EditConfig& config, const CovarianceMap& covariances) {
  if (requests.empty()) throw Error(ErrorCode::kEmptyInput, "edit_batch: no requests");
  config.validate(state.config());
  std::set<std::string> ids;
  for (const auto& r : requests) {
    r.validate();
    if (!ids.insert(r.triple.id).second)
      throw Error(ErrorCode::kInvalidData, "edit_batch: duplicate request id '" + r.triple.id + "'");
  }
  auto assembly = assemble_targets_detailed(state, requests, config);
  auto spread = spread_updates(state, requests, assembly.targets, config, covariances);

  BatchResult out{std::move(spread.state), std::move(assembly.diagnostics), {},
                  std::move(assembly.bundles), std::move(assembly.masks)};
  for (const auto& u : spread.updates)
    out.layers.push_back({u.layer, numerics::frobenius_norm(u.delta),
                          numerics::frobenius_norm(u.residuals)});
  return out;
}

}  // namespace come::edit

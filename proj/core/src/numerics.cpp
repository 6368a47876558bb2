#include "come/numerics.hpp"

#include <cmath>
#include <sstream>

#include "come/error.hpp"

namespace come {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kNotPositiveDefinite: return "not_positive_definite";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kSubjectNotFound: return "subject_not_found";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kInvalidData: return "invalid_data";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace come

namespace come::numerics {

namespace {

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    std::ostringstream msg;
    msg << what << ": dimension mismatch (" << a << " vs " << b << ")";
    throw Error(ErrorCode::kDimensionMismatch, msg.str());
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << what << ": shape mismatch (" << a.rows() << "x" << a.cols() << " vs " << b.rows()
        << "x" << b.cols() << ")";
    throw Error(ErrorCode::kDimensionMismatch, msg.str());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_same_dim(data_.size(), rows * cols, "Matrix");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require_same_dim(r.size(), cols_, "Matrix row");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_columns(std::span<const Vector> columns) {
  if (columns.empty()) return {};
  const std::size_t rows = columns.front().dim();
  Matrix m(rows, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    require_same_dim(columns[c].dim(), rows, "Matrix::from_columns");
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = columns[c][r];
  }
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double dot(const Vector& a, const Vector& b) {
  require_same_dim(a.dim(), b.dim(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vector& v) { return std::sqrt(dot(v, v)); }

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.values()) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> values) {
  for (double x : values)
    if (!std::isfinite(x)) return false;
  return true;
}

Vector operator+(const Vector& a, const Vector& b) {
  require_same_dim(a.dim(), b.dim(), "vector add");
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector operator-(const Vector& a, const Vector& b) {
  require_same_dim(a.dim(), b.dim(), "vector sub");
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vector operator*(double s, const Vector& v) {
  Vector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = s * v[i];
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "matrix add");
  Matrix out(a.rows(), a.cols());
  auto o = out.values();
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "matrix sub");
  Matrix out(a.rows(), a.cols());
  auto o = out.values();
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  auto o = out.values();
  auto x = m.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream msg;
    msg << "matmul: inner dimensions differ (" << a.rows() << "x" << a.cols() << " times "
        << b.rows() << "x" << b.cols() << ")";
    throw Error(ErrorCode::kDimensionMismatch, msg.str());
  }
  Matrix c(a.rows(), b.cols());
  kernels::gemm_nn(a.values(), b.values(), c.values(), a.rows(), a.cols(), b.cols());
  if (!all_finite(c.values())) throw Error(ErrorCode::kNonFinite, "matmul: non-finite product");
  return c;
}

Matrix solve_spd(const Matrix& m, const Matrix& b) {
  const std::size_t n = m.rows();
  if (m.cols() != n) throw Error(ErrorCode::kDimensionMismatch, "solve_spd: matrix is not square");
  if (b.rows() != n) throw Error(ErrorCode::kDimensionMismatch, "solve_spd: rhs row count differs");
  if (!all_finite(m.values()) || !all_finite(b.values()))
    throw Error(ErrorCode::kNonFinite, "solve_spd: non-finite input");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double scale = std::max({1.0, std::abs(m(i, j)), std::abs(m(j, i))});
      if (std::abs(m(i, j) - m(j, i)) > 1e-9 * scale) {
        std::ostringstream msg;
        msg << "solve_spd: matrix not symmetric at (" << i << "," << j << ")";
        throw Error(ErrorCode::kNotPositiveDefinite, msg.str());
      }
    }
  }

  // Lower-triangular factor, m = L Lᵀ.
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = m(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) {
      std::ostringstream msg;
      msg << "solve_spd: Cholesky failed at pivot " << j << " (value " << diag
          << "); matrix is not positive definite";
      throw Error(ErrorCode::kNotPositiveDefinite, msg.str());
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }

  Matrix x = b;
  const std::size_t rhs = b.cols();
  // Forward substitution: L y = b.
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      auto xk = x.row(k);
      for (std::size_t c = 0; c < rhs; ++c) xi[c] -= lik * xk[c];
    }
    const double lii = l(i, i);
    for (std::size_t c = 0; c < rhs; ++c) xi[c] /= lii;
  }
  // Back substitution: Lᵀ x = y.
  for (std::size_t ii = n; ii-- > 0;) {
    auto xi = x.row(ii);
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);
      auto xk = x.row(k);
      for (std::size_t c = 0; c < rhs; ++c) xi[c] -= lki * xk[c];
    }
    const double lii = l(ii, ii);
    for (std::size_t c = 0; c < rhs; ++c) xi[c] /= lii;
  }
  if (!all_finite(x.values())) throw Error(ErrorCode::kNonFinite, "solve_spd: non-finite solution");
  return x;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::kInvalidConfig, "optimizer: learning_rate must be > 0");
  if (!(clamp_factor > 0.0) || !std::isfinite(clamp_factor))
    throw Error(ErrorCode::kInvalidConfig, "optimizer: clamp_factor must be > 0");
}

DescentResult descend_traced(const LossWithGradient& objective, Vector init,
                             const OptimizerConfig& cfg, const Projection& project) {
  cfg.validate();
  DescentResult result{std::move(init), {}};
  result.loss_trace.reserve(cfg.step_count + 1);
  Vector& x = result.argument;
  Vector grad(x.dim());

  auto evaluate = [&](std::size_t step) {
    grad = Vector(x.dim());
    const double loss = objective(x, grad);
    if (!std::isfinite(loss) || grad.dim() != x.dim() || !all_finite(grad.values())) {
      std::ostringstream msg;
      msg << "descend: non-finite loss or gradient at step " << step;
      throw Error(ErrorCode::kNonFinite, msg.str());
    }
    return loss;
  };

  result.loss_trace.push_back(evaluate(0));
  for (std::size_t step = 1; step <= cfg.step_count; ++step) {
    for (std::size_t i = 0; i < x.dim(); ++i) x[i] -= cfg.learning_rate * grad[i];
    if (project) project(x);
    result.loss_trace.push_back(evaluate(step));
  }
  return result;
}

Vector descend(const LossWithGradient& objective, Vector init, const OptimizerConfig& cfg,
               const Projection& project) {
  return descend_traced(objective, std::move(init), cfg, project).argument;
}

Vector finite_diff_grad(const LossOnly& objective, const Vector& point, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidConfig, "finite_diff_grad: eps must be > 0");
  Vector grad(point.dim());
  Vector probe = point;
  for (std::size_t i = 0; i < point.dim(); ++i) {
    probe[i] = point[i] + eps;
    const double up = objective(probe);
    probe[i] = point[i] - eps;
    const double down = objective(probe);
    probe[i] = point[i];
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

namespace kernels {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const auto ai = a.subspan(i * k, k);
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += dot(ai, b.subspan(j * k, k));
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.data() + p * m;
    const double* bp = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace kernels

}  // namespace come::numerics

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace come::numerics {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<double> values) : data_(values) {}

  std::size_t dim() const noexcept { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix from_columns(std::span<const Vector> columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  Vector column(std::size_t c) const;
  Matrix transpose() const;

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(const Vector& a, const Vector& b);
double norm(const Vector& v);
double frobenius_norm(const Matrix& m);
bool all_finite(std::span<const double> values);

Vector operator+(const Vector& a, const Vector& b);
Vector operator-(const Vector& a, const Vector& b);
Vector operator*(double s, const Vector& v);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);

// Standard product. The reduction over the inner dimension always runs in
// ascending index order, so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

// Solves m·X = b for symmetric positive definite m via Cholesky.
// Throws kNotPositiveDefinite naming the failing pivot.
Matrix solve_spd(const Matrix& m, const Matrix& b);

struct OptimizerConfig {
  std::size_t step_count = 25;
  double learning_rate = 0.5;
  // Upper bound on ‖result‖ / ‖reference‖ enforced by the projection hook.
  double clamp_factor = 4.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Returns the loss and writes the gradient into `gradient` (resized by callee
// or preallocated to the argument's dim).
using LossWithGradient = std::function<double(const Vector& x, Vector& gradient)>;
using LossOnly = std::function<double(const Vector& x)>;
// Applied after every step, e.g. a norm-ball projection.
using Projection = std::function<void(Vector& x)>;

struct DescentResult {
  Vector argument;
  // loss_trace[k] is the loss at the k-th iterate; size = step_count + 1.
  std::vector<double> loss_trace;
};

// Plain fixed-step gradient descent. Throws kNonFinite with the step index if
// the objective returns a non-finite loss or gradient.
DescentResult descend_traced(const LossWithGradient& objective, Vector init,
                             const OptimizerConfig& cfg, const Projection& project = {});
Vector descend(const LossWithGradient& objective, Vector init, const OptimizerConfig& cfg,
               const Projection& project = {});

// Central differences, one coordinate at a time.
Vector finite_diff_grad(const LossOnly& objective, const Vector& point, double eps);

// Raw row-major kernels used by the model hot paths. All accumulate into `c`.
namespace kernels {
// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// c[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// c[m×n] += a[k×m]ᵀ · b[k×n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
double dot(std::span<const double> a, std::span<const double> b);
}  // namespace kernels

}  // namespace come::numerics

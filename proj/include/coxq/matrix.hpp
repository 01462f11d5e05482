#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace coxq {

/// Small dense row-major square matrix; d is the number of coupled queues.
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t k) { return data_[i * n_ + k]; }
  double operator()(std::size_t i, std::size_t k) const { return data_[i * n_ + k]; }
  const std::vector<double>& data() const { return data_; }

  bool is_symmetric(double tol = 1e-12) const {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = i + 1; k < n_; ++k)
        if (std::abs((*this)(i, k) - (*this)(k, i)) > tol) return false;
    return true;
  }

  /// Positive semidefiniteness via Cholesky; pivots down to -tol are treated
  /// as zero (the matrix may be singular, e.g. at t = 0).
  bool is_psd(double tol = 1e-10) const {
    std::vector<double> l(n_ * n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      double diag = (*this)(j, j);
      for (std::size_t m = 0; m < j; ++m) diag -= l[j * n_ + m] * l[j * n_ + m];
      if (diag < -tol) return false;
      const double root = diag > tol ? std::sqrt(diag) : 0.0;
      l[j * n_ + j] = root;
      for (std::size_t i = j + 1; i < n_; ++i) {
        double v = (*this)(i, j);
        for (std::size_t m = 0; m < j; ++m) v -= l[i * n_ + m] * l[j * n_ + m];
        if (root > 0.0) {
          l[i * n_ + j] = v / root;
        } else if (std::abs(v) > tol) {
          return false;
        }
      }
    }
    return true;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

}  // namespace coxq

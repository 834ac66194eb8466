#pragma once

// Dimensionality estimates: the Johnson-Lindenstrauss worst-case target
// dimension for m points at distortion epsilon, and the PCA-based intrinsic
// dimension of a vector set.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "common.hpp"

namespace gkm {

struct JlQuery {
  std::uint64_t points = 1;
  double epsilon = 0.5;
};

// Smallest integer n with n > 8 ln(m) / eps^2.
inline std::uint64_t jl_min_dimension(const JlQuery& q) {
  if (q.points < 1) throw Error("invalid_argument", "JL bound needs m >= 1");
  if (!(q.epsilon > 0.0 && q.epsilon < 1.0)) throw Error("invalid_argument", "JL bound needs 0 < epsilon < 1");
  const long double bound =
      8.0L * std::log(static_cast<long double>(q.points)) / (static_cast<long double>(q.epsilon) * q.epsilon);
  return static_cast<std::uint64_t>(std::floor(bound)) + 1;
}

struct DimensionEstimate {
  std::size_t intrinsic_dim = 0;
  std::vector<double> explained_variance;  // [k-1] = variance fraction captured by the top k components
  double threshold = 0.0;
};

struct PcaOptions {
  // Above this size (in both sample count and width) the spectrum is found by
  // subspace iteration instead of a dense eigendecomposition.
  std::size_t dense_limit = 4096;
  // Eigenvalues below floor x largest count as zero.
  double relative_floor = 1e-12;
  std::uint64_t seed = 0x5eed;
};

namespace detail {

inline Eigen::MatrixXd centered_matrix(std::span<const Vector> vectors) {
  const auto rows = static_cast<Eigen::Index>(vectors.size());
  const auto cols = static_cast<Eigen::Index>(vectors.front().size());
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = vectors[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  x.rowwise() -= x.colwise().mean();
  return x;
}

// Descending eigenvalues of the symmetric positive semi-definite matrix.
inline std::vector<double> descending_eigenvalues(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw Error("numerical", "eigendecomposition did not converge");
  std::vector<double> values(solver.eigenvalues().data(), solver.eigenvalues().data() + solver.eigenvalues().size());
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

// Top-k spectrum of X^T X / (n-1) by randomized subspace iteration, never
// forming the covariance matrix.
inline std::vector<double> top_eigenvalues(const Eigen::MatrixXd& x, std::size_t k, std::uint64_t seed) {
  const Eigen::Index width = x.cols();
  const auto block = static_cast<Eigen::Index>(std::min<std::size_t>(k + 8, static_cast<std::size_t>(width)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd q(width, block);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr;
  for (int iter = 0; iter < 30; ++iter) {
    Eigen::MatrixXd y = x.transpose() * (x * q);
    qr.compute(y);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(width, block);
  }
  const double scale = 1.0 / static_cast<double>(x.rows() - 1);
  Eigen::MatrixXd projected = (x * q).transpose() * (x * q) * scale;
  auto values = descending_eigenvalues(projected);
  values.resize(std::min<std::size_t>(k, values.size()));
  return values;
}

inline std::vector<double> cumulative_fractions(std::vector<double> eigenvalues, double total, double floor) {
  std::vector<double> curve;
  double running = 0.0;
  for (double v : eigenvalues) {
    if (v < floor) break;
    running += v;
    curve.push_back(running / total);
  }
  return curve;
}

}  // namespace detail

// Centre the data, take the sample-covariance spectrum in descending order
// and report the smallest component count whose cumulative variance
// fraction reaches `threshold`.
inline DimensionEstimate intrinsic_dimension_pca(std::span<const Vector> vectors, double threshold,
                                                 const PcaOptions& options = {}) {
  if (vectors.size() < 2) throw Error("invalid_argument", "intrinsic dimension needs at least 2 vectors");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw Error("invalid_argument", "threshold must lie in (0, 1]");
  const std::size_t width = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != width) throw Error("dimension_mismatch", "vectors differ in length");
  }

  DimensionEstimate estimate;
  estimate.threshold = threshold;
  if (width == 0) return estimate;

  const Eigen::MatrixXd x = detail::centered_matrix(vectors);
  const double scale = 1.0 / static_cast<double>(vectors.size() - 1);
  const double total = x.squaredNorm() * scale;  // trace of the covariance
  if (!(total > 0.0)) return estimate;

  if (width <= options.dense_limit || vectors.size() <= options.dense_limit) {
    // X^T X and X X^T share their non-zero spectrum; decompose the smaller one.
    const Eigen::MatrixXd gram = width <= vectors.size() ? Eigen::MatrixXd(x.transpose() * x * scale)
                                                         : Eigen::MatrixXd(x * x.transpose() * scale);
    auto values = detail::descending_eigenvalues(gram);
    const double floor = options.relative_floor * std::max(values.front(), 0.0);
    estimate.explained_variance = detail::cumulative_fractions(std::move(values), total, floor);
    if (!estimate.explained_variance.empty()) {
      // The retained spectrum is the whole variance up to round-off.
      estimate.explained_variance.back() = 1.0;
    }
  } else {
    // Grow k until the captured fraction crosses the threshold; the curve is
    // truncated there.
    const std::size_t limit = std::min(width, vectors.size());
    for (std::size_t k = 16;; k = std::min(2 * k, limit)) {
      auto values = detail::top_eigenvalues(x, k, options.seed);
      const double floor = options.relative_floor * std::max(values.front(), 0.0);
      estimate.explained_variance = detail::cumulative_fractions(std::move(values), total, floor);
      if (estimate.explained_variance.empty() || estimate.explained_variance.back() >= threshold || k == limit) break;
    }
  }

  estimate.intrinsic_dim = estimate.explained_variance.size();
  for (std::size_t k = 0; k < estimate.explained_variance.size(); ++k) {
    if (estimate.explained_variance[k] >= threshold) {
      estimate.intrinsic_dim = k + 1;
      break;
    }
  }
  return estimate;
}

}  // namespace gkm

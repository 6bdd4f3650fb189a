#pragma once

// PCA whitening in input space and KPCA whitening in kernel feature space.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "krica/error.hpp"
#include "krica/kernel.hpp"

namespace krica {

enum class WhitenKind { none, pca, kpca };

inline std::string_view to_string(WhitenKind kind) {
  switch (kind) {
    case WhitenKind::none: return "none";
    case WhitenKind::pca: return "pca";
    case WhitenKind::kpca: return "kpca";
  }
  return "unknown";
}

inline std::optional<WhitenKind> whiten_kind_from_string(std::string_view name) {
  for (auto kind : {WhitenKind::none, WhitenKind::pca, WhitenKind::kpca}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

/// Fitted whitening map. Immutable after fit; `apply_whitener` is const.
///
/// pca:  z = (x - mean) * projection^T, projection is r x n.
/// kpca: z = centered_kernel_vector(x) * projection^T, projection holds the
///       r x m dual coefficients over `landmarks`.
struct WhitenTransform {
  WhitenKind kind = WhitenKind::none;
  Eigen::Index input_dim = 0;  // 0 with kind none means "accept any width"
  Eigen::VectorXd mean;
  Eigen::MatrixXd projection;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd landmarks;
  Eigen::VectorXd gram_row_means;
  double gram_grand_mean = 0.0;
  KernelSpec kernel = KernelSpec::linear();
  double regularizer = 0.0;
  Eigen::Index dropped = 0;  // directions discarded below the eigenvalue floor

  Eigen::Index retained() const { return kind == WhitenKind::none ? input_dim : projection.rows(); }
  Eigen::Index output_dim(Eigen::Index input_cols) const {
    return kind == WhitenKind::none ? input_cols : projection.rows();
  }

  static WhitenTransform identity(Eigen::Index input_dim = 0) {
    WhitenTransform t;
    t.input_dim = input_dim;
    return t;
  }
};

namespace detail {

struct SortedEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns match `values`
};

inline SortedEigen sorted_symmetric_eigen(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const Eigen::Index n = a.rows();
  SortedEigen out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  // Eigen returns ascending order.
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = solver.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  // Fix the sign of each eigenvector so the largest-magnitude entry is positive.
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    out.vectors.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, i) < 0.0) out.vectors.col(i) *= -1.0;
  }
  return out;
}

// Smallest eigenvalue still treated as a real direction.
inline double eigen_floor(double largest, double eps, Eigen::Index dim) {
  const double numeric = 64.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(dim);
  return std::max(eps, numeric) * std::max(largest, 0.0);
}

}  // namespace detail

/// PCA whitening retaining the leading directions that carry `retained_energy`
/// of the total variance. `eps` is the eigenvalue floor relative to the largest
/// eigenvalue; null directions are always dropped.
inline WhitenTransform fit_pca_whitener(const Eigen::MatrixXd& x, double retained_energy = 1.0,
                                        double eps = 1e-8, double regularizer = 0.0) {
  detail::require(x.rows() >= 2, "fit_pca_whitener: need at least two samples");
  detail::require(retained_energy > 0.0 && retained_energy <= 1.0,
                  "fit_pca_whitener: retained_energy must be in (0, 1]");
  detail::require(eps >= 0.0 && regularizer >= 0.0, "fit_pca_whitener: eps and regularizer must be >= 0");
  detail::require(x.allFinite(), "fit_pca_whitener: input is not finite");

  const auto m = static_cast<double>(x.rows());
  WhitenTransform t;
  t.kind = WhitenKind::pca;
  t.input_dim = x.cols();
  t.regularizer = regularizer;
  t.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - t.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / m;
  const auto eig = detail::sorted_symmetric_eigen(cov);

  const double floor = detail::eigen_floor(eig.values(0), eps, x.cols());
  const double total = eig.values.cwiseMax(0.0).sum();
  Eigen::Index keep = 0;
  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values(i) <= floor) break;
    if (cumulative >= retained_energy * total * (1.0 - 1e-12) && keep > 0) break;
    cumulative += eig.values(i);
    ++keep;
  }
  t.dropped = x.cols() - keep;
  t.eigenvalues = eig.values.head(keep);
  t.projection.resize(keep, x.cols());
  for (Eigen::Index i = 0; i < keep; ++i) {
    t.projection.row(i) = eig.vectors.col(i).transpose() / std::sqrt(eig.values(i) + regularizer);
  }
  return t;
}

/// KPCA whitening: centers the Gram matrix in feature space, keeps up to
/// `retained` leading kernel principal axes and scales each to unit variance
/// over the training set.
inline WhitenTransform fit_kpca_whitener(const Eigen::MatrixXd& x, const KernelSpec& kernel,
                                         Eigen::Index retained, double eps = 1e-8) {
  detail::require(x.rows() >= 1, "fit_kpca_whitener: empty input");
  detail::require(retained >= 1 && retained <= x.rows(),
                  "fit_kpca_whitener: retained must be in [1, m]");
  detail::require(eps >= 0.0, "fit_kpca_whitener: eps must be >= 0");
  kernel.validate();

  const Eigen::Index m = x.rows();
  WhitenTransform t;
  t.kind = WhitenKind::kpca;
  t.input_dim = x.cols();
  t.kernel = kernel;
  t.landmarks = x;

  const Eigen::MatrixXd k = gram(kernel, x, x);
  t.gram_row_means = k.rowwise().mean();
  t.gram_grand_mean = t.gram_row_means.mean();
  Eigen::MatrixXd centered = k;
  centered.colwise() -= t.gram_row_means;
  centered.rowwise() -= t.gram_row_means.transpose();
  centered.array() += t.gram_grand_mean;
  centered = 0.5 * (centered + centered.transpose()).eval();

  const auto eig = detail::sorted_symmetric_eigen(centered);
  const double largest = eig.values(0);
  Eigen::Index keep = 0;
  if (largest > 1e-300) {
    const double floor = detail::eigen_floor(largest, eps, m);
    while (keep < retained && eig.values(keep) > floor) ++keep;
  }
  t.dropped = retained - keep;
  t.eigenvalues = eig.values.head(keep);
  t.projection.resize(keep, m);
  const double scale = std::sqrt(static_cast<double>(m));
  for (Eigen::Index i = 0; i < keep; ++i) {
    t.projection.row(i) = eig.vectors.col(i).transpose() * (scale / eig.values(i));
  }
  return t;
}

/// Maps rows of `x` through the transform.
inline Eigen::MatrixXd apply_whitener(const WhitenTransform& t, const Eigen::MatrixXd& x) {
  if (t.input_dim != 0 && x.cols() != t.input_dim) {
    throw InvalidArgument("apply_whitener: expected " + std::to_string(t.input_dim) +
                          " columns, got " + std::to_string(x.cols()));
  }
  switch (t.kind) {
    case WhitenKind::none:
      return x;
    case WhitenKind::pca: {
      const Eigen::MatrixXd centered = x.rowwise() - t.mean.transpose();
      return centered * t.projection.transpose();
    }
    case WhitenKind::kpca: {
      Eigen::MatrixXd k = gram(t.kernel, x, t.landmarks);
      const Eigen::VectorXd own_means = k.rowwise().mean();
      k.colwise() -= own_means;
      k.rowwise() -= t.gram_row_means.transpose();
      k.array() += t.gram_grand_mean;
      return k * t.projection.transpose();
    }
  }
  throw Unsupported("unknown whitening kind");
}

}  // namespace krica

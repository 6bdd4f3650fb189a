#pragma once

// Kernel functions, their first-argument gradients, and Gram matrices.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "krica/error.hpp"

namespace krica {

enum class KernelKind {
  gaussian,
  polynomial,
  inverse_distance,
  inverse_square_distance,
  exp_histogram_intersection,
  linear,
};

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::polynomial: return "polynomial";
    case KernelKind::inverse_distance: return "inverse_distance";
    case KernelKind::inverse_square_distance: return "inverse_square_distance";
    case KernelKind::exp_histogram_intersection: return "exp_histogram_intersection";
    case KernelKind::linear: return "linear";
  }
  return "unknown";
}

inline std::optional<KernelKind> kernel_kind_from_string(std::string_view name) {
  for (auto kind : {KernelKind::gaussian, KernelKind::polynomial, KernelKind::inverse_distance,
                    KernelKind::inverse_square_distance, KernelKind::exp_histogram_intersection,
                    KernelKind::linear}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

/// Which kernel to use and its parameter. `gamma` is only read by the
/// gaussian kernel, `b` only by the four alternative kernels.
struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  double gamma = 0.1;
  double b = 3.0;

  static KernelSpec gaussian(double gamma = 0.1) { return {KernelKind::gaussian, gamma, 0.0}; }
  static KernelSpec linear() { return {KernelKind::linear, 0.0, 0.0}; }
  static KernelSpec polynomial(double b = 3.0) { return {KernelKind::polynomial, 0.0, b}; }
  static KernelSpec inverse_distance(double b = 1.0) { return {KernelKind::inverse_distance, 0.0, b}; }
  static KernelSpec inverse_square_distance(double b = 1.0) {
    return {KernelKind::inverse_square_distance, 0.0, b};
  }
  static KernelSpec exp_histogram_intersection(double b = 1.0) {
    return {KernelKind::exp_histogram_intersection, 0.0, b};
  }
  /// Kernel of `kind` with its default parameter.
  static KernelSpec with_defaults(KernelKind kind) {
    switch (kind) {
      case KernelKind::gaussian: return gaussian();
      case KernelKind::polynomial: return polynomial();
      case KernelKind::inverse_distance: return inverse_distance();
      case KernelKind::inverse_square_distance: return inverse_square_distance();
      case KernelKind::exp_histogram_intersection: return exp_histogram_intersection();
      case KernelKind::linear: return linear();
    }
    return gaussian();
  }

  void validate() const {
    if (kind == KernelKind::gaussian) {
      detail::require(std::isfinite(gamma) && gamma > 0.0, "gaussian kernel requires gamma > 0");
    } else if (kind != KernelKind::linear) {
      detail::require(std::isfinite(b), "kernel parameter b must be finite");
    }
  }

  /// Kernels whose gradient with respect to the first argument is available.
  bool differentiable() const {
    return kind == KernelKind::gaussian || kind == KernelKind::linear ||
           kind == KernelKind::polynomial;
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

namespace detail {

template <typename A, typename B>
void check_pair(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  if (x.size() != y.size()) {
    throw InvalidArgument("kernel arguments differ in dimension (" + std::to_string(x.size()) +
                          " vs " + std::to_string(y.size()) + ")");
  }
  if (!x.allFinite() || !y.allFinite()) throw InvalidArgument("kernel argument is not finite");
}

}  // namespace detail

/// Evaluates kappa(x, y).
template <typename A, typename B>
double kernel_eval(const KernelSpec& spec, const Eigen::MatrixBase<A>& x,
                   const Eigen::MatrixBase<B>& y) {
  detail::check_pair(x, y);
  switch (spec.kind) {
    case KernelKind::gaussian:
      return std::exp(-spec.gamma * (x - y).squaredNorm());
    case KernelKind::polynomial:
      return std::pow(1.0 + x.dot(y), spec.b);
    case KernelKind::inverse_distance:
      return 1.0 / (1.0 + spec.b * (x - y).norm());
    case KernelKind::inverse_square_distance:
      return 1.0 / (1.0 + spec.b * (x - y).squaredNorm());
    case KernelKind::exp_histogram_intersection: {
      double total = 0.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        total += std::min(std::exp(spec.b * x(i)), std::exp(spec.b * y(i)));
      }
      return total;
    }
    case KernelKind::linear:
      return x.dot(y);
  }
  throw Unsupported("unknown kernel kind");
}

/// Coefficients (cw, cx) with d kappa(w, x) / dw = cw * w + cx * x.
///
/// All differentiable kernels have a gradient of this shape, which lets the
/// objective assemble every row gradient with matrix products.
struct KernelGradCoeffs {
  double cw = 0.0;
  double cx = 0.0;
};

/// Gradient coefficients given the already evaluated kernel value.
inline KernelGradCoeffs kernel_grad_coeffs(const KernelSpec& spec, double kappa, double dot) {
  switch (spec.kind) {
    case KernelKind::gaussian:
      return {-2.0 * spec.gamma * kappa, 2.0 * spec.gamma * kappa};
    case KernelKind::linear:
      return {0.0, 1.0};
    case KernelKind::polynomial:
      return {0.0, spec.b * std::pow(1.0 + dot, spec.b - 1.0)};
    default:
      throw Unsupported("kernel '" + std::string(to_string(spec.kind)) +
                        "' has no gradient; it is evaluation-only");
  }
}

/// d kappa(w, x) / dw.
template <typename A, typename B>
Eigen::VectorXd kernel_grad_wrt_first(const KernelSpec& spec, const Eigen::MatrixBase<A>& w,
                                      const Eigen::MatrixBase<B>& x) {
  detail::check_pair(w, x);
  if (!spec.differentiable()) {
    throw Unsupported("kernel '" + std::string(to_string(spec.kind)) +
                      "' has no gradient; it is evaluation-only");
  }
  const double kappa = kernel_eval(spec, w, x);
  const auto c = kernel_grad_coeffs(spec, kappa, w.dot(x));
  return c.cw * w + c.cx * x;
}

/// Gram matrix with entry (i, j) = kappa(A.row(i), B.row(j)).
inline Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& a,
                            const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) {
    throw InvalidArgument("gram: column counts differ (" + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.cols()) + ")");
  }
  if (!a.allFinite() || !b.allFinite()) throw InvalidArgument("gram: input is not finite");
  Eigen::MatrixXd out(a.rows(), b.rows());
  switch (spec.kind) {
    case KernelKind::linear:
      out.noalias() = a * b.transpose();
      return out;
    case KernelKind::polynomial:
      out.noalias() = a * b.transpose();
      out = (1.0 + out.array()).pow(spec.b).matrix();
      return out;
    case KernelKind::gaussian: {
      // Squared distances through the explicit difference keep kappa(x, x) == 1
      // exactly, which the expansion ||a||^2 + ||b||^2 - 2ab would not.
      const Eigen::MatrixXd at = a.transpose();
      const Eigen::MatrixXd bt = b.transpose();
      for (Eigen::Index j = 0; j < bt.cols(); ++j) {
        for (Eigen::Index i = 0; i < at.cols(); ++i) {
          out(i, j) = std::exp(-spec.gamma * (at.col(i) - bt.col(j)).squaredNorm());
        }
      }
      return out;
    }
    default:
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
          out(i, j) = kernel_eval(spec, a.row(i).transpose(), b.row(j).transpose());
        }
      }
      return out;
  }
}

}  // namespace krica

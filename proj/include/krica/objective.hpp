#pragma once

// Cost functions and analytic gradients of the four learners: RICA, kRICA,
// d-RICA and d-kRICA. Linear modes run through the kernel code path with the
// linear kernel, so one implementation serves all of them.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "krica/error.hpp"
#include "krica/kernel.hpp"
#include "krica/numeric.hpp"
#include "krica/whitening.hpp"

namespace krica {

enum class Mode { rica, krica, d_rica, d_krica };

inline std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::rica: return "rica";
    case Mode::krica: return "krica";
    case Mode::d_rica: return "d-rica";
    case Mode::d_krica: return "d-krica";
  }
  return "unknown";
}

inline std::optional<Mode> mode_from_string(std::string_view name) {
  for (auto mode : {Mode::rica, Mode::krica, Mode::d_rica, Mode::d_krica}) {
    if (to_string(mode) == name) return mode;
  }
  return std::nullopt;
}

constexpr bool is_kernel_mode(Mode mode) { return mode == Mode::krica || mode == Mode::d_krica; }
constexpr bool is_discriminative(Mode mode) { return mode == Mode::d_rica || mode == Mode::d_krica; }

// ----------------------------------------------------------------------------
// Pooling

enum class PoolingTopology { identity, grid3x3 };

inline std::string_view to_string(PoolingTopology t) {
  return t == PoolingTopology::identity ? "identity" : "grid3x3";
}

inline std::optional<PoolingTopology> pooling_topology_from_string(std::string_view name) {
  if (name == "identity") return PoolingTopology::identity;
  if (name == "grid3x3") return PoolingTopology::grid3x3;
  return std::nullopt;
}

/// The K x K matrix H of the L2-pooling penalty sum_j sqrt(eps + H_j (s.^2)).
struct PoolingMatrix {
  Eigen::MatrixXd h;
  PoolingTopology topology = PoolingTopology::identity;
  double epsilon = 1e-6;

  Eigen::Index size() const { return h.rows(); }

  static PoolingMatrix identity(Eigen::Index k, double epsilon = 1e-6) {
    return {Eigen::MatrixXd::Identity(k, k), PoolingTopology::identity, epsilon};
  }

  /// 3x3 neighbourhoods on a toroidal sqrt(K) x sqrt(K) grid.
  static PoolingMatrix grid3x3(Eigen::Index k, double epsilon = 1e-6) {
    const auto side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(k))));
    detail::require(side * side == k, "grid3x3 pooling needs a perfect-square basis size");
    detail::require(side >= 3, "grid3x3 pooling needs a basis size of at least 9");
    PoolingMatrix p{Eigen::MatrixXd::Zero(k, k), PoolingTopology::grid3x3, epsilon};
    for (Eigen::Index r = 0; r < side; ++r) {
      for (Eigen::Index c = 0; c < side; ++c) {
        for (Eigen::Index dr = -1; dr <= 1; ++dr) {
          for (Eigen::Index dc = -1; dc <= 1; ++dc) {
            const Eigen::Index rr = (r + dr + side) % side;
            const Eigen::Index cc = (c + dc + side) % side;
            p.h(r * side + c, rr * side + cc) = 1.0;
          }
        }
      }
    }
    return p;
  }

  static PoolingMatrix make(PoolingTopology topology, Eigen::Index k, double epsilon = 1e-6) {
    return topology == PoolingTopology::identity ? identity(k, epsilon) : grid3x3(k, epsilon);
  }

  void validate() const {
    detail::require(h.rows() == h.cols(), "pooling matrix must be square");
    detail::require(epsilon >= 0.0, "pooling epsilon must be >= 0");
    detail::require((h.array() >= 0.0).all(), "pooling weights must be non-negative");
    for (Eigen::Index j = 0; j < h.rows(); ++j) {
      detail::require(h.row(j).maxCoeff() > 0.0, "every pooling row needs a positive weight");
    }
  }
};

/// Default topology: grid pooling for unsupervised modes with a perfect-square
/// K >= 9, identity otherwise so groups never straddle class blocks.
inline PoolingTopology default_pooling(Mode mode, Eigen::Index k) {
  if (is_discriminative(mode)) return PoolingTopology::identity;
  const auto side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(k))));
  return (side * side == k && side >= 3) ? PoolingTopology::grid3x3 : PoolingTopology::identity;
}

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// L2-pooling penalty g(s) and its gradient with respect to s.
inline ValueAndGradient pooling_penalty(const PoolingMatrix& pooling, const Eigen::VectorXd& s) {
  detail::require(s.size() == pooling.size(), "pooling_penalty: dimension mismatch");
  const Eigen::VectorXd pooled = pooling.h * s.cwiseAbs2();
  const Eigen::ArrayXd root = (pooled.array() + pooling.epsilon).sqrt();
  ValueAndGradient out;
  out.value = root.sum();
  out.gradient = s.cwiseProduct(pooling.h.transpose() * root.inverse().matrix());
  return out;
}

// ----------------------------------------------------------------------------
// Discrimination term

/// How D+ / D- act on a representation s.
///  rank_one: P+ = (D+ . s)^2, the reading whose Hessian has off-diagonal +-1 blocks.
///  mask:     P+ = ||D+ o s||^2, coefficient selection.
enum class SelectorReading { rank_one, mask };

inline std::string_view to_string(SelectorReading r) {
  return r == SelectorReading::rank_one ? "rank_one" : "mask";
}

/// Class-block layout of a structured basis: class y owns rows [y*k, (y+1)*k).
struct Selectors {
  Eigen::Index class_count = 0;
  Eigen::Index per_class_size = 0;
  SelectorReading reading = SelectorReading::rank_one;

  Eigen::Index basis_size() const { return class_count * per_class_size; }

  Eigen::VectorXd d_plus(int label) const {
    check_label(label);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(basis_size());
    d.segment(static_cast<Eigen::Index>(label) * per_class_size, per_class_size).setOnes();
    return d;
  }
  Eigen::VectorXd d_minus(int label) const {
    return Eigen::VectorXd::Ones(basis_size()) - d_plus(label);
  }

  void check_label(int label) const {
    if (label < 0 || label >= class_count) {
      throw InvalidArgument("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
  }

  void validate() const {
    detail::require(class_count >= 1 && per_class_size >= 1,
                    "selectors need at least one class and one basis vector per class");
  }

  /// Smallest eta for which d(s) is strictly convex.
  double convex_eta() const { return static_cast<double>(per_class_size) + 1.0; }
};

/// d(s) = P- - P+ + eta ||s||^2 and its gradient.
inline ValueAndGradient discrimination_term(const Selectors& sel, double eta, int label,
                                            const Eigen::VectorXd& s) {
  detail::require(s.size() == sel.basis_size(), "discrimination_term: dimension mismatch");
  sel.check_label(label);
  const Eigen::Index begin = static_cast<Eigen::Index>(label) * sel.per_class_size;
  const Eigen::Index k = sel.per_class_size;
  ValueAndGradient out;
  if (sel.reading == SelectorReading::rank_one) {
    const double plus = s.segment(begin, k).sum();
    const double minus = s.sum() - plus;
    out.value = minus * minus - plus * plus + eta * s.squaredNorm();
    out.gradient = Eigen::VectorXd::Constant(s.size(), 2.0 * minus) + 2.0 * eta * s;
    out.gradient.segment(begin, k).array() += -2.0 * minus - 2.0 * plus;
  } else {
    const double plus = s.segment(begin, k).squaredNorm();
    const double minus = s.squaredNorm() - plus;
    out.value = minus - plus + eta * s.squaredNorm();
    out.gradient = 2.0 * (1.0 + eta) * s;
    out.gradient.segment(begin, k) = 2.0 * (eta - 1.0) * s.segment(begin, k);
  }
  return out;
}

/// Hessian of d with respect to s (constant in s).
inline Eigen::MatrixXd hessian_of_d(const Selectors& sel, double eta, int label) {
  const Eigen::VectorXd dp = sel.d_plus(label);
  const Eigen::VectorXd dm = sel.d_minus(label);
  const Eigen::Index k = sel.basis_size();
  if (sel.reading == SelectorReading::mask) {
    return (2.0 * (eta * Eigen::VectorXd::Ones(k) + dm - dp)).asDiagonal();
  }
  return 2.0 * (eta * Eigen::MatrixXd::Identity(k, k) + dm * dm.transpose() - dp * dp.transpose());
}

// ----------------------------------------------------------------------------
// Model

/// A learned basis with everything needed to encode new data.
struct BasisModel {
  Eigen::MatrixXd w;  // K x n, rows are basis vectors
  Mode mode = Mode::krica;
  KernelSpec kernel = KernelSpec::gaussian();
  PoolingMatrix pooling;
  std::optional<Selectors> selectors;
  double lambda = 1e-2;
  double alpha = 1e-1;
  double eta = 0.0;
  WhitenTransform whitener;
  bool center_patches = true;  // subtract each patch's mean before whitening
  std::uint64_t seed = 0;

  Eigen::Index basis_size() const { return w.rows(); }
  Eigen::Index input_dim() const { return w.cols(); }

  void validate() const {
    kernel.validate();
    pooling.validate();
    detail::require(w.rows() >= 1 && w.cols() >= 1, "basis must be non-empty");
    detail::require(w.allFinite(), "basis contains non-finite entries");
    detail::require(pooling.size() == w.rows(), "pooling size must equal basis size");
    detail::require(lambda >= 0.0 && alpha >= 0.0, "lambda and alpha must be >= 0");
    if (!is_kernel_mode(mode)) {
      detail::require(kernel.kind == KernelKind::linear, "linear modes require the linear kernel");
    }
    if (is_discriminative(mode)) {
      detail::require(selectors.has_value(), "discriminative modes require selectors");
      selectors->validate();
      detail::require(selectors->basis_size() == w.rows(), "basis size must equal k * c");
    }
  }
};

/// Representations s_i of the rows of x: W x for linear modes, kappa(w_j, x) otherwise.
inline Eigen::MatrixXd encode_batch(const BasisModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.input_dim()) {
    throw InvalidArgument("encode: input has " + std::to_string(x.cols()) +
                          " columns, basis expects " + std::to_string(model.input_dim()));
  }
  return gram(model.kernel, x, model.w);
}

inline Eigen::VectorXd encode(const BasisModel& model, const Eigen::VectorXd& x) {
  return encode_batch(model, x.transpose()).row(0).transpose();
}

namespace detail {

inline void check_labels(const BasisModel& model, const Eigen::MatrixXd& x,
                         std::span<const int> labels) {
  if (!is_discriminative(model.mode)) return;
  if (labels.empty()) throw InvalidArgument("discriminative mode requires labels");
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) {
    throw InvalidArgument("label count does not match sample count");
  }
  for (int y : labels) model.selectors->check_label(y);
}

// kappa(x_i, x_i) for every row.
inline Eigen::VectorXd self_kernel(const KernelSpec& spec, const Eigen::MatrixXd& x) {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out(i) = kernel_eval(spec, x.row(i).transpose(), x.row(i).transpose());
  }
  return out;
}

// Per-sample reconstruction kappa(x,x) - 2||s||^2 + s^T G s.
inline Eigen::VectorXd reconstruction_terms(const Eigen::VectorXd& self, const Eigen::MatrixXd& s,
                                            const Eigen::MatrixXd& g) {
  const Eigen::MatrixXd sg = s * g;
  return self - 2.0 * s.rowwise().squaredNorm() + sg.cwiseProduct(s).rowwise().sum();
}

inline Eigen::VectorXd pooling_terms(const PoolingMatrix& pooling, const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd pooled = s.cwiseAbs2() * pooling.h.transpose();
  return (pooled.array() + pooling.epsilon).sqrt().rowwise().sum().matrix();
}

// d(sum_j sqrt(eps + H_j s^2)) / ds for each row of s.
inline Eigen::MatrixXd pooling_gradients(const PoolingMatrix& pooling, const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd pooled = s.cwiseAbs2() * pooling.h.transpose();
  const Eigen::MatrixXd inv_root = (pooled.array() + pooling.epsilon).sqrt().inverse().matrix();
  return s.cwiseProduct(inv_root * pooling.h);
}

}  // namespace detail

/// Average reconstruction error in feature space over the rows of x.
inline double reconstruction_cost(const BasisModel& model, const Eigen::MatrixXd& x) {
  detail::require(x.rows() >= 1, "reconstruction_cost: empty data");
  const Eigen::MatrixXd s = encode_batch(model, x);
  const Eigen::MatrixXd g = gram(model.kernel, model.w, model.w);
  const Eigen::VectorXd terms = detail::reconstruction_terms(detail::self_kernel(model.kernel, x), s, g);
  return compensated_sum(terms) / static_cast<double>(x.rows());
}

/// The three averaged parts of the objective; total already weights them.
struct ObjectiveTerms {
  double reconstruction = 0.0;
  double sparsity = 0.0;        // (1/m) sum g(s_i), unweighted
  double discrimination = 0.0;  // (1/m) sum d(s_i), unweighted
  double total = 0.0;
};

inline ObjectiveTerms objective_terms(const BasisModel& model, const Eigen::MatrixXd& x,
                                      std::span<const int> labels = {}) {
  detail::require(x.rows() >= 1, "objective: empty data");
  detail::check_labels(model, x, labels);
  const auto m = static_cast<double>(x.rows());
  const Eigen::MatrixXd s = encode_batch(model, x);
  const Eigen::MatrixXd g = gram(model.kernel, model.w, model.w);

  ObjectiveTerms out;
  out.reconstruction =
      compensated_sum(detail::reconstruction_terms(detail::self_kernel(model.kernel, x), s, g)) / m;
  out.sparsity = compensated_sum(detail::pooling_terms(model.pooling, s)) / m;
  if (is_discriminative(model.mode)) {
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      acc.add(discrimination_term(*model.selectors, model.eta, labels[static_cast<std::size_t>(i)],
                                  s.row(i).transpose())
                  .value);
    }
    out.discrimination = acc.value() / m;
  }
  out.total = out.reconstruction + model.lambda * out.sparsity;
  if (is_discriminative(model.mode)) out.total += model.alpha * out.discrimination;
  return out;
}

inline double full_objective(const BasisModel& model, const Eigen::MatrixXd& x,
                             std::span<const int> labels = {}) {
  return objective_terms(model, x, labels).total;
}

namespace detail {

// dF/ds_i for every sample (rows), excluding the dependence of G on W.
inline Eigen::MatrixXd representation_gradients(const BasisModel& model, const Eigen::MatrixXd& s,
                                                const Eigen::MatrixXd& g,
                                                std::span<const int> labels) {
  Eigen::MatrixXd t = -4.0 * s + 2.0 * s * g;
  if (model.lambda != 0.0) t += model.lambda * pooling_gradients(model.pooling, s);
  if (is_discriminative(model.mode) && model.alpha != 0.0) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      t.row(i) += model.alpha * discrimination_term(*model.selectors, model.eta,
                                                    labels[static_cast<std::size_t>(i)],
                                                    s.row(i).transpose())
                                    .gradient.transpose();
    }
  }
  return t;
}

// Gradient coefficients for kappa(a_i, b_j): d/da_i = cw(i,j) a_i + cx(i,j) b_j.
struct CoeffMatrices {
  Eigen::MatrixXd cw;
  Eigen::MatrixXd cx;
};

inline CoeffMatrices grad_coeffs(const KernelSpec& spec, const Eigen::MatrixXd& values,
                                 const Eigen::MatrixXd& dots) {
  CoeffMatrices out{Eigen::MatrixXd(values.rows(), values.cols()),
                    Eigen::MatrixXd(values.rows(), values.cols())};
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      const auto c = kernel_grad_coeffs(spec, values(i, j), dots(i, j));
      out.cw(i, j) = c.cw;
      out.cx(i, j) = c.cx;
    }
  }
  return out;
}

}  // namespace detail

/// Exact gradient of full_objective with respect to every row of W.
inline Eigen::MatrixXd full_gradient(const BasisModel& model, const Eigen::MatrixXd& x,
                                     std::span<const int> labels = {}) {
  detail::require(x.rows() >= 1, "gradient: empty data");
  if (!model.kernel.differentiable()) {
    throw Unsupported("kernel '" + std::string(to_string(model.kernel.kind)) +
                      "' is evaluation-only and cannot be trained");
  }
  detail::check_labels(model, x, labels);
  const auto m = static_cast<double>(x.rows());
  const Eigen::MatrixXd& w = model.w;

  const Eigen::MatrixXd s = encode_batch(model, x);   // m x K, s(i,p) = kappa(w_p, x_i)
  const Eigen::MatrixXd g = gram(model.kernel, w, w);  // K x K
  const Eigen::MatrixXd t = detail::representation_gradients(model, s, g, labels);
  const Eigen::MatrixXd mm = s.transpose() * s;        // sum_i s_i s_i^T

  // Samples: sum_i t(i,p) d kappa(w_p, x_i)/dw_p.
  const auto cs = detail::grad_coeffs(model.kernel, s, x * w.transpose());
  // Basis pairs: sum_v 2 M(p,v) d kappa(w_p, w_v)/dw_p; G is symmetric in W.
  const auto cg = detail::grad_coeffs(model.kernel, g, w * w.transpose());

  const Eigen::MatrixXd ts = t.cwiseProduct(cs.cx);
  const Eigen::MatrixXd mg = 2.0 * mm.cwiseProduct(cg.cx);
  const Eigen::VectorXd diag = t.cwiseProduct(cs.cw).colwise().sum().transpose() +
                               2.0 * mm.cwiseProduct(cg.cw).rowwise().sum();

  Eigen::MatrixXd grad = diag.asDiagonal() * w;
  grad.noalias() += ts.transpose() * x;
  grad.noalias() += mg * w;
  return grad / m;
}

}  // namespace krica

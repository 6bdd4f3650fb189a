#pragma once

// Basis optimization: k-means++ initialization, frozen-kernel fixed-point row
// sweeps, and backtracking gradient descent, wrapped in a monotone acceptance
// rule so the objective trace never increases.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "krica/error.hpp"
#include "krica/objective.hpp"
#include "krica/whitening.hpp"

namespace krica {

enum class LinearSolver { fixed_point, gradient_descent };

struct SolveConfig {
  int max_outer_iters = 100;
  double tol = 1e-5;  // max relative row change that counts as converged
  int kmeans_iters = 50;
  std::uint64_t seed = 0;
  double damping = 0.0;  // row <- damping * old + (1 - damping) * solved
  LinearSolver linear_solver = LinearSolver::gradient_descent;
  double step_size = 1e-1;
  int max_rejections = 5;
  int max_expansions = 3;  // step doublings tried after an accepted fixed-point row update
  int anderson_memory = 5;  // 0 disables sweep acceleration

  void validate() const {
    detail::require(max_outer_iters >= 1, "max_outer_iters must be >= 1");
    detail::require(tol > 0.0, "tol must be > 0");
    detail::require(kmeans_iters >= 0, "kmeans_iters must be >= 0");
    detail::require(damping >= 0.0 && damping < 1.0, "damping must be in [0, 1)");
    detail::require(step_size > 0.0, "step_size must be > 0");
  }
};

struct SolveReport {
  std::vector<double> objective_trace;  // initial value, then one per accepted iteration
  bool converged = false;
  int iterations_used = 0;
  int rejected_iterations = 0;
  int stalled_rows = 0;
  double final_grad_norm = 0.0;
  double max_row_change = 0.0;  // last sweep
};

namespace detail {

// Uniform double in [0, 1) from the raw engine output, identical on every
// standard library.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Eigen::Index uniform_index(std::mt19937_64& rng, Eigen::Index n) {
  return std::min<Eigen::Index>(static_cast<Eigen::Index>(unit_uniform(rng) * static_cast<double>(n)), n - 1);
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations. Deterministic for a seed.
inline Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& x, Eigen::Index k, const SolveConfig& cfg) {
  const Eigen::Index m = x.rows();
  if (k < 1 || k > m) {
    throw InvalidArgument("kmeans_init: need 1 <= K <= m (K=" + std::to_string(k) +
                          ", m=" + std::to_string(m) + ")");
  }
  std::mt19937_64 rng(cfg.seed);
  Eigen::MatrixXd centers(k, x.cols());
  Eigen::VectorXd nearest = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());

  Eigen::Index pick = detail::uniform_index(rng, m);
  for (Eigen::Index c = 0; c < k; ++c) {
    if (c > 0) {
      const double total = nearest.sum();
      if (total > 0.0) {
        const double target = detail::unit_uniform(rng) * total;
        double cumulative = 0.0;
        pick = -1;
        for (Eigen::Index i = 0; i < m; ++i) {
          cumulative += nearest(i);
          if (cumulative > target) {
            pick = i;
            break;
          }
        }
        if (pick < 0) nearest.maxCoeff(&pick);
      } else {
        pick = detail::uniform_index(rng, m);
      }
    }
    centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < m; ++i) {
      nearest(i) = std::min(nearest(i), (x.row(i) - centers.row(c)).squaredNorm());
    }
  }

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(m), -1);
  Eigen::VectorXd dist(m);
  for (int iter = 0; iter < cfg.kmeans_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < m; ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      dist(i) = best_d;
      auto& slot = assign[static_cast<std::size_t>(i)];
      if (slot != best) changed = true;
      slot = best;
    }
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i);
      counts(c) += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts(c) > 0.0) {
        centers.row(c) = sums.row(c) / counts(c);
      } else {
        // Empty cluster: restart it at the point worst served by its centroid.
        Eigen::Index far = 0;
        dist.maxCoeff(&far);
        centers.row(c) = x.row(far);
        dist(far) = 0.0;
      }
    }
  }
  return centers;
}

/// Linear stationarity equation a * w_p + b = 0 for one basis row, obtained by
/// freezing every kernel value and every representation-gradient factor at the
/// current iterate. For the gaussian kernel this is sum_j c_j (w_p - v_j) = 0
/// with v_j ranging over samples and the other basis rows, so a = sum_j c_j.
struct FrozenRowSystem {
  double a = 0.0;
  Eigen::VectorXd b;
  double abs_weight = 0.0;  // sum_j |c_j|

  Eigen::VectorXd solve() const { return -b / a; }
  double residual(const Eigen::VectorXd& w) const { return (a * w + b).norm(); }
};

namespace detail {

// Cached encodings S (m x K) and basis Gram G (K x K) for incremental sweeps.
struct SweepState {
  Eigen::MatrixXd s;
  Eigen::MatrixXd g;

  static SweepState build(const BasisModel& model, const Eigen::MatrixXd& x) {
    return {encode_batch(model, x), gram(model.kernel, model.w, model.w)};
  }

  // Same kernel arithmetic as a full rebuild, so cached and fresh values agree bitwise.
  void refresh_row(const BasisModel& model, const Eigen::MatrixXd& x, Eigen::Index p) {
    const Eigen::MatrixXd wp = model.w.row(p);
    s.col(p) = gram(model.kernel, x, wp);
    const Eigen::MatrixXd gp = gram(model.kernel, model.w, wp);
    g.col(p) = gp;
    g.row(p) = gram(model.kernel, wp, model.w);
  }
};

inline FrozenRowSystem frozen_row_system(const BasisModel& model, const Eigen::MatrixXd& x,
                                         std::span<const int> labels, const SweepState& st,
                                         Eigen::Index p) {
  const Eigen::Index m = x.rows();
  const Eigen::Index k = model.w.rows();
  const auto& s = st.s;
  const auto& g = st.g;

  // Column p of the per-sample representation gradient.
  Eigen::VectorXd t = -4.0 * s.col(p) + 2.0 * s * g.col(p);
  if (model.lambda != 0.0) {
    const Eigen::MatrixXd pooled = s.cwiseAbs2() * model.pooling.h.transpose();
    const Eigen::MatrixXd inv_root = (pooled.array() + model.pooling.epsilon).sqrt().inverse().matrix();
    t += model.lambda * s.col(p).cwiseProduct(inv_root * model.pooling.h.col(p));
  }
  if (is_discriminative(model.mode) && model.alpha != 0.0) {
    const auto& sel = *model.selectors;
    const Eigen::Index block = p / sel.per_class_size;
    for (Eigen::Index i = 0; i < m; ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      const Eigen::Index begin = static_cast<Eigen::Index>(y) * sel.per_class_size;
      const bool own = block == y;
      double dd = 0.0;
      if (sel.reading == SelectorReading::rank_one) {
        const double plus = s.row(i).segment(begin, sel.per_class_size).sum();
        const double minus = s.row(i).sum() - plus;
        dd = own ? -2.0 * plus : 2.0 * minus;
      } else {
        dd = own ? -2.0 * s(i, p) : 2.0 * s(i, p);
      }
      t(i) += model.alpha * (dd + 2.0 * model.eta * s(i, p));
    }
  }

  const Eigen::VectorXd mrow = s.transpose() * s.col(p);  // M(p, :)
  const Eigen::VectorXd dots_x = x * model.w.row(p).transpose();
  const Eigen::VectorXd dots_w = model.w * model.w.row(p).transpose();

  FrozenRowSystem sys;
  sys.b = Eigen::VectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto c = kernel_grad_coeffs(model.kernel, s(i, p), dots_x(i));
    sys.a += t(i) * c.cw;
    sys.abs_weight += std::abs(t(i) * c.cw);
    sys.b += (t(i) * c.cx) * x.row(i).transpose();
  }
  for (Eigen::Index v = 0; v < k; ++v) {
    const auto c = kernel_grad_coeffs(model.kernel, g(p, v), dots_w(v));
    const double weight = 2.0 * mrow(v);
    if (v == p) {
      sys.a += weight * (c.cw + c.cx);
    } else {
      sys.a += weight * c.cw;
      sys.abs_weight += std::abs(weight * c.cw);
      sys.b += (weight * c.cx) * model.w.row(v).transpose();
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  sys.a *= inv_m;
  sys.b *= inv_m;
  sys.abs_weight *= inv_m;
  return sys;
}

}  // namespace detail

/// Frozen-kernel system for row p at the model's current basis.
inline FrozenRowSystem frozen_row_system(const BasisModel& model, const Eigen::MatrixXd& x,
                                         std::span<const int> labels, Eigen::Index p) {
  detail::require(p >= 0 && p < model.basis_size(), "row index out of range");
  if (!model.kernel.differentiable()) throw Unsupported("fixed-point update needs a differentiable kernel");
  detail::check_labels(model, x, labels);
  return detail::frozen_row_system(model, x, labels, detail::SweepState::build(model, x), p);
}

struct RowUpdate {
  Eigen::VectorXd row;
  bool stalled = false;
};

/// One fixed-point update of row p; the rest of the basis is left untouched.
inline RowUpdate fixed_point_step(const BasisModel& model, const Eigen::MatrixXd& x,
                                  std::span<const int> labels, Eigen::Index p, double damping = 0.0) {
  detail::require(damping >= 0.0 && damping < 1.0, "damping must be in [0, 1)");
  const auto sys = frozen_row_system(model, x, labels, p);
  const Eigen::VectorXd old = model.w.row(p).transpose();
  if (std::abs(sys.a) < 1e-12) return {old, true};
  return {damping * old + (1.0 - damping) * sys.solve(), false};
}

/// Max relative error between full_gradient and five-point central
/// differences with step `step * (1 + |w_ij|)` (exact for quartics, so the
/// linear-kernel objective without sparsity is checked to rounding).
/// Samples 200 coordinates when K*n > 200.
inline double grad_check(const BasisModel& model, const Eigen::MatrixXd& x,
                         std::span<const int> labels, double step, std::uint64_t seed = 0) {
  if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("grad_check: step must be > 0");
  const Eigen::MatrixXd analytic = full_gradient(model, x, labels);
  const Eigen::Index total = model.w.size();
  std::vector<Eigen::Index> coords;
  if (total <= 200) {
    for (Eigen::Index i = 0; i < total; ++i) coords.push_back(i);
  } else {
    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> all(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) all[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = 0; i < 200; ++i) {
      const auto j = i + static_cast<std::size_t>(detail::uniform_index(rng, total - static_cast<Eigen::Index>(i)));
      std::swap(all[i], all[j]);
      coords.push_back(all[i]);
    }
  }
  BasisModel probe = model;
  double worst = 0.0;
  for (Eigen::Index idx : coords) {
    const Eigen::Index r = idx / model.w.cols();
    const Eigen::Index c = idx % model.w.cols();
    const double base = model.w(r, c);
    const double h = step * (1.0 + std::abs(base));
    auto at = [&](double offset) {
      probe.w(r, c) = base + offset;
      return full_objective(probe, x, labels);
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    probe.w(r, c) = base;
    const double exact = analytic(r, c);
    const double err = std::abs(exact - numeric) / std::max(1e-8, std::abs(exact) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

namespace detail {

inline double row_change(const Eigen::VectorXd& proposed, const Eigen::VectorXd& old) {
  return (proposed - old).norm() / (1.0 + old.norm());
}

// Objective from cached encodings; used to accept or damp single-row updates.
inline double cached_objective(const BasisModel& model, const Eigen::MatrixXd& x,
                               std::span<const int> labels, const Eigen::VectorXd& self,
                               const SweepState& st) {
  const auto m = static_cast<double>(x.rows());
  double total = compensated_sum(reconstruction_terms(self, st.s, st.g)) / m;
  if (model.lambda != 0.0) total += model.lambda * compensated_sum(pooling_terms(model.pooling, st.s)) / m;
  if (is_discriminative(model.mode) && model.alpha != 0.0) {
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      acc.add(discrimination_term(*model.selectors, model.eta, labels[static_cast<std::size_t>(i)],
                                  st.s.row(i).transpose())
                  .value);
    }
    total += model.alpha * acc.value() / m;
  }
  return total;
}

// Anderson (type II) acceleration for the map W -> sweep(W), on flattened W.
class AndersonAccelerator {
 public:
  explicit AndersonAccelerator(int memory) : memory_(memory) {}

  void push(const Eigen::MatrixXd& input, const Eigen::MatrixXd& output) {
    if (memory_ <= 0) return;
    const Eigen::VectorXd f = output.reshaped();
    const Eigen::VectorXd r = f - input.reshaped();
    if (has_last_) {
      df_.push_back(f - last_f_);
      dr_.push_back(r - last_r_);
      if (static_cast<int>(df_.size()) > memory_) {
        df_.erase(df_.begin());
        dr_.erase(dr_.begin());
      }
    }
    last_f_ = f;
    last_r_ = r;
    rows_ = output.rows();
    cols_ = output.cols();
    has_last_ = true;
  }

  std::optional<Eigen::MatrixXd> extrapolate() const {
    if (df_.empty()) return std::nullopt;
    const auto k = static_cast<Eigen::Index>(dr_.size());
    Eigen::MatrixXd dr(last_r_.size(), k);
    Eigen::MatrixXd df(last_f_.size(), k);
    for (Eigen::Index j = 0; j < k; ++j) {
      dr.col(j) = dr_[static_cast<std::size_t>(j)];
      df.col(j) = df_[static_cast<std::size_t>(j)];
    }
    const Eigen::VectorXd coeffs = dr.completeOrthogonalDecomposition().solve(last_r_);
    if (!coeffs.allFinite()) return std::nullopt;
    const Eigen::VectorXd next = last_f_ - df * coeffs;
    return next.reshaped(rows_, cols_).eval();
  }

  void clear() {
    df_.clear();
    dr_.clear();
    has_last_ = false;
  }

 private:
  int memory_;
  std::vector<Eigen::VectorXd> df_;
  std::vector<Eigen::VectorXd> dr_;
  Eigen::VectorXd last_f_;
  Eigen::VectorXd last_r_;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  bool has_last_ = false;
};

// Objective after replacing row p; leaves the row and cache in the new state.
inline double try_row(BasisModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                      const Eigen::VectorXd& self, SweepState& st, Eigen::Index p,
                      const Eigen::VectorXd& row) {
  model.w.row(p) = row.transpose();
  st.refresh_row(model, x, p);
  return cached_objective(model, x, labels, self, st);
}

inline void fixed_point_solve(BasisModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                              const SolveConfig& cfg, SolveReport& report) {
  double damping = cfg.damping;
  const Eigen::VectorXd self = self_kernel(model.kernel, x);
  SweepState st = SweepState::build(model, x);
  double current = cached_objective(model, x, labels, self, st);
  int consecutive_rejections = 0;
  AndersonAccelerator accel(cfg.anderson_memory);
  for (int attempt = 0; attempt < cfg.max_outer_iters; ++attempt) {
    const Eigen::MatrixXd saved_w = model.w;
    const SweepState saved_state = st;
    const double sweep_start = current;
    double max_change = 0.0;
    for (Eigen::Index p = 0; p < model.w.rows(); ++p) {
      const auto sys = frozen_row_system(model, x, labels, st, p);
      const Eigen::VectorXd old = model.w.row(p).transpose();
      const Eigen::VectorXd grad = sys.a * old + sys.b;
      if (grad.squaredNorm() == 0.0) continue;
      // The frozen solution is old - grad / a. A non-positive a points uphill;
      // fall back to the absolute weight scale as curvature.
      double curvature = sys.a;
      if (!(curvature > 1e-12)) {
        ++report.stalled_rows;
        curvature = std::max(sys.abs_weight, 1e-12);
      }
      curvature /= (1.0 - damping);
      // Backtrack (damp toward the old row) until the objective strictly drops,
      // then try longer steps along the same direction while it keeps dropping.
      const Eigen::VectorXd direction = -grad / curvature;
      double best_scale = 0.0;
      double best_value = current;
      double scale = 1.0;
      for (int tries = 0; tries < 40 && best_scale == 0.0; ++tries, scale *= 0.5) {
        const double value = try_row(model, x, labels, self, st, p, old + scale * direction);
        if (value < best_value) {
          best_value = value;
          best_scale = scale;
        }
      }
      if (best_scale == 1.0) {
        for (int grow = 0; grow < cfg.max_expansions; ++grow) {
          const double value = try_row(model, x, labels, self, st, p, old + 2.0 * best_scale * direction);
          if (!(value < best_value)) break;
          best_value = value;
          best_scale *= 2.0;
        }
      }
      const Eigen::VectorXd chosen = old + best_scale * direction;
      model.w.row(p) = chosen.transpose();
      st.refresh_row(model, x, p);
      if (best_scale > 0.0) {
        current = best_value;
        max_change = std::max(max_change, row_change(chosen, old));
      }
    }
    const double next = full_objective(model, x, labels);
    if (!(next <= sweep_start)) {
      model.w = saved_w;
      st = saved_state;
      current = sweep_start;
      ++report.rejected_iterations;
      if (++consecutive_rejections > cfg.max_rejections) return;
      damping = 0.5 * (1.0 + damping);
      continue;
    }
    consecutive_rejections = 0;
    current = next;
    report.max_row_change = max_change;
    if (max_change < cfg.tol) {
      report.objective_trace.push_back(current);
      ++report.iterations_used;
      report.converged = true;
      return;
    }
    // Anderson acceleration of the sweep map, kept only when it lowers the objective.
    const Eigen::MatrixXd swept = model.w;
    accel.push(saved_w, swept);
    if (auto candidate = accel.extrapolate()) {
      model.w = *candidate;
      const double pushed = model.w.allFinite() ? full_objective(model, x, labels)
                                                : std::numeric_limits<double>::infinity();
      if (pushed < current) {
        current = pushed;
      } else {
        model.w = swept;
        accel.clear();
      }
    }
    st = SweepState::build(model, x);
    report.objective_trace.push_back(current);
    ++report.iterations_used;
  }
}

inline void gradient_descent_solve(BasisModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                                   const SolveConfig& cfg, SolveReport& report) {
  double step = cfg.step_size;
  double current = report.objective_trace.back();
  for (int iter = 0; iter < cfg.max_outer_iters; ++iter) {
    const Eigen::MatrixXd grad = full_gradient(model, x, labels);
    const double gnorm2 = grad.squaredNorm();
    if (gnorm2 == 0.0) {
      report.converged = true;
      return;
    }
    const Eigen::MatrixXd start = model.w;
    bool accepted = false;
    for (int halving = 0; halving < 50; ++halving) {
      model.w = start - step * grad;
      const double next = full_objective(model, x, labels);
      if (next <= current - 1e-4 * step * gnorm2) {
        current = next;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      model.w = start;
      ++report.rejected_iterations;
      return;
    }
    double max_change = 0.0;
    for (Eigen::Index p = 0; p < model.w.rows(); ++p) {
      max_change = std::max(max_change, row_change(model.w.row(p).transpose(), start.row(p).transpose()));
    }
    report.objective_trace.push_back(current);
    ++report.iterations_used;
    report.max_row_change = max_change;
    if (max_change < cfg.tol) {
      report.converged = true;
      return;
    }
    step *= 2.0;
  }
}

}  // namespace detail

/// Runs the optimizer on already preprocessed (whitened) data, starting from
/// model.w. The objective trace is non-increasing by construction.
inline SolveReport optimize(BasisModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                            const SolveConfig& cfg) {
  cfg.validate();
  model.validate();
  detail::check_labels(model, x, labels);
  if (!model.kernel.differentiable()) {
    throw Unsupported("kernel '" + std::string(to_string(model.kernel.kind)) +
                      "' is evaluation-only and cannot be trained");
  }
  SolveReport report;
  const double initial = full_objective(model, x, labels);
  if (!std::isfinite(initial)) throw Error("objective is not finite at initialization");
  report.objective_trace.push_back(initial);

  const bool use_fixed_point = is_kernel_mode(model.mode) || cfg.linear_solver == LinearSolver::fixed_point;
  if (use_fixed_point) {
    detail::fixed_point_solve(model, x, labels, cfg, report);
  } else {
    detail::gradient_descent_solve(model, x, labels, cfg, report);
  }
  report.final_grad_norm = full_gradient(model, x, labels).norm();
  return report;
}

/// Everything that defines a learner besides the data.
struct Hyperparams {
  Mode mode = Mode::krica;
  KernelSpec kernel = KernelSpec::gaussian(0.1);
  Eigen::Index basis_size = 0;   // K
  Eigen::Index class_count = 1;  // c, discriminative modes only
  double lambda = 1e-2;
  double alpha = 1e-1;
  std::optional<double> eta;  // unset: k + 1
  std::optional<PoolingTopology> pooling;
  double epsilon = 1e-6;
  SelectorReading selector_reading = SelectorReading::rank_one;
  std::optional<WhitenKind> whitening;  // unset: kpca for kernel modes, pca otherwise
  double retained_energy = 1.0;
  Eigen::Index kpca_retained = 0;  // 0: input dimension
  Eigen::Index kpca_max_landmarks = 1000;
  double whiten_eps = 1e-8;
  bool center_patches = true;
};

struct TrainResult {
  BasisModel model;
  SolveReport report;
};

/// Subtracts each row's mean.
inline Eigen::MatrixXd center_rows(const Eigen::MatrixXd& x) {
  return x.colwise() - x.rowwise().mean();
}

/// Preprocessing that `train` applies before optimizing, reusable on new data.
inline Eigen::MatrixXd preprocess(const BasisModel& model, const Eigen::MatrixXd& x) {
  return apply_whitener(model.whitener, model.center_patches ? center_rows(x) : x);
}

inline WhitenTransform fit_whitener(const Hyperparams& hp, const Eigen::MatrixXd& x, std::uint64_t seed) {
  const WhitenKind kind = hp.whitening.value_or(is_kernel_mode(hp.mode) ? WhitenKind::kpca : WhitenKind::pca);
  switch (kind) {
    case WhitenKind::none:
      return WhitenTransform::identity(x.cols());
    case WhitenKind::pca:
      return fit_pca_whitener(x, hp.retained_energy, hp.whiten_eps);
    case WhitenKind::kpca: {
      Eigen::MatrixXd landmarks = x;
      if (hp.kpca_max_landmarks > 0 && x.rows() > hp.kpca_max_landmarks) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
        for (std::size_t i = 0; i < static_cast<std::size_t>(hp.kpca_max_landmarks); ++i) {
          const auto j = i + static_cast<std::size_t>(detail::uniform_index(
                                 rng, x.rows() - static_cast<Eigen::Index>(i)));
          std::swap(idx[i], idx[j]);
        }
        std::sort(idx.begin(), idx.begin() + hp.kpca_max_landmarks);
        landmarks.resize(hp.kpca_max_landmarks, x.cols());
        for (Eigen::Index i = 0; i < hp.kpca_max_landmarks; ++i) {
          landmarks.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
        }
      }
      const Eigen::Index retained =
          std::min(hp.kpca_retained > 0 ? hp.kpca_retained : x.cols(), landmarks.rows());
      // The whitening kernel is the learner's kernel; linear modes fall back to gaussian(0.1).
      const KernelSpec kernel = hp.kernel.kind == KernelKind::linear ? KernelSpec::gaussian() : hp.kernel;
      return fit_kpca_whitener(landmarks, kernel, retained, hp.whiten_eps);
    }
  }
  throw Unsupported("unknown whitening kind");
}

/// Fits preprocessing, initializes with k-means (per class block in
/// discriminative modes) and optimizes the basis.
inline TrainResult train(const Eigen::MatrixXd& x, std::span<const int> labels, const Hyperparams& hp,
                         const SolveConfig& cfg) {
  cfg.validate();
  hp.kernel.validate();
  detail::require(hp.basis_size >= 1, "basis size must be >= 1");
  detail::require(x.rows() >= 2, "need at least two training samples");
  if (!is_kernel_mode(hp.mode)) {
    detail::require(hp.kernel.kind == KernelKind::linear, "linear modes require the linear kernel");
  }
  if (!hp.kernel.differentiable()) {
    throw Unsupported("kernel '" + std::string(to_string(hp.kernel.kind)) +
                      "' is evaluation-only and cannot be trained");
  }

  TrainResult out;
  BasisModel& model = out.model;
  model.mode = hp.mode;
  model.kernel = hp.kernel;
  model.lambda = hp.lambda;
  model.alpha = hp.alpha;
  model.center_patches = hp.center_patches;
  model.seed = cfg.seed;
  if (is_discriminative(hp.mode)) {
    detail::require(hp.class_count >= 1, "class count must be >= 1");
    if (hp.basis_size % hp.class_count != 0) {
      throw InvalidArgument("basis size " + std::to_string(hp.basis_size) +
                            " is not divisible by class count " + std::to_string(hp.class_count));
    }
    if (labels.empty()) throw InvalidArgument("discriminative mode requires labels");
    model.selectors = Selectors{hp.class_count, hp.basis_size / hp.class_count, hp.selector_reading};
    model.eta = hp.eta.value_or(model.selectors->convex_eta());
  } else {
    // Unused by the objective; recorded as the bound a discriminative run would use.
    model.eta = hp.eta.value_or(static_cast<double>(hp.basis_size / std::max<Eigen::Index>(hp.class_count, 1) + 1));
  }
  model.pooling = PoolingMatrix::make(hp.pooling.value_or(default_pooling(hp.mode, hp.basis_size)),
                                      hp.basis_size, hp.epsilon);

  const Eigen::MatrixXd centered = hp.center_patches ? center_rows(x) : x;
  model.whitener = fit_whitener(hp, centered, cfg.seed);
  const Eigen::MatrixXd xw = apply_whitener(model.whitener, centered);
  detail::require(xw.cols() >= 1, "whitening retained no directions");

  if (is_discriminative(hp.mode)) {
    if (static_cast<Eigen::Index>(labels.size()) != x.rows()) {
      throw InvalidArgument("label count does not match sample count");
    }
    const auto& sel = *model.selectors;
    model.w.resize(hp.basis_size, xw.cols());
    for (Eigen::Index c = 0; c < sel.class_count; ++c) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
      }
      if (static_cast<Eigen::Index>(rows.size()) < sel.per_class_size) {
        throw InvalidArgument("class " + std::to_string(c) + " has fewer samples than basis vectors per class");
      }
      Eigen::MatrixXd subset(static_cast<Eigen::Index>(rows.size()), xw.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) subset.row(static_cast<Eigen::Index>(i)) = xw.row(rows[i]);
      SolveConfig class_cfg = cfg;
      class_cfg.seed = cfg.seed + static_cast<std::uint64_t>(c);
      model.w.middleRows(c * sel.per_class_size, sel.per_class_size) =
          kmeans_init(subset, sel.per_class_size, class_cfg);
    }
  } else {
    model.w = kmeans_init(xw, hp.basis_size, cfg);
  }
  out.report = optimize(model, xw, labels, cfg);
  return out;
}

}  // namespace krica

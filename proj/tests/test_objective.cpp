#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "krica/objective.hpp"
#include "krica/solver.hpp"
#include "krica/whitening.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace krica {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

BasisModel make_model(Mode mode, const KernelSpec& kernel, const MatrixXd& w, double lambda, double alpha = 0.0,
                      Eigen::Index classes = 1) {
  BasisModel model;
  model.mode = mode;
  model.kernel = kernel;
  model.w = w;
  model.lambda = lambda;
  model.alpha = alpha;
  model.pooling = PoolingMatrix::identity(w.rows());
  if (is_discriminative(mode)) {
    model.selectors = Selectors{classes, w.rows() / classes};
    model.eta = model.selectors->convex_eta();
  }
  model.validate();
  return model;
}

using testing::direct_linear_reconstruction;
using testing::naive_reconstruction;
using testing::relative;

// ----------------------------------------------------------------------------

TEST(Encode, LinearIdentityBasisIsIdentity) {
  const auto model = make_model(Mode::rica, KernelSpec::linear(), MatrixXd::Identity(3, 3), 0.0);
  const VectorXd x(Eigen::Vector3d(1.5, -2, 0.25));
  EXPECT_EQ(encode(model, x), x);
}

TEST(Encode, GaussianOnABasisRowIsOne) {
  std::mt19937_64 rng(1);
  const MatrixXd w = testing::gaussian_matrix(4, 3, rng);
  const auto model = make_model(Mode::krica, KernelSpec::gaussian(0.4), w, 0.0);
  EXPECT_EQ(encode(model, w.row(2).transpose())(2), 1.0);
}

TEST(Encode, GaussianClosedForm) {
  MatrixXd w(2, 2);
  w << 0, 0, 1, 0;
  const auto model = make_model(Mode::krica, KernelSpec::gaussian(0.5), w, 0.0);
  const VectorXd s = encode(model, VectorXd::Zero(2));
  EXPECT_EQ(s(0), 1.0);
  EXPECT_NEAR(s(1), std::exp(-0.5), 1e-15);
}

TEST(Encode, RejectsDimensionMismatch) {
  const auto model = make_model(Mode::rica, KernelSpec::linear(), MatrixXd::Identity(3, 3), 0.0);
  EXPECT_THROW(encode(model, VectorXd::Zero(4)), InvalidArgument);
}

TEST(PoolingPenalty, IdentityAtZeroEpsilonIsL1) {
  auto p = PoolingMatrix::identity(2, 0.0);
  EXPECT_DOUBLE_EQ(pooling_penalty(p, Eigen::Vector2d(3, -4)).value, 7.0);
}

TEST(PoolingPenalty, ZeroRepresentation) {
  const auto p = PoolingMatrix::grid3x3(9, 1e-6);
  EXPECT_NEAR(pooling_penalty(p, VectorXd::Zero(9)).value, 9 * std::sqrt(1e-6), 1e-15);
}

TEST(PoolingPenalty, IdentityWithEpsilon) {
  const auto p = PoolingMatrix::identity(3, 1e-6);
  const auto r = pooling_penalty(p, VectorXd::Ones(3));
  EXPECT_NEAR(r.value, 3 * std::sqrt(1 + 1e-6), 1e-14);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(r.gradient(j), 1 / std::sqrt(1 + 1e-6), 1e-14);
}

TEST(PoolingPenalty, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(2);
  const auto p = PoolingMatrix::grid3x3(16, 1e-3);
  const VectorXd s = testing::gaussian_matrix(16, 1, rng).col(0);
  const VectorXd g = pooling_penalty(p, s).gradient;
  for (Eigen::Index j = 0; j < 16; ++j) {
    VectorXd up = s;
    VectorXd down = s;
    up(j) += 1e-6;
    down(j) -= 1e-6;
    const double fd = (pooling_penalty(p, up).value - pooling_penalty(p, down).value) / 2e-6;
    EXPECT_NEAR(g(j), fd, 1e-6);
  }
}

TEST(PoolingPenalty, ConvergesToL1AsEpsilonVanishes) {
  std::mt19937_64 rng(3);
  for (double eps : {1e-2, 1e-4, 1e-8}) {
    const auto p = PoolingMatrix::identity(10, eps);
    const VectorXd s = testing::gaussian_matrix(10, 1, rng).col(0);
    EXPECT_LE(std::abs(pooling_penalty(p, s).value - s.lpNorm<1>()), 10 * std::sqrt(eps));
  }
}

TEST(PoolingMatrix, Grid3x3Structure) {
  const auto p = PoolingMatrix::grid3x3(25);
  for (Eigen::Index j = 0; j < 25; ++j) {
    EXPECT_EQ(p.h.row(j).sum(), 9.0);
    EXPECT_EQ((p.h.row(j).array() == 1.0).count(), 9);
  }
  EXPECT_EQ(p.h, p.h.transpose());
  EXPECT_EQ(p.h(0, 24), 1.0);  // toroidal wrap
  EXPECT_THROW(PoolingMatrix::grid3x3(10), InvalidArgument);
  EXPECT_EQ(PoolingMatrix::identity(4).h, MatrixXd::Identity(4, 4));
}

TEST(PoolingMatrix, DefaultTopology) {
  EXPECT_EQ(default_pooling(Mode::krica, 16), PoolingTopology::grid3x3);
  EXPECT_EQ(default_pooling(Mode::rica, 15), PoolingTopology::identity);
  EXPECT_EQ(default_pooling(Mode::d_krica, 16), PoolingTopology::identity);
}

TEST(Selectors, ContiguousBlocks) {
  const Selectors sel{3, 2};
  EXPECT_EQ(sel.d_plus(2), (VectorXd(6) << 0, 0, 0, 0, 1, 1).finished());
  EXPECT_EQ(sel.d_minus(2), (VectorXd(6) << 1, 1, 1, 1, 0, 0).finished());
  EXPECT_EQ(sel.convex_eta(), 3.0);
  EXPECT_THROW(sel.d_plus(3), InvalidArgument);
  EXPECT_THROW(sel.d_plus(-1), InvalidArgument);
}

TEST(DiscriminationTerm, ZeroRepresentation) {
  const auto r = discrimination_term(Selectors{3, 2}, 3.0, 1, VectorXd::Zero(6));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.gradient.norm(), 0.0);
}

TEST(DiscriminationTerm, AllOnesThirdClass) {
  EXPECT_DOUBLE_EQ(discrimination_term(Selectors{3, 2}, 3.0, 2, VectorXd::Ones(6)).value, 30.0);
}

TEST(DiscriminationTerm, SupportOnOwnBlock) {
  VectorXd s = VectorXd::Zero(6);
  s(4) = 0.7;
  s(5) = -1.9;
  const double t = s.sum();
  EXPECT_NEAR(discrimination_term(Selectors{3, 2}, 3.0, 2, s).value, -t * t + 3.0 * s.squaredNorm(), 1e-14);
  // The same vector counts as inhomogeneous for another label.
  EXPECT_NEAR(discrimination_term(Selectors{3, 2}, 3.0, 0, s).value, t * t + 3.0 * s.squaredNorm(), 1e-14);
}

TEST(DiscriminationTerm, GradientFormula) {
  std::mt19937_64 rng(4);
  const Selectors sel{4, 3};
  const VectorXd s = testing::gaussian_matrix(12, 1, rng).col(0);
  const int y = 1;
  const double eta = 2.5;
  const VectorXd expected =
      2.0 * (sel.d_minus(y).dot(s) * sel.d_minus(y) - sel.d_plus(y).dot(s) * sel.d_plus(y) + eta * s);
  EXPECT_LT((discrimination_term(sel, eta, y, s).gradient - expected).norm(), 1e-12);
}

TEST(DiscriminationTerm, RejectsBadLabel) {
  EXPECT_THROW(discrimination_term(Selectors{3, 2}, 3.0, 3, VectorXd::Zero(6)), InvalidArgument);
}

TEST(DiscriminationTerm, MaskReadingUsesCoefficientEnergies) {
  Selectors sel{3, 2, SelectorReading::mask};
  VectorXd s(6);
  s << 1, 2, 3, 4, 5, 6;
  const double plus = 25 + 36;
  const double minus = 1 + 4 + 9 + 16;
  EXPECT_DOUBLE_EQ(discrimination_term(sel, 3.0, 2, s).value, minus - plus + 3.0 * s.squaredNorm());
}

TEST(DiscriminationTerm, ConvexAtTheBound) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index k = 1; k <= 4; ++k) {
    const Selectors sel{3, k};
    for (int trial = 0; trial < 500; ++trial) {
      const VectorXd a = testing::gaussian_matrix(sel.basis_size(), 1, rng, 3.0).col(0);
      const VectorXd b = testing::gaussian_matrix(sel.basis_size(), 1, rng, 3.0).col(0);
      const double t = unit(rng);
      const int y = trial % 3;
      const double eta = sel.convex_eta();
      const double mid = discrimination_term(sel, eta, y, t * a + (1 - t) * b).value;
      const double chord = t * discrimination_term(sel, eta, y, a).value +
                           (1 - t) * discrimination_term(sel, eta, y, b).value;
      EXPECT_LE(mid, chord + 1e-9);
    }
  }
}

TEST(HessianOfD, MatchesDisplayedPattern) {
  const double eta = 3.0;
  const MatrixXd h = hessian_of_d(Selectors{3, 2}, eta, 2);
  MatrixXd a(6, 6);
  a << eta + 1, 1, 1, 1, 0, 0,
       1, eta + 1, 1, 1, 0, 0,
       1, 1, eta + 1, 1, 0, 0,
       1, 1, 1, eta + 1, 0, 0,
       0, 0, 0, 0, eta - 1, -1,
       0, 0, 0, 0, -1, eta - 1;
  EXPECT_EQ(h, 2.0 * a);
}

TEST(HessianOfD, MinimumEigenvalueAtTheBound) {
  const Selectors sel{3, 2};
  const MatrixXd h = hessian_of_d(sel, sel.convex_eta(), 1);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(h).eigenvalues().minCoeff(), 2.0 - 1e-9);
}

TEST(HessianOfD, IndefiniteBelowTheBound) {
  const Selectors sel{3, 2};
  const double eta = 1.0;  // k - 1
  const MatrixXd h = hessian_of_d(sel, eta, 0);
  EXPECT_LE(Eigen::SelfAdjointEigenSolver<MatrixXd>(h).eigenvalues().minCoeff(), -2.0 + 1e-9);
  const VectorXd z = sel.d_plus(0);
  EXPECT_DOUBLE_EQ(z.dot(h * z), 2.0 * 2.0 * (eta - 2.0));
}

TEST(HessianOfD, IsTheHessianOfTheTerm) {
  std::mt19937_64 rng(6);
  const Selectors sel{3, 3};
  const MatrixXd h = hessian_of_d(sel, 4.0, 1);
  const VectorXd s = testing::gaussian_matrix(9, 1, rng).col(0);
  const VectorXd ds = testing::gaussian_matrix(9, 1, rng).col(0);
  // d is quadratic, so the second-order expansion is exact.
  const double lhs = discrimination_term(sel, 4.0, 1, s + ds).value;
  const double rhs = discrimination_term(sel, 4.0, 1, s).value + discrimination_term(sel, 4.0, 1, s).gradient.dot(ds) +
                     0.5 * ds.dot(h * ds);
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(ReconstructionCost, OrthonormalCompleteBasisIsZero) {
  std::mt19937_64 rng(7);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(testing::gaussian_matrix(5, 5, rng)).householderQ();
  const auto model = make_model(Mode::rica, KernelSpec::linear(), q, 0.0);
  EXPECT_NEAR(reconstruction_cost(model, testing::gaussian_matrix(10, 5, rng)), 0.0, 1e-24 + 1e-12);
}

TEST(ReconstructionCost, ZeroBasisGivesMeanSquaredNorm) {
  std::mt19937_64 rng(8);
  const MatrixXd x = testing::gaussian_matrix(9, 4, rng);
  const auto model = make_model(Mode::rica, KernelSpec::linear(), MatrixXd::Zero(3, 4), 0.0);
  EXPECT_NEAR(reconstruction_cost(model, x), x.rowwise().squaredNorm().mean(), 1e-13);
}

TEST(ReconstructionCost, GaussianMatchesTripleLoop) {
  std::mt19937_64 rng(9);
  const MatrixXd w = testing::gaussian_matrix(6, 4, rng);
  const MatrixXd x = testing::gaussian_matrix(10, 4, rng);
  const KernelSpec spec = KernelSpec::gaussian(0.3);
  const auto model = make_model(Mode::krica, spec, w, 0.0);
  EXPECT_LT(relative(reconstruction_cost(model, x), naive_reconstruction(spec, w, x)), 1e-10);
}

TEST(ReconstructionCost, PolynomialMatchesTripleLoop) {
  std::mt19937_64 rng(10);
  const MatrixXd w = testing::gaussian_matrix(5, 3, rng, 0.3);
  const MatrixXd x = testing::gaussian_matrix(7, 3, rng, 0.3);
  const KernelSpec spec = KernelSpec::polynomial(3);
  const auto model = make_model(Mode::krica, spec, w, 0.0);
  EXPECT_LT(relative(reconstruction_cost(model, x), naive_reconstruction(spec, w, x)), 1e-10);
}

TEST(ReconstructionCost, LinearKernelIsDirectReconstruction) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd w = testing::gaussian_matrix(3 + trial, 5, rng);
    const MatrixXd x = testing::gaussian_matrix(12, 5, rng);
    const auto model = make_model(Mode::rica, KernelSpec::linear(), w, 0.0);
    EXPECT_LT(relative(reconstruction_cost(model, x), direct_linear_reconstruction(w, x)), 1e-10);
  }
}

TEST(ReconstructionCost, OrthonormalityIdentityOnWhitenedData) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 4;
    const Eigen::Index k = 2 + trial % 6;  // under- to over-complete
    MatrixXd x = testing::gaussian_matrix(50, n, rng) * testing::gaussian_matrix(n, n, rng);
    x = apply_whitener(fit_pca_whitener(x, 1.0, 0.0), x);
    const MatrixXd w = testing::gaussian_matrix(k, n, rng, 0.5);
    const auto model = make_model(Mode::rica, KernelSpec::linear(), w, 0.0);
    const double ortho = (w.transpose() * w - MatrixXd::Identity(n, n)).squaredNorm();
    EXPECT_LT(std::abs(reconstruction_cost(model, x) - ortho), 1e-8);
  }
}

TEST(FullObjective, WithoutPenaltiesIsReconstruction) {
  std::mt19937_64 rng(13);
  const MatrixXd w = testing::gaussian_matrix(6, 3, rng);
  const MatrixXd x = testing::gaussian_matrix(8, 3, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1};
  auto model = make_model(Mode::d_krica, KernelSpec::gaussian(0.5), w, 0.0, 0.0, 3);
  EXPECT_EQ(full_objective(model, x, labels), reconstruction_cost(model, x));
}

TEST(FullObjective, RicaEqualsKricaWithLinearKernel) {
  std::mt19937_64 rng(14);
  const MatrixXd w = testing::gaussian_matrix(6, 4, rng);
  const MatrixXd x = testing::gaussian_matrix(9, 4, rng);
  const auto rica = make_model(Mode::rica, KernelSpec::linear(), w, 0.05);
  const auto krica = make_model(Mode::krica, KernelSpec::linear(), w, 0.05);
  EXPECT_NEAR(full_objective(rica, x), full_objective(krica, x), 1e-12);
}

TEST(FullObjective, MatchesNaiveEvaluation) {
  std::mt19937_64 rng(15);
  const Eigen::Index n = 5, k = 8, m = 12;
  const MatrixXd w = testing::gaussian_matrix(k, n, rng, 0.5);
  const MatrixXd x = testing::gaussian_matrix(m, n, rng, 0.5);
  const KernelSpec spec = KernelSpec::gaussian(0.5);
  const double lambda = 0.01;
  auto model = make_model(Mode::krica, spec, w, lambda);
  model.pooling = PoolingMatrix::identity(k, 1e-6);

  double penalty = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index u = 0; u < k; ++u) {
      const double s = std::exp(-0.5 * (w.row(u) - x.row(i)).squaredNorm());
      penalty += std::sqrt(1e-6 + s * s);
    }
  }
  const double expected = naive_reconstruction(spec, w, x) + lambda * penalty / m;
  EXPECT_LT(relative(full_objective(model, x), expected), 1e-10);
}

TEST(FullObjective, DiscriminativeTermIsAveraged) {
  std::mt19937_64 rng(16);
  const MatrixXd w = testing::gaussian_matrix(6, 3, rng);
  const MatrixXd x = testing::gaussian_matrix(5, 3, rng);
  const std::vector<int> labels{2, 0, 1, 1, 0};
  const auto model = make_model(Mode::d_krica, KernelSpec::gaussian(0.2), w, 0.01, 0.1, 3);
  double d = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    d += discrimination_term(*model.selectors, model.eta, labels[static_cast<std::size_t>(i)],
                             encode(model, x.row(i).transpose()))
             .value;
  }
  BasisModel plain = model;
  plain.alpha = 0.0;
  EXPECT_NEAR(full_objective(model, x, labels) - full_objective(plain, x, labels), 0.1 * d / 5, 1e-13);
}

TEST(FullObjective, RequiresLabelsInDiscriminativeModes) {
  const auto model = make_model(Mode::d_rica, KernelSpec::linear(), MatrixXd::Identity(4, 4), 0.0, 0.1, 2);
  EXPECT_THROW(full_objective(model, MatrixXd::Zero(3, 4)), InvalidArgument);
  const std::vector<int> wrong{0, 1};
  EXPECT_THROW(full_objective(model, MatrixXd::Zero(3, 4), wrong), InvalidArgument);
  const std::vector<int> out_of_range{0, 1, 2};
  EXPECT_THROW(full_objective(model, MatrixXd::Zero(3, 4), out_of_range), InvalidArgument);
}

TEST(FullObjective, InvariantUnderSamplePermutation) {
  std::mt19937_64 rng(17);
  const MatrixXd w = testing::gaussian_matrix(6, 4, rng);
  const MatrixXd x = testing::gaussian_matrix(40, 4, rng);
  std::vector<int> labels = testing::random_labels(40, 3, rng);
  const auto model = make_model(Mode::d_krica, KernelSpec::gaussian(0.3), w, 0.01, 0.1, 3);
  std::vector<Eigen::Index> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixXd xp(40, 4);
  std::vector<int> lp(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    lp[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const double a = full_objective(model, x, labels);
  EXPECT_LE(std::abs(a - full_objective(model, xp, lp)), 1e-12 * std::abs(a));
}

TEST(FullGradient, ZeroAtAStationaryPoint) {
  std::mt19937_64 rng(18);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(testing::gaussian_matrix(4, 4, rng)).householderQ();
  const auto model = make_model(Mode::rica, KernelSpec::linear(), q, 0.0);
  EXPECT_LT(full_gradient(model, testing::gaussian_matrix(20, 4, rng)).norm(), 1e-6);
}

TEST(FullGradient, LinearMatchesMatrixCalculus) {
  std::mt19937_64 rng(19);
  const MatrixXd w = testing::gaussian_matrix(7, 4, rng);
  const MatrixXd x = testing::gaussian_matrix(15, 4, rng);
  const auto model = make_model(Mode::rica, KernelSpec::linear(), w, 0.0);
  const MatrixXd r = w.transpose() * w * x.transpose() - x.transpose();  // n x m residuals
  const MatrixXd expected = (2.0 / 15.0) * (w * x.transpose() * r.transpose() + w * r * x);
  const MatrixXd g = full_gradient(model, x);
  EXPECT_LT((g - expected).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
}

TEST(FullGradient, MatchesFiniteDifferencesForEveryModeAndKernel) {
  std::mt19937_64 rng(20);
  const Eigen::Index n = 5, k = 6, m = 9;
  const std::vector<int> labels = testing::random_labels(m, 3, rng);
  struct Case {
    Mode mode;
    KernelSpec kernel;
    double w_scale;
  };
  for (const Case& c : {Case{Mode::rica, KernelSpec::linear(), 0.5}, Case{Mode::d_rica, KernelSpec::linear(), 0.5},
                        Case{Mode::krica, KernelSpec::gaussian(0.5), 0.5},
                        Case{Mode::krica, KernelSpec::polynomial(3), 0.3},
                        Case{Mode::krica, KernelSpec::linear(), 0.5},
                        Case{Mode::d_krica, KernelSpec::gaussian(0.5), 0.5},
                        Case{Mode::d_krica, KernelSpec::polynomial(3), 0.3}}) {
    const MatrixXd w = testing::gaussian_matrix(k, n, rng, c.w_scale);
    const MatrixXd x = testing::gaussian_matrix(m, n, rng, c.w_scale);
    auto model = make_model(c.mode, c.kernel, w, 1e-2, 1e-1, 3);
    model.pooling = PoolingMatrix::identity(k, 1e-3);
    const MatrixXd g = full_gradient(model, x, labels);
    double worst = 0.0;
    for (Eigen::Index p = 0; p < k; ++p) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double h = 1e-5 * (1.0 + std::abs(w(p, j)));
        BasisModel up = model;
        BasisModel down = model;
        up.w(p, j) += h;
        down.w(p, j) -= h;
        const double fd = (full_objective(up, x, labels) - full_objective(down, x, labels)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g(p, j)) / std::max(1e-8, std::abs(fd) + std::abs(g(p, j))));
      }
    }
    EXPECT_LT(worst, 1e-4) << to_string(c.mode) << " / " << to_string(c.kernel.kind);
  }
}

TEST(FullGradient, RejectsEvaluationOnlyKernels) {
  auto model = make_model(Mode::krica, KernelSpec::gaussian(), MatrixXd::Identity(2, 2), 0.0);
  model.kernel = KernelSpec::inverse_distance();
  EXPECT_THROW(full_gradient(model, MatrixXd::Zero(2, 2)), Unsupported);
}

TEST(BasisModel, ValidateEnforcesModeRules) {
  auto model = make_model(Mode::krica, KernelSpec::gaussian(), MatrixXd::Identity(4, 4), 0.0);
  model.mode = Mode::rica;
  EXPECT_THROW(model.validate(), InvalidArgument);
  model = make_model(Mode::d_krica, KernelSpec::gaussian(), MatrixXd::Identity(4, 4), 0.0, 0.1, 2);
  model.selectors.reset();
  EXPECT_THROW(model.validate(), InvalidArgument);
  model = make_model(Mode::krica, KernelSpec::gaussian(), MatrixXd::Identity(4, 4), 0.0);
  model.w(0, 0) = NAN;
  EXPECT_THROW(model.validate(), InvalidArgument);
}

}  // namespace
}  // namespace krica

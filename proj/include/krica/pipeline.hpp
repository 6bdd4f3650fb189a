#pragma once

// Patch extraction, dense encoding with quadrant pooling, the one-vs-rest
// linear SVM and the descriptor similarity diagnostic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "krica/error.hpp"
#include "krica/objective.hpp"
#include "krica/solver.hpp"

namespace krica {

/// Image with `channels` interleaved values per pixel, row-major, in [0, 1].
struct ImageTensor {
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  Eigen::Index channels = 1;
  std::vector<double> pixels;

  ImageTensor() = default;
  ImageTensor(Eigen::Index h, Eigen::Index w, Eigen::Index c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h * w * c), fill) {}

  double& at(Eigen::Index r, Eigen::Index c, Eigen::Index ch) {
    return pixels[static_cast<std::size_t>((r * width + c) * channels + ch)];
  }
  double at(Eigen::Index r, Eigen::Index c, Eigen::Index ch) const {
    return pixels[static_cast<std::size_t>((r * width + c) * channels + ch)];
  }

  void validate() const {
    detail::require(height >= 1 && width >= 1 && channels >= 1, "image dimensions must be positive");
    detail::require(pixels.size() == static_cast<std::size_t>(height * width * channels),
                    "image pixel buffer does not match its dimensions");
  }
};

namespace detail {

inline Eigen::Index positions(Eigen::Index extent, Eigen::Index p, Eigen::Index stride) {
  return (extent - p + stride) / stride;  // ceil((extent - p + 1) / stride)
}

inline void check_patch_size(const ImageTensor& img, Eigen::Index p) {
  img.validate();
  if (p < 1 || p > std::min(img.height, img.width)) {
    throw InvalidArgument("patch size " + std::to_string(p) + " does not fit a " +
                          std::to_string(img.height) + "x" + std::to_string(img.width) + " image");
  }
}

inline void copy_patch(const ImageTensor& img, Eigen::Index p, Eigen::Index r, Eigen::Index c,
                       Eigen::MatrixXd& out, Eigen::Index row) {
  Eigen::Index k = 0;
  for (Eigen::Index dr = 0; dr < p; ++dr) {
    const double* src = img.pixels.data() + ((r + dr) * img.width + c) * img.channels;
    for (Eigen::Index j = 0; j < p * img.channels; ++j) out(row, k++) = src[j];
  }
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a fixed
/// contiguous partition; fn must only write to slot i.
template <typename Fn>
void parallel_for(Eigen::Index n, int threads, Fn&& fn) {
  const auto workers = static_cast<Eigen::Index>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const Eigen::Index used = std::min(workers, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(used));
  for (Eigen::Index t = 0; t < used; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (Eigen::Index i = t * n / used; i < (t + 1) * n / used; ++i) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// All p x p patches at the given stride in raster order, one flattened
/// (row, column, channel) patch per row. With `limit` set, a seeded uniform
/// subsample without replacement, still in raster order.
inline Eigen::MatrixXd extract_patches(const ImageTensor& img, Eigen::Index p, Eigen::Index stride = 1,
                                       std::optional<Eigen::Index> limit = std::nullopt,
                                       std::uint64_t seed = 0) {
  detail::check_patch_size(img, p);
  detail::require(stride >= 1, "stride must be >= 1");
  const Eigen::Index rows = detail::positions(img.height, p, stride);
  const Eigen::Index cols = detail::positions(img.width, p, stride);
  const Eigen::Index total = rows * cols;

  std::vector<Eigen::Index> picked(static_cast<std::size_t>(total));
  std::iota(picked.begin(), picked.end(), Eigen::Index{0});
  if (limit && *limit < total) {
    detail::require(*limit >= 0, "limit must be >= 0");
    std::mt19937_64 rng(seed);
    for (Eigen::Index i = 0; i < *limit; ++i) {
      const Eigen::Index j = i + detail::uniform_index(rng, total - i);
      std::swap(picked[static_cast<std::size_t>(i)], picked[static_cast<std::size_t>(j)]);
    }
    picked.resize(static_cast<std::size_t>(*limit));
    std::sort(picked.begin(), picked.end());
  }

  Eigen::MatrixXd out(static_cast<Eigen::Index>(picked.size()), p * p * img.channels);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const Eigen::Index r = picked[i] / cols * stride;
    const Eigen::Index c = picked[i] % cols * stride;
    detail::copy_patch(img, p, r, c, out, static_cast<Eigen::Index>(i));
  }
  return out;
}

enum class QuadrantPooling { sum, max };

inline std::string_view to_string(QuadrantPooling q) { return q == QuadrantPooling::sum ? "sum" : "max"; }

/// Pools an (rows*cols) x K response map, rows in raster order, into four
/// quadrants TL, TR, BL, BR. The top/left halves take floor(rows/2) and
/// floor(cols/2); the extra row/column of odd maps joins the lower/right half.
/// Empty quadrants pool to zero.
inline Eigen::VectorXd pool_quadrants(const Eigen::MatrixXd& responses, Eigen::Index rows, Eigen::Index cols,
                                      QuadrantPooling pooling = QuadrantPooling::sum) {
  detail::require(responses.rows() == rows * cols, "response map size does not match its grid");
  const Eigen::Index k = responses.cols();
  const Eigen::Index top = rows / 2;
  const Eigen::Index left = cols / 2;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(4 * k);
  std::vector<bool> seen(4, false);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index q = (r < top ? 0 : 2) + (c < left ? 0 : 1);
      auto block = out.segment(q * k, k);
      const auto resp = responses.row(r * cols + c).transpose();
      if (pooling == QuadrantPooling::sum) {
        block += resp;
      } else if (!seen[static_cast<std::size_t>(q)]) {
        block = resp;
      } else {
        block = block.cwiseMax(resp);
      }
      seen[static_cast<std::size_t>(q)] = true;
    }
  }
  return out;
}

/// 4K-dimensional descriptor of one image: every stride-1 patch is
/// preprocessed with the model's stored transform, encoded, and the response
/// map is pooled over quadrants (quadrant-major).
inline Eigen::VectorXd encode_image(const BasisModel& model, const ImageTensor& img, Eigen::Index p,
                                    QuadrantPooling pooling = QuadrantPooling::sum) {
  if (model.w.size() == 0) throw InvalidArgument("encode_image: model is untrained");
  detail::check_patch_size(img, p);
  const Eigen::Index patch_dim = p * p * img.channels;
  const Eigen::Index expected = model.whitener.input_dim != 0 ? model.whitener.input_dim : model.input_dim();
  if (patch_dim != expected) {
    throw InvalidArgument("encode_image: patch dimension " + std::to_string(patch_dim) +
                          " does not match the model input " + std::to_string(expected));
  }
  const Eigen::MatrixXd patches = extract_patches(img, p);
  const Eigen::MatrixXd s = encode_batch(model, preprocess(model, patches));
  return pool_quadrants(s, img.height - p + 1, img.width - p + 1, pooling);
}

/// One descriptor row per image. Parallel over images; the output does not
/// depend on `threads`.
inline Eigen::MatrixXd encode_images(const BasisModel& model, std::span<const ImageTensor> images, Eigen::Index p,
                                     int threads = 1, QuadrantPooling pooling = QuadrantPooling::sum) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), 4 * model.basis_size());
  detail::parallel_for(out.rows(), threads, [&](Eigen::Index i) {
    out.row(i) = encode_image(model, images[static_cast<std::size_t>(i)], p, pooling).transpose();
  });
  return out;
}

// ----------------------------------------------------------------------------
// Classifier

/// One-vs-rest linear SVM on standardized descriptors.
struct LinearClassifier {
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;  // divide after centering
  Eigen::MatrixXd weights;        // classes x dims, standardized space
  Eigen::VectorXd biases;
  double reg = 1e-3;
  int epochs = 0;  // passes actually used by the slowest class
  std::uint64_t seed = 0;

  Eigen::Index class_count() const { return weights.rows(); }
  Eigen::Index input_dim() const { return weights.cols(); }
};

struct ClassifierConfig {
  double reg = 1e-3;     // L2 weight on the average hinge loss
  int epochs = 2000;     // maximum passes over the data per class
  double tol = 1e-10;    // dual optimality gap tolerance
  std::uint64_t seed = 0;
};

/// Trains one binary hinge-loss problem per class,
///   min_v  reg/2 |v|^2 + 1/m sum_i max(0, 1 - y_i v.[x_i; 1]),
/// by seeded stochastic dual coordinate ascent. The bias is the last entry
/// of v and is regularized too, which makes the optimum unique; the solver
/// runs to the optimum, so the result depends only on the average loss.
inline LinearClassifier train_classifier(const Eigen::MatrixXd& d, std::span<const int> labels,
                                         const ClassifierConfig& cfg = {}) {
  detail::require(d.rows() >= 1 && d.cols() >= 1, "train_classifier: empty descriptor matrix");
  detail::require(static_cast<Eigen::Index>(labels.size()) == d.rows(),
                  "train_classifier: label count does not match descriptor count");
  detail::require(d.allFinite(), "train_classifier: descriptors are not finite");
  detail::require(cfg.reg > 0.0 && cfg.epochs >= 1 && cfg.tol > 0.0, "train_classifier: invalid config");
  const int lo = *std::min_element(labels.begin(), labels.end());
  const int hi = *std::max_element(labels.begin(), labels.end());
  detail::require(lo >= 0, "train_classifier: labels must be >= 0");
  if (lo == hi) throw InvalidArgument("train_classifier: need at least two classes");

  const Eigen::Index m = d.rows();
  const Eigen::Index dim = d.cols();
  LinearClassifier clf;
  clf.reg = cfg.reg;
  clf.seed = cfg.seed;
  clf.feature_mean = d.colwise().mean().transpose();
  const Eigen::MatrixXd centered = d.rowwise() - clf.feature_mean.transpose();
  clf.feature_scale = (centered.colwise().squaredNorm() / static_cast<double>(m)).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (!(clf.feature_scale(j) > 1e-12)) clf.feature_scale(j) = 1.0;
  }
  Eigen::MatrixXd z(m, dim + 1);
  z.leftCols(dim) = centered.array().rowwise() / clf.feature_scale.transpose().array();
  z.col(dim).setOnes();
  const Eigen::VectorXd q = z.rowwise().squaredNorm();

  const Eigen::Index classes = hi + 1;
  const double upper = 1.0 / (cfg.reg * static_cast<double>(m));  // box for the dual variables
  clf.weights.resize(classes, dim);
  clf.biases.resize(classes);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index c = 0; c < classes; ++c) {
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(c));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) y(i) = labels[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim + 1);
    int epoch = 0;
    for (; epoch < cfg.epochs; ++epoch) {
      for (Eigen::Index i = m - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(detail::uniform_index(rng, i + 1))]);
      }
      for (Eigen::Index i : order) {
        const double g = y(i) * z.row(i).dot(v) - 1.0;
        const double updated = std::clamp(a(i) - g / q(i), 0.0, upper);
        if (updated != a(i)) {
          v += (updated - a(i)) * y(i) * z.row(i).transpose();
          a(i) = updated;
        }
      }
      // Duality gap of the C-form problem  1/2 |v|^2 + upper * sum hinge.
      const Eigen::VectorXd margins = (z * v).cwiseProduct(y);
      const double primal = 0.5 * v.squaredNorm() + upper * (1.0 - margins.array()).max(0.0).sum();
      const double dual = a.sum() - 0.5 * v.squaredNorm();
      if (primal - dual <= cfg.tol * std::max(1.0, std::abs(primal))) {
        ++epoch;
        break;
      }
    }
    clf.epochs = std::max(clf.epochs, epoch);
    clf.weights.row(c) = v.head(dim).transpose();
    clf.biases(c) = v(dim);
  }
  return clf;
}

/// Class scores, one row per descriptor.
inline Eigen::MatrixXd decision_scores(const LinearClassifier& clf, const Eigen::MatrixXd& d) {
  if (d.cols() != clf.input_dim()) {
    throw InvalidArgument("predict: descriptors have " + std::to_string(d.cols()) +
                          " columns, classifier expects " + std::to_string(clf.input_dim()));
  }
  const Eigen::MatrixXd z = (d.rowwise() - clf.feature_mean.transpose()).array().rowwise() /
                            clf.feature_scale.transpose().array();
  Eigen::MatrixXd scores = z * clf.weights.transpose();
  scores.rowwise() += clf.biases.transpose();
  return scores;
}

/// Argmax class per descriptor; ties go to the lowest class index.
inline std::vector<int> predict(const LinearClassifier& clf, const Eigen::MatrixXd& d) {
  const Eigen::MatrixXd scores = decision_scores(clf, d);
  std::vector<int> out(static_cast<std::size_t>(d.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

struct AccuracyReport {
  double overall = 0.0;
  std::vector<double> per_class;  // NaN for classes absent from the truth
  std::vector<Eigen::Index> per_class_count;
};

inline AccuracyReport accuracy(std::span<const int> truth, std::span<const int> predicted, Eigen::Index classes) {
  detail::require(truth.size() == predicted.size() && !truth.empty(), "accuracy: size mismatch or empty input");
  AccuracyReport out;
  out.per_class.assign(static_cast<std::size_t>(classes), 0.0);
  out.per_class_count.assign(static_cast<std::size_t>(classes), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    detail::require(truth[i] >= 0 && truth[i] < classes, "accuracy: label out of range");
    const auto c = static_cast<std::size_t>(truth[i]);
    ++out.per_class_count[c];
    if (truth[i] == predicted[i]) {
      ++correct;
      out.per_class[c] += 1.0;
    }
  }
  out.overall = static_cast<double>(correct) / static_cast<double>(truth.size());
  for (std::size_t c = 0; c < out.per_class.size(); ++c) {
    out.per_class[c] = out.per_class_count[c] > 0
                           ? out.per_class[c] / static_cast<double>(out.per_class_count[c])
                           : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ----------------------------------------------------------------------------
// Similarity

/// Euclidean distances between descriptor rows; exactly symmetric with a zero diagonal.
inline Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& d) {
  const Eigen::Index n = d.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      out(i, j) = out(j, i) = (d.row(i) - d.row(j)).norm();
    }
  }
  return out;
}

inline Eigen::MatrixXd similarity_matrix(const BasisModel& model, std::span<const ImageTensor> images,
                                         Eigen::Index p, int threads = 1,
                                         QuadrantPooling pooling = QuadrantPooling::sum) {
  detail::require(images.size() >= 2, "similarity_matrix: need at least two images");
  return distance_matrix(encode_images(model, images, p, threads, pooling));
}

/// exp(-distance / median off-diagonal distance), for display.
inline Eigen::MatrixXd similarity_rendering(const Eigen::MatrixXd& distances) {
  detail::require(distances.rows() == distances.cols() && distances.rows() >= 2,
                  "similarity_rendering: need a square matrix of size >= 2");
  std::vector<double> off;
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    for (Eigen::Index j = 0; j < distances.cols(); ++j) {
      if (i != j) off.push_back(distances(i, j));
    }
  }
  const auto mid = off.begin() + static_cast<std::ptrdiff_t>(off.size() / 2);
  std::nth_element(off.begin(), mid, off.end());
  const double median = *mid > 0.0 ? *mid : 1.0;
  return (-distances.array() / median).exp().matrix();
}

struct BlockDistances {
  double within = 0.0;
  double between = 0.0;
  double ratio() const { return within / between; }
};

/// Mean off-diagonal distance between same-label and different-label pairs.
inline BlockDistances block_distances(const Eigen::MatrixXd& distances, std::span<const int> labels) {
  detail::require(static_cast<Eigen::Index>(labels.size()) == distances.rows(),
                  "block_distances: label count does not match matrix size");
  double within = 0.0;
  double between = 0.0;
  Eigen::Index nw = 0;
  Eigen::Index nb = 0;
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < distances.cols(); ++j) {
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        within += distances(i, j);
        ++nw;
      } else {
        between += distances(i, j);
        ++nb;
      }
    }
  }
  detail::require(nw > 0 && nb > 0, "block_distances: need both same-label and different-label pairs");
  return {within / static_cast<double>(nw), between / static_cast<double>(nb)};
}

/// Mean over samples of (D+ . s)^2 / ((D+ . s)^2 + (D- . s)^2 + 1e-12), the
/// share of a representation's block energy that sits on its own class.
inline double homogeneous_energy_ratio(const Selectors& sel, const Eigen::MatrixXd& s, std::span<const int> labels) {
  detail::require(static_cast<Eigen::Index>(labels.size()) == s.rows() && s.rows() > 0,
                  "homogeneous_energy_ratio: label count does not match sample count");
  detail::require(s.cols() == sel.basis_size(), "homogeneous_energy_ratio: width does not match selectors");
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    sel.check_label(y);
    const double plus = std::pow(sel.d_plus(y).dot(s.row(i).transpose()), 2);
    const double minus = std::pow(sel.d_minus(y).dot(s.row(i).transpose()), 2);
    total += plus / (plus + minus + 1e-12);
  }
  return total / static_cast<double>(s.rows());
}

}  // namespace krica

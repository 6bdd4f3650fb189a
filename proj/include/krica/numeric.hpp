#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>

namespace krica {

/// Neumaier-compensated accumulator; results are insensitive to summation order
/// far below the 1e-12 level required when per-sample terms are reduced.
class CompensatedSum {
 public:
  void add(double value) {
    const double t = sum_ + value;
    if (std::abs(sum_) >= std::abs(value)) {
      compensation_ += (sum_ - t) + value;
    } else {
      compensation_ += (value - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

inline double compensated_sum(std::span<const double> values) {
  CompensatedSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

inline double compensated_sum(const Eigen::VectorXd& values) {
  return compensated_sum(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

}  // namespace krica

#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace dpboot {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Axis-aligned box of admissible parameter vectors.
struct Box {
  VectorXd lo;
  VectorXd hi;

  Box() = default;
  Box(VectorXd lo_, VectorXd hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size())
      throw std::invalid_argument("Box: lo/hi dimension mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i]))
        throw std::invalid_argument("Box: requires lo < hi in every coordinate");
  }

  Eigen::Index dim() const { return lo.size(); }

  double width(Eigen::Index i) const { return hi[i] - lo[i]; }

  bool contains(const VectorXd& x, double tol = 0.0) const {
    if (x.size() != lo.size()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
  }

  VectorXd clip(const VectorXd& x) const {
    if (x.size() != lo.size())
      throw std::invalid_argument("Box::clip: dimension mismatch");
    return x.cwiseMax(lo).cwiseMin(hi);
  }

  VectorXd center() const { return 0.5 * (lo + hi); }
};

inline Box make_box(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  VectorXd l(static_cast<Eigen::Index>(lo.size()));
  VectorXd h(static_cast<Eigen::Index>(hi.size()));
  Eigen::Index i = 0;
  for (double v : lo) l[i++] = v;
  i = 0;
  for (double v : hi) h[i++] = v;
  return Box(std::move(l), std::move(h));
}

}  // namespace dpboot

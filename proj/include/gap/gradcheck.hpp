#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gap::gradcheck {

struct Result {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central finite differences at h=1e-5 against the analytic gradient;
// rel err = |ga-gf| / max(1e-6, |ga|, |gf|), elementwise max.
double max_rel_err(const std::function<double(const Eigen::VectorXd&)>& f,
                   const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                   double h = 1e-5);

// Every differentiable loss kernel on randomized small tensors
// (B=4, D=6, T=64), `seeds` draws each; points near clamps and SVD
// degeneracies are re-sampled away. Threshold 1e-4.
std::vector<Result> check_all_losses(std::uint64_t seed_base, int seeds = 3);

}  // namespace gap::gradcheck

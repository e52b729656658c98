#include "gap/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gap/common.hpp"
#include "gap/losses.hpp"

namespace gap::gradcheck {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double max_rel_err(const std::function<double(const Eigen::VectorXd&)>& f,
                   const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                   double h) {
  double worst = 0.0;
  VectorXd xx = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xx(i);
    xx(i) = orig + h;
    const double fp = f(xx);
    xx(i) = orig - h;
    const double fm = f(xx);
    xx(i) = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double ga = analytic(i);
    const double denom = std::max({1e-6, std::abs(ga), std::abs(fd)});
    worst = std::max(worst, std::abs(ga - fd) / denom);
  }
  return worst;
}

namespace {

constexpr int kB = 4;
constexpr int kD = 6;
constexpr int kT = 64;
constexpr double kTol = 1e-4;

MatrixXd random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

VectorXd pack2(const MatrixXd& a, const MatrixXd& b) {
  VectorXd v(a.size() + b.size());
  Eigen::Map<MatrixXd>(v.data(), a.rows(), a.cols()) = a;
  Eigen::Map<MatrixXd>(v.data() + a.size(), b.rows(), b.cols()) = b;
  return v;
}

void unpack2(const VectorXd& v, MatrixXd* a, MatrixXd* b) {
  *a = Eigen::Map<const MatrixXd>(v.data(), a->rows(), a->cols());
  *b = Eigen::Map<const MatrixXd>(v.data() + a->size(), b->rows(), b->cols());
}

// Smallest singular-value-squared gap of a matrix; used to re-sample away
// SVD degeneracies before checking the SSA gradient.
double min_sv_gap(const MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const VectorXd s = svd.singularValues();
  double gap = s.size() > 0 ? s(s.size() - 1) : 0.0;  // distance from zero
  gap = gap * gap;
  for (Eigen::Index i = 0; i + 1 < s.size(); ++i)
    gap = std::min(gap, std::abs(s(i) * s(i) - s(i + 1) * s(i + 1)));
  return gap;
}

Result run_case(const std::string& name, std::uint64_t seed_base, int seeds,
                const std::function<double(Rng&)>& one_seed) {
  Result res;
  res.name = name;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(splitmix64(seed_base + 1000003ULL * static_cast<std::uint64_t>(s)));
    res.max_rel_err = std::max(res.max_rel_err, one_seed(rng));
  }
  res.pass = res.max_rel_err < kTol;
  return res;
}

}  // namespace

std::vector<Result> check_all_losses(std::uint64_t seed_base, int seeds) {
  std::vector<Result> out;

  out.push_back(run_case("ssa", seed_base + 1, seeds, [](Rng& rng) {
    MatrixXd zo, za;
    do {
      zo = random_mat(rng, kB, kD);
      za = random_mat(rng, kB, kD);
    } while (min_sv_gap(zo) < 1e-2 || min_sv_gap(za) < 1e-2);
    MatrixXd go, ga;
    losses::ssa_loss(zo, za, &go, &ga);
    auto f = [&](const VectorXd& v) {
      MatrixXd a(kB, kD), b(kB, kD);
      unpack2(v, &a, &b);
      return losses::ssa_loss(a, b);
    };
    return max_rel_err(f, pack2(zo, za), pack2(go, ga));
  }));

  out.push_back(run_case("sda", seed_base + 2, seeds, [](Rng& rng) {
    const MatrixXd zo = random_mat(rng, kB, kD);
    const MatrixXd za = random_mat(rng, kB, kD);
    MatrixXd go, ga;
    losses::sda_loss(zo, za, &go, &ga);
    auto f = [&](const VectorXd& v) {
      MatrixXd a(kB, kD), b(kB, kD);
      unpack2(v, &a, &b);
      return losses::sda_loss(a, b);
    };
    return max_rel_err(f, pack2(zo, za), pack2(go, ga));
  }));

  out.push_back(run_case("fc_scalar", seed_base + 3, seeds, [](Rng& rng) {
    VectorXd po(kB), pa(kB);
    do {
      for (int i = 0; i < kB; ++i) {
        po(i) = rng.normal(0.0, 10.0);
        pa(i) = rng.normal(0.0, 10.0);
      }
    } while ((po - pa).cwiseAbs().minCoeff() < 1e-3);
    VectorXd go, ga;
    losses::fc_scalar_loss(po, pa, &go, &ga);
    auto f = [&](const VectorXd& v) {
      const VectorXd a = v.head(kB), b = v.tail(kB);
      return losses::fc_scalar_loss(a, b);
    };
    VectorXd x(2 * kB), g(2 * kB);
    x << po, pa;
    g << go, ga;
    return max_rel_err(f, x, g);
  }));

  out.push_back(run_case("fc_bvp", seed_base + 4, seeds, [](Rng& rng) {
    const int b = 2;
    MatrixXd bo = random_mat(rng, b, kT, 0.5);
    MatrixXd ba = random_mat(rng, b, kT, 0.5);
    // Mild band content keeps PSD bins well above the log floor.
    for (int i = 0; i < b; ++i)
      for (int t = 0; t < kT; ++t) {
        bo(i, t) += std::sin(2.0 * 3.14159265358979 * 1.3 * t / 30.0);
        ba(i, t) += std::sin(2.0 * 3.14159265358979 * 1.1 * t / 30.0);
      }
    MatrixXd go, ga;
    losses::fc_bvp_loss(bo, ba, 30.0, &go, &ga);
    auto f = [&](const VectorXd& v) {
      MatrixXd a(b, kT), c(b, kT);
      unpack2(v, &a, &c);
      return losses::fc_bvp_loss(a, c, 30.0);
    };
    return max_rel_err(f, pack2(bo, ba), pack2(go, ga));
  }));

  out.push_back(run_case("tic", seed_base + 5, seeds, [](Rng& rng) {
    const int b = 2, s = 12;
    const MatrixXd bo = random_mat(rng, b, kT);
    const MatrixXd ba = random_mat(rng, b, kT);
    MatrixXd go, ga;
    losses::tic_loss(bo, ba, s, &go, &ga);
    auto f = [&](const VectorXd& v) {
      MatrixXd a(b, kT), c(b, kT);
      unpack2(v, &a, &c);
      return losses::tic_loss(a, c, s);
    };
    return max_rel_err(f, pack2(bo, ba), pack2(go, ga));
  }));

  out.push_back(run_case("tc", seed_base + 6, seeds, [](Rng& rng) {
    const int b = 2, s = 12;
    const MatrixXd bo = random_mat(rng, b, kT);
    const MatrixXd ba = random_mat(rng, b, kT);
    MatrixXd go, ga;
    losses::tc_loss(bo, ba, s, &go, &ga);
    auto f = [&](const VectorXd& v) {
      MatrixXd a(b, kT), c(b, kT);
      unpack2(v, &a, &c);
      return losses::tc_loss(a, c, s);
    };
    return max_rel_err(f, pack2(bo, ba), pack2(go, ga));
  }));

  out.push_back(run_case("pe", seed_base + 7, seeds, [](Rng& rng) {
    const double pi_floor = 0.1;
    std::vector<MatrixXd> tasks;
    MatrixXd zp;
    double raw = 0.0;
    do {
      tasks.clear();
      for (int i = 0; i < 4; ++i) tasks.push_back(random_mat(rng, kB, kD));
      zp = random_mat(rng, kB, kD);
      losses::pe_loss(tasks, zp, pi_floor, nullptr, nullptr, &raw);
    } while (raw < pi_floor + 1e-3);  // keep clear of the clamp
    std::vector<MatrixXd> gt;
    MatrixXd gp;
    losses::pe_loss(tasks, zp, pi_floor, &gt, &gp);

    const std::size_t n_task = tasks.size();
    VectorXd x(static_cast<Eigen::Index>((n_task + 1) * kB * kD));
    VectorXd g(x.size());
    for (std::size_t k = 0; k < n_task; ++k) {
      Eigen::Map<MatrixXd>(x.data() + k * kB * kD, kB, kD) = tasks[k];
      Eigen::Map<MatrixXd>(g.data() + k * kB * kD, kB, kD) = gt[k];
    }
    Eigen::Map<MatrixXd>(x.data() + n_task * kB * kD, kB, kD) = zp;
    Eigen::Map<MatrixXd>(g.data() + n_task * kB * kD, kB, kD) = gp;

    auto f = [&](const VectorXd& v) {
      std::vector<MatrixXd> ts(n_task);
      for (std::size_t k = 0; k < n_task; ++k)
        ts[k] = Eigen::Map<const MatrixXd>(v.data() + k * kB * kD, kB, kD);
      const MatrixXd p =
          Eigen::Map<const MatrixXd>(v.data() + n_task * kB * kD, kB, kD);
      return losses::pe_loss(ts, p, pi_floor);
    };
    return max_rel_err(f, x, g);
  }));

  out.push_back(run_case("neg_pearson", seed_base + 8, seeds, [](Rng& rng) {
    VectorXd pred(kT), truth(kT);
    for (int i = 0; i < kT; ++i) {
      pred(i) = rng.normal();
      truth(i) = rng.normal();
    }
    VectorXd g;
    losses::neg_pearson(pred, truth, &g);
    auto f = [&](const VectorXd& v) { return losses::neg_pearson(v, truth); };
    return max_rel_err(f, pred, g);
  }));

  out.push_back(run_case("cross_entropy", seed_base + 9, seeds, [](Rng& rng) {
    MatrixXd logits = random_mat(rng, kB, kD);
    std::vector<int> targets(kB);
    for (int i = 0; i < kB; ++i)
      targets[i] = static_cast<int>(rng.uniform_int(0, kD - 1));
    MatrixXd g;
    losses::cross_entropy(logits, targets, &g);
    auto f = [&](const VectorXd& v) {
      const MatrixXd m = Eigen::Map<const MatrixXd>(v.data(), kB, kD);
      return losses::cross_entropy(m, targets);
    };
    const VectorXd x = Eigen::Map<const VectorXd>(logits.data(), logits.size());
    const VectorXd ga = Eigen::Map<const VectorXd>(g.data(), g.size());
    return max_rel_err(f, x, ga);
  }));

  return out;
}

}  // namespace gap::gradcheck

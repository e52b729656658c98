#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "gap/augment.hpp"
#include "gap/common.hpp"
#include "gap/gradcheck.hpp"
#include "gap/losses.hpp"
#include "gap/signal.hpp"
#include "gap/synth.hpp"

using namespace gap;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace ls = gap::losses;

namespace {

MatrixXd random_mat(Rng& rng, int r, int c) {
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Brute-force SVD through the eigendecomposition of A A^T / A^T A,
// independent of the JacobiSVD path used by the implementation.
void eig_svd(const MatrixXd& a, MatrixXd* u, VectorXd* s, MatrixXd* v) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a * a.transpose());
  const Eigen::Index k = std::min(a.rows(), a.cols());
  u->resize(a.rows(), k);
  s->resize(k);
  v->resize(a.cols(), k);
  // Eigenvalues ascend; take the top k in descending order.
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index src = a.rows() - 1 - j;
    const double lambda = std::max(es.eigenvalues()(src), 0.0);
    (*s)(j) = std::sqrt(lambda);
    u->col(j) = es.eigenvectors().col(src);
    if ((*s)(j) > 1e-12)
      v->col(j) = a.transpose() * u->col(j) / (*s)(j);
    else
      v->col(j).setZero();
  }
}

double ssa_oracle(const MatrixXd& zo, const MatrixXd& za) {
  MatrixXd uo, vo, ua, va;
  VectorXd so, sa;
  eig_svd(zo, &uo, &so, &vo);
  eig_svd(za, &ua, &sa, &va);
  const MatrixXd r_oa = uo * sa.asDiagonal() * vo.transpose();
  const MatrixXd r_ao = ua * so.asDiagonal() * va.transpose();
  return (r_oa - r_ao).norm();
}

}  // namespace

TEST_CASE("flatten_block examples") {
  // Identical batches give identical flattened features.
  Rng rng(1);
  std::vector<Tensor> fo, fa;
  for (int i = 0; i < 4; ++i) {
    Tensor t({2, 8, 3});
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = rng.normal();
    fo.push_back(t);
    fa.push_back(t);
  }
  auto fr = ls::flatten_block(fo, fa);
  CHECK((fr.zo - fr.za).norm() == doctest::Approx(0.0));
  // D = T*C = 8*2.
  CHECK(fr.zo.rows() == 4);
  CHECK(fr.zo.cols() == 16);

  // Constant input standardizes to zero.
  std::vector<Tensor> ones_o, ones_a;
  for (int i = 0; i < 3; ++i) {
    Tensor t({1, 2, 2});
    t.fill(1.0);
    ones_o.push_back(t);
    ones_a.push_back(t);
  }
  auto fr1 = ls::flatten_block(ones_o, ones_a);
  CHECK(fr1.zo.norm() == doctest::Approx(0.0));
  CHECK(fr1.za.norm() == doctest::Approx(0.0));
}

TEST_CASE("flatten_block backward matches finite differences") {
  Rng rng(2);
  std::vector<Tensor> fo, fa;
  for (int i = 0; i < 2; ++i) {
    Tensor a({2, 3, 2}), b({2, 3, 2});
    for (std::size_t j = 0; j < a.size(); ++j) {
      a[j] = rng.normal();
      b[j] = rng.normal();
    }
    fo.push_back(a);
    fa.push_back(b);
  }
  // Scalar probe: L = sum of zo .* w1 + za .* w2 for fixed random weights.
  auto fr = ls::flatten_block(fo, fa);
  const MatrixXd w1 = random_mat(rng, fr.zo.rows(), fr.zo.cols());
  const MatrixXd w2 = random_mat(rng, fr.zo.rows(), fr.zo.cols());
  std::vector<Tensor> dfo, dfa;
  ls::flatten_block_backward(fr, w1, w2, &dfo, &dfa);

  auto eval = [&](const std::vector<Tensor>& o, const std::vector<Tensor>& a) {
    auto r = ls::flatten_block(o, a);
    return (r.zo.cwiseProduct(w1)).sum() + (r.za.cwiseProduct(w2)).sum();
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < fo[i].size(); j += 3) {
      auto o = fo;
      o[i][j] += h;
      const double fp = eval(o, fa);
      o[i][j] -= 2 * h;
      const double fm = eval(o, fa);
      const double fd = (fp - fm) / (2 * h);
      CHECK(dfo[i][j] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("ssa_loss identities and frozen diagonal example") {
  Rng rng(3);
  const MatrixXd z = random_mat(rng, 4, 6);
  CHECK(ls::ssa_loss(z, z) == doctest::Approx(0.0).epsilon(1e-12));

  // Diagonal example: swap gives diag(2,2) vs diag(3,1), residual sqrt(2).
  MatrixXd zo = MatrixXd::Zero(2, 2), za = MatrixXd::Zero(2, 2);
  zo(0, 0) = 3.0;
  zo(1, 1) = 1.0;
  za(0, 0) = 2.0;
  za(1, 1) = 2.0;
  const double v = ls::ssa_loss(zo, za);
  CHECK(v == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(v == doctest::Approx(ssa_oracle(zo, za)).epsilon(1e-9));

  // Symmetry in (o, a).
  const MatrixXd a = random_mat(rng, 4, 6), b = random_mat(rng, 4, 6);
  CHECK(ls::ssa_loss(a, b) == doctest::Approx(ls::ssa_loss(b, a)).epsilon(1e-9));

  // Cross-check against the eigendecomposition oracle on random input.
  for (int trial = 0; trial < 5; ++trial) {
    const MatrixXd x = random_mat(rng, 3, 5), y = random_mat(rng, 3, 5);
    CHECK(ls::ssa_loss(x, y) == doctest::Approx(ssa_oracle(x, y)).epsilon(1e-6));
  }
}

TEST_CASE("sda_loss identities, frozen example, and quadratic scaling") {
  Rng rng(4);
  const MatrixXd z = random_mat(rng, 4, 6);
  CHECK(ls::sda_loss(z, z) == doctest::Approx(0.0).epsilon(1e-12));

  MatrixXd zo(2, 2), za(2, 2);
  zo << 1, 0, 0, 1;
  za << 1, 1, 0, 1;
  CHECK(ls::sda_loss(zo, za) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));

  // Scaling za by c scales its Gram matrix by c^2.
  const MatrixXd a = random_mat(rng, 3, 5), b = random_mat(rng, 3, 5);
  const double c = 1.7;
  const MatrixXd mo = a * a.transpose();
  const MatrixXd ma = b * b.transpose();
  CHECK(ls::sda_loss(a, c * b) ==
        doctest::Approx((mo - c * c * ma).norm()).epsilon(1e-9));
}

TEST_CASE("fc losses: identity, uniform offset, and the shift contrast") {
  VectorXd po(4), pa(4);
  po << 70, 80, 90, 100;
  pa = po;
  CHECK(ls::fc_scalar_loss(po, pa) == doctest::Approx(0.0));
  pa.array() += 3.0;
  CHECK(ls::fc_scalar_loss(po, pa) == doctest::Approx(3.0));

  // Same waveform, time-shifted: frequency-consistency stays ~0 while the
  // time-domain Pearson distance is clearly positive.
  const auto bvp = synth::synth_bvp(72.0, 14.0, 12.0, 30.0, 0.0);
  const int t = 256, shift = 11;
  MatrixXd bo(1, t), ba(1, t);
  for (int i = 0; i < t; ++i) {
    bo(0, i) = bvp[i];
    ba(0, i) = bvp[i + shift];
  }
  const double fc = ls::fc_bvp_loss(bo, ba, 30.0);
  CHECK(fc < 0.05);
  const double np =
      ls::neg_pearson(bo.row(0).transpose(), ba.row(0).transpose());
  CHECK(np > 0.1);

  // Identical pair.
  CHECK(ls::fc_bvp_loss(bo, bo, 30.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("tic and tc identities") {
  Rng rng(5);
  MatrixXd b(2, 64);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 64; ++j) b(i, j) = rng.normal();
  CHECK(ls::tic_loss(b, b, 12) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ls::tc_loss(b, b, 12) == doctest::Approx(0.0).epsilon(1e-12));

  // Orthogonal self-similarity matrices: [1,1,1] vs [1,-1,1] at s=2 give
  // all-ones vs checkerboard, flattened dot exactly zero.
  MatrixXd xo(1, 3), xa(1, 3);
  xo << 1, 1, 1;
  xa << 1, -1, 1;
  CHECK(ls::tic_loss(xo, xa, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("component-scaled pair: tic below one while fc stays near zero") {
  const auto bvp = synth::synth_bvp(66.0, 13.0, 256.0 / 30.0, 30.0, 0.2);
  MatrixXd bo(1, 256), ba(1, 256);
  std::vector<double> row(256);
  for (int i = 0; i < 256; ++i) row[i] = 0.5 + 0.1 * bvp[i];
  const double mu = signal::mean(row);
  const double sd = signal::stdev_population(row);
  for (int i = 0; i < 256; ++i) {
    bo(0, i) = row[i];
    ba(0, i) = 2.0 * (row[i] - mu) / sd + 2.0 * mu;
  }
  const double tic = ls::tic_loss(bo, ba, 30);
  CHECK(tic < 1.0 - 1e-6);
  CHECK(ls::fc_bvp_loss(bo, ba, 30.0) < 1e-6);
}

TEST_CASE("pe_loss floor semantics") {
  // Perfectly orthonormal construction: Gram = I for every task, raw = 0,
  // the floor pi = 0.1 is returned with zero gradients.
  const int b = 3, d = 6;
  MatrixXd zp = MatrixXd::Zero(b, d);
  for (int i = 0; i < b; ++i) zp(i, i) = 1.0;
  std::vector<MatrixXd> tasks(4, zp);
  std::vector<MatrixXd> gt;
  MatrixXd gp;
  double raw = -1;
  const double v = ls::pe_loss(tasks, zp, 0.1, &gt, &gp, &raw);
  CHECK(raw == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v == doctest::Approx(0.1));
  CHECK(gp.norm() == 0.0);
  for (const auto& g : gt) CHECK(g.norm() == 0.0);

  // B=1 with orthogonal unit vectors: Gram = [0], residual 1 per task.
  MatrixXd zp1 = MatrixXd::Zero(1, 4), zt1 = MatrixXd::Zero(1, 4);
  zp1(0, 0) = 1.0;
  zt1(0, 1) = 1.0;
  double raw1 = -1;
  ls::pe_loss({zt1}, zp1, 0.1, nullptr, nullptr, &raw1);
  CHECK(raw1 == doctest::Approx(1.0).epsilon(1e-12));

  // Above the floor: value passes through and gradients are nonzero.
  Rng rng(6);
  std::vector<MatrixXd> rt;
  for (int i = 0; i < 4; ++i) rt.push_back(random_mat(rng, 4, 6));
  const MatrixXd rp = random_mat(rng, 4, 6);
  double raw2 = -1;
  const double v2 = ls::pe_loss(rt, rp, 0.1, &gt, &gp, &raw2);
  CHECK(v2 == doctest::Approx(raw2));
  CHECK(v2 >= 0.1);
  CHECK(gp.norm() > 0.0);

  // Return value never drops below the floor.
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<MatrixXd> ts;
    for (int i = 0; i < 4; ++i) ts.push_back(random_mat(rng, 3, 5));
    CHECK(ls::pe_loss(ts, random_mat(rng, 3, 5), 0.37) >= 0.37);
  }
}

TEST_CASE("neg_pearson examples") {
  Rng rng(7);
  VectorXd x(64);
  for (int i = 0; i < 64; ++i) x(i) = rng.normal();
  CHECK(ls::neg_pearson(x, x) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ls::neg_pearson(-x, x) == doctest::Approx(2.0).epsilon(1e-12));
  VectorXd shifted = x.array() + 5.0;
  CHECK(ls::neg_pearson(shifted, x) == doctest::Approx(0.0).epsilon(1e-12));
  VectorXd flat = VectorXd::Constant(64, 1.0);
  CHECK_THROWS_AS(ls::neg_pearson(flat, x), NumericError);
}

TEST_CASE("l1_masked ignores zero-weight entries") {
  VectorXd pred(3), truth(3), w(3);
  pred << 10, 20, 30;
  truth << 12, 25, 100;
  w << 1, 1, 0;
  CHECK(ls::l1_masked(pred, truth, w) == doctest::Approx((2.0 + 5.0) / 2.0));
  VectorXd g;
  ls::l1_masked(pred, truth, w, &g);
  CHECK(g(2) == 0.0);
}

TEST_CASE("composite ramp and mode requirements") {
  ls::LossWeights w;
  ls::ComponentLosses parts;
  parts.ssa = 1.0;
  parts.sda = 1.0;
  parts.lp = 1.0;
  parts.fc = 1.0;
  parts.pe = 1.0;
  parts.tc = 1.0;
  parts.supervised = 5.0;

  double lambda = -1;
  const double v0 =
      ls::composite(parts, w, 0, 1000, gap::Mode::kMssdg, &lambda);
  CHECK(lambda == doctest::Approx(0.0));
  CHECK(v0 == doctest::Approx(5.0));

  ls::composite(parts, w, 1000, 1000, gap::Mode::kMssdg, &lambda);
  CHECK(lambda == doctest::Approx(0.9999092).epsilon(1e-6));

  // TTPA with all self-supervised losses zero is zero.
  ls::ComponentLosses t;
  t.ssa = t.sda = t.lp = t.fc = t.tic = 0.0;
  CHECK(ls::composite(t, w, 0, 1, gap::Mode::kTtpa) == doctest::Approx(0.0));

  // Missing components are named.
  ls::ComponentLosses missing = parts;
  missing.tc.reset();
  try {
    ls::composite(missing, w, 0, 1, gap::Mode::kMssdg);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("tc") != std::string::npos);
  }
}

TEST_CASE("zero-at-identity across the whole loss suite") {
  Rng rng(8);
  const MatrixXd z = random_mat(rng, 4, 8);
  MatrixXd bvp(2, 128);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 128; ++j)
      bvp(i, j) = std::sin(0.2 * j + i) + 0.1 * rng.normal();
  VectorXd scalars(4);
  scalars << 70, 15, 97, 80;

  CHECK(ls::ssa_loss(z, z) == doctest::Approx(0.0));
  CHECK(ls::sda_loss(z, z) == doctest::Approx(0.0));
  CHECK(ls::fc_scalar_loss(scalars, scalars) == doctest::Approx(0.0));
  CHECK(ls::fc_bvp_loss(bvp, bvp, 30.0) == doctest::Approx(0.0));
  CHECK(ls::tc_loss(bvp, bvp, 20) == doctest::Approx(0.0));
  CHECK(ls::tic_loss(bvp, bvp, 20) == doctest::Approx(1.0));
  CHECK(ls::neg_pearson(bvp.row(0).transpose(), bvp.row(0).transpose()) ==
        doctest::Approx(0.0));
}

TEST_CASE("psd_forward matches the signal-module spectrum") {
  const auto bvp = synth::synth_bvp(72.0, 14.0, 256.0 / 30.0, 30.0, 0.0);
  VectorXd x(256);
  for (int i = 0; i < 256; ++i) x(i) = bvp[i];
  const auto psd = ls::psd_forward(x, 30.0, 0.66, 4.0);
  const auto sp = signal::power_spectrum(bvp, 30.0, 0.66, 4.0, 8, true);
  REQUIRE(static_cast<std::size_t>(psd.q.size()) == sp.power.size());
  for (std::size_t i = 0; i < sp.power.size(); ++i)
    CHECK(psd.q(i) == doctest::Approx(sp.power[i]).epsilon(1e-9));
}

TEST_CASE("gradient check: one quick seed across every loss") {
  const auto results = gradcheck::check_all_losses(99, 1);
  for (const auto& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}

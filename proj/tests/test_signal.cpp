#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gap/common.hpp"
#include "gap/signal.hpp"
#include "gap/synth.hpp"

using namespace gap;
namespace sig = gap::signal;

namespace {
constexpr double kTau = 6.28318530717958647692;

std::vector<double> sine(double freq, double fps, std::size_t n,
                         double phase = 0.0, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(kTau * freq * i / fps + phase);
  return x;
}
}  // namespace

TEST_CASE("power_spectrum finds a pure tone within one refined bin") {
  const auto x = sine(1.2, 30.0, 256);
  const auto sp = sig::power_spectrum(x, 30.0, 0.66, 4.0, 8, false);
  std::size_t best = 0;
  for (std::size_t i = 1; i < sp.power.size(); ++i)
    if (sp.power[i] > sp.power[best]) best = i;
  CHECK(std::abs(sp.freqs[best] - 1.2) <= 0.015);
}

TEST_CASE("power_spectrum normalization sums to one") {
  const auto x = sine(1.0, 30.0, 256);
  const auto sp = sig::power_spectrum(x, 30.0, 0.66, 4.0, 8, true);
  double s = 0.0;
  for (double p : sp.power) s += p;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("constant offsets do not change the normalized spectrum") {
  auto x = sine(1.5, 30.0, 256);
  auto y = x;
  for (double& v : y) v += 10.0;
  const auto a = sig::power_spectrum(x, 30.0, 0.66, 4.0, 8, true);
  const auto b = sig::power_spectrum(y, 30.0, 0.66, 4.0, 8, true);
  for (std::size_t i = 0; i < a.power.size(); ++i)
    CHECK(a.power[i] == doctest::Approx(b.power[i]).epsilon(1e-9));
}

TEST_CASE("constant signals are rejected as degenerate") {
  std::vector<double> x(256, 3.0);
  CHECK_THROWS_AS(sig::power_spectrum(x, 30.0, 0.66, 4.0), NumericError);
  CHECK_THROWS_AS(sig::dominant_frequency(x, 30.0, 0.66, 4.0), NumericError);
}

TEST_CASE("spectrum_kl identities") {
  const auto x = sine(1.2, 30.0, 256);
  const auto q = sig::power_spectrum(x, 30.0, 0.66, 4.0, 8, true);
  CHECK(sig::spectrum_kl(q, q) == doctest::Approx(0.0).epsilon(1e-12));

  // Two-bin example: 0.5 ln 2 + 0.5 ln(2/3).
  sig::Spectrum qa, qo;
  qa.freqs = {1.0, 2.0};
  qa.power = {0.5, 0.5};
  qa.normalized = true;
  qo.freqs = {1.0, 2.0};
  qo.power = {0.25, 0.75};
  qo.normalized = true;
  CHECK(sig::spectrum_kl(qa, qo) == doctest::Approx(0.143841036).epsilon(1e-6));
  // Asymmetry on the same pair.
  CHECK(sig::spectrum_kl(qa, qo) != doctest::Approx(sig::spectrum_kl(qo, qa)));
  // Nonnegativity.
  CHECK(sig::spectrum_kl(qo, qa) >= 0.0);

  sig::Spectrum bad = qo;
  bad.freqs = {1.0, 2.5};
  CHECK_THROWS_AS(sig::spectrum_kl(qa, bad), ValidationError);
}

TEST_CASE("dominant_frequency matches the synthetic pulse oracle") {
  const auto bvp = synth::synth_bvp(84.0, 15.0, 256.0 / 30.0, 30.0, 0.3);
  const double f = sig::dominant_frequency(bvp, 30.0, 0.66, 4.0);
  CHECK(std::abs(f - 1.4) <= 30.0 / 2048.0 + 1e-9);

  // Respiratory rate from the AM envelope.
  const auto long_bvp = synth::synth_bvp(72.0, 15.0, 20.0, 30.0, 0.0);
  const auto env = sig::amplitude_envelope(long_bvp, 30.0);
  const double fr = sig::dominant_frequency(env, 30.0, 0.1, 0.5);
  CHECK(std::abs(fr - 0.25) <= 30.0 / (8.0 * long_bvp.size()) + 1e-9);
}

TEST_CASE("self_similarity hand example and invariances") {
  const std::vector<double> x = {1.0, 0.0, 1.0, 0.0};
  const auto ssm = sig::self_similarity(x, 2);
  REQUIRE(ssm.m.rows() == 3);
  const double expect[3][3] = {{1, 0, 1}, {0, 1, 0}, {1, 0, 1}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(ssm.m(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-12));

  Rng rng(5);
  std::vector<double> y(64);
  for (auto& v : y) v = rng.normal();
  const auto a = sig::self_similarity(y, 8);
  for (int i = 0; i < a.m.rows(); ++i) {
    CHECK(a.m(i, i) == doctest::Approx(1.0));
    for (int j = 0; j < a.m.cols(); ++j) {
      CHECK(a.m(i, j) == doctest::Approx(a.m(j, i)).epsilon(1e-12));
      CHECK(a.m(i, j) <= 1.0);
      CHECK(a.m(i, j) >= -1.0);
    }
  }
  auto y3 = y;
  for (auto& v : y3) v *= 3.0;
  const auto b = sig::self_similarity(y3, 8);
  CHECK((a.m - b.m).norm() == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(sig::self_similarity({1.0, 2.0}, 5), ValidationError);
}

TEST_CASE("component scaling changes the SSM but not the normalized PSD") {
  // The Fig e contrast behind the time-domain inconsistency loss: an affine
  // amplitude change alters window cosine structure while the normalized
  // non-DC spectrum is untouched.
  auto row = synth::synth_bvp(72.0, 12.0, 256.0 / 30.0, 30.0, 0.0);
  for (double& v : row) v = 0.5 + 0.1 * v;  // nonzero mean, like an STMap row
  const double mu = sig::mean(row);
  const double sd = sig::stdev_population(row);
  auto scaled = row;
  const double g = 2.0;
  for (double& v : scaled) v = g * (v - mu) / sd + g * mu;

  const auto pa = sig::power_spectrum(row, 30.0, 0.2, 14.0, 8, true);
  const auto pb = sig::power_spectrum(scaled, 30.0, 0.2, 14.0, 8, true);
  for (std::size_t i = 0; i < pa.power.size(); ++i)
    CHECK(pa.power[i] == doctest::Approx(pb.power[i]).epsilon(1e-9));

  const auto sa = sig::self_similarity(row, 30);
  const auto sb = sig::self_similarity(scaled, 30);
  CHECK((sa.m - sb.m).norm() > 1e-3);
}

TEST_CASE("hrv identities and the LF-modulated oracle") {
  // IBI modulated at 0.10 Hz; LF should dominate.
  std::vector<double> times, ibis;
  double t = 0.0;
  for (int i = 0; i < 120; ++i) {
    const double ibi = 1.0 + 0.06 * std::sin(kTau * 0.10 * t);
    t += ibi;
    times.push_back(t);
    ibis.push_back(ibi);
  }
  const auto h = sig::hrv_from_ibi(times, ibis);
  CHECK(h.lfnu + h.hfnu == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(h.lfnu > 0.9);

  // Metronomic IBI: no variability.
  std::vector<double> ct, ci;
  for (int i = 0; i < 120; ++i) {
    ct.push_back(static_cast<double>(i));
    ci.push_back(1.0);
  }
  CHECK_THROWS_AS(sig::hrv_from_ibi(ct, ci), NumericError);
}

TEST_CASE("hrv_metrics runs peak detection end to end") {
  // 60 s pulse with strong LF heart-rate modulation.
  synth::VitalsTrajectory traj;
  traj.hr_bpm = 70.0;
  traj.rr_bpm = 14.0;
  traj.hr_mod_depth = 0.08;
  traj.hr_mod_freq = 0.1;
  const auto bvp = synth::synth_bvp_traj(traj, 60.0, 30.0, 0.0);
  const auto h = sig::hrv_metrics(bvp, 30.0);
  CHECK(h.lfnu + h.hfnu == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(h.lfnu > 0.5);
}

TEST_CASE("cubic spline interpolates knots exactly and clamps outside") {
  const std::vector<double> t = {0.0, 1.0, 2.5, 4.0};
  const std::vector<double> y = {1.0, -2.0, 0.5, 3.0};
  sig::CubicSpline s(t, y);
  for (std::size_t i = 0; i < t.size(); ++i)
    CHECK(s.eval(t[i]) == doctest::Approx(y[i]).epsilon(1e-12));
  CHECK(s.eval(-5.0) == doctest::Approx(y.front()));
  CHECK(s.eval(99.0) == doctest::Approx(y.back()));
}

TEST_CASE("band_pass removes out-of-band energy") {
  auto x = sine(1.0, 30.0, 300);
  const auto slow = sine(0.1, 30.0, 300, 0.0, 5.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += slow[i] + 2.0;
  const auto y = sig::band_pass(x, 30.0, 0.66, 4.0);
  CHECK(std::abs(sig::mean(y)) < 1e-9);
  const double f = sig::dominant_frequency(y, 30.0, 0.05, 14.0);
  CHECK(f == doctest::Approx(1.0).epsilon(0.02));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gap/augment.hpp"
#include "gap/classical.hpp"
#include "gap/common.hpp"
#include "gap/signal.hpp"
#include "gap/stmap.hpp"
#include "gap/synth.hpp"

using namespace gap;
namespace ag = gap::augment;

namespace {

stmap::STMap make_clip_map(double hr, Rng& rng) {
  synth::SubjectProfile s;
  s.subject_id = "s0";
  synth::DomainProfile d;
  d.domain_id = "d";
  synth::VitalsTrajectory v;
  v.hr_bpm = hr;
  const auto res = synth::generate_clip(s, d, v, 10.0, rng);
  return stmap::traces_to_stmap(res.clip);
}

}  // namespace

TEST_CASE("temporal_offset identity and clamping") {
  Rng rng(1);
  const auto clip = make_clip_map(66.0, rng);
  bool clamped = false;
  const auto x0 = ag::temporal_offset(clip, 10, 256, 0, &clamped);
  const auto x1 = ag::temporal_offset(clip, 10, 256, 0, &clamped);
  CHECK_FALSE(clamped);
  for (std::size_t i = 0; i < x0.data.size(); ++i)
    CHECK(x0.data[i] == x1.data[i]);
  CHECK(x0.start_index == 10);

  // 300-frame clip, start 40: max shift is 4.
  const auto x2 = ag::temporal_offset(clip, 40, 256, 30, &clamped);
  CHECK(clamped);
  CHECK(x2.start_index == 44);
}

TEST_CASE("temporal offset leaves the normalized PSD nearly unchanged") {
  Rng rng(2);
  const auto clip = make_clip_map(60.0, rng);
  const auto xo = ag::temporal_offset(clip, 0, 256, 0);
  const auto xa = ag::temporal_offset(clip, 0, 256, 30);

  auto row_psd = [](const stmap::STMap& m) {
    std::vector<double> g(m.t());
    for (std::size_t t = 0; t < m.t(); ++t) g[t] = m.data.at(t, 3, 1);
    return signal::power_spectrum(g, 30.0, 0.66, 4.0, 8, true);
  };
  const auto pa = row_psd(xo);
  const auto pb = row_psd(xa);
  // Kolmogorov distance between the normalized spectra stays under 2% and
  // the dominant bin does not move (stationary signal).
  double ks = 0.0, ca = 0.0, cb = 0.0;
  std::size_t ba = 0, bb = 0;
  for (std::size_t i = 0; i < pa.power.size(); ++i) {
    ca += pa.power[i];
    cb += pb.power[i];
    ks = std::max(ks, std::abs(ca - cb));
    if (pa.power[i] > pa.power[ba]) ba = i;
    if (pb.power[i] > pb.power[bb]) bb = i;
  }
  CHECK(ks < 0.02);
  CHECK(ba == bb);
}

TEST_CASE("spatial permutation preserves the row multiset and the ROI mean") {
  Rng rng(3);
  const auto clip = make_clip_map(84.0, rng);
  const auto xo = ag::temporal_offset(clip, 0, 256, 0);
  const auto perm = ag::random_permutation(xo.w(), rng);
  const auto xa = ag::spatial_permutation(xo, perm);

  // Multiset preserved: row j lands at perm[j].
  for (std::size_t j = 0; j < xo.w(); ++j)
    for (std::size_t t = 0; t < xo.t(); t += 17)
      CHECK(xa.data.at(t, perm[j], 1) == xo.data.at(t, j, 1));

  // ROI-mean trace unchanged => GREEN HR unchanged.
  const auto g0 = classical::green_pulse(xo);
  const auto g1 = classical::green_pulse(xa);
  CHECK(g0.hr_bpm == doctest::Approx(g1.hr_bpm).epsilon(1e-12));

  // Identity and double-reversal.
  std::vector<std::size_t> id(xo.w());
  for (std::size_t i = 0; i < id.size(); ++i) id[i] = i;
  const auto same = ag::spatial_permutation(xo, id);
  for (std::size_t i = 0; i < xo.data.size(); ++i)
    CHECK(same.data[i] == xo.data[i]);

  std::vector<std::size_t> rev(xo.w());
  for (std::size_t i = 0; i < rev.size(); ++i) rev[i] = rev.size() - 1 - i;
  const auto twice = ag::spatial_permutation(ag::spatial_permutation(xo, rev), rev);
  for (std::size_t i = 0; i < xo.data.size(); ++i)
    CHECK(twice.data[i] == xo.data[i]);

  std::vector<std::size_t> bad(xo.w(), 0);
  CHECK_THROWS_AS(ag::spatial_permutation(xo, bad), ValidationError);
}

TEST_CASE("component scaling moment contract") {
  // Row with mean 2, std 4, gamma 1: output mean 2, output std exactly 1.
  stmap::STMap m;
  m.data = Tensor({64, 1, 3});
  Rng rng(4);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> row(64);
    for (auto& v : row) v = rng.normal();
    const double mu = signal::mean(row);
    const double sd = signal::stdev_population(row);
    for (std::size_t t = 0; t < 64; ++t)
      m.data.at(t, 0, c) = 2.0 + 4.0 * (row[t] - mu) / sd;
  }
  const auto out = ag::component_scaling(m, 1.0);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> row(64);
    for (std::size_t t = 0; t < 64; ++t) row[t] = out.data.at(t, 0, c);
    CHECK(signal::mean(row) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(signal::stdev_population(row) == doctest::Approx(1.0).epsilon(1e-9));
  }

  // gamma=2 on a row with mean 0.5: output mean 1.0, std 2.0.
  stmap::STMap m2;
  m2.data = Tensor({64, 1, 3});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 64; ++t)
      m2.data.at(t, 0, c) = 0.5 + 0.1 * std::sin(0.3 * t + c);
  // Recenter each row to mean exactly 0.5.
  for (std::size_t c = 0; c < 3; ++c) {
    double mu = 0;
    for (std::size_t t = 0; t < 64; ++t) mu += m2.data.at(t, 0, c);
    mu /= 64.0;
    for (std::size_t t = 0; t < 64; ++t) m2.data.at(t, 0, c) += 0.5 - mu;
  }
  const auto out2 = ag::component_scaling(m2, 2.0);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> row(64);
    for (std::size_t t = 0; t < 64; ++t) row[t] = out2.data.at(t, 0, c);
    CHECK(signal::mean(row) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(signal::stdev_population(row) == doctest::Approx(2.0).epsilon(1e-9));
  }
}

TEST_CASE("component scaling leaves the normalized non-DC PSD unchanged") {
  Rng rng(6);
  const auto clip = make_clip_map(75.0, rng);
  const auto xo = ag::temporal_offset(clip, 0, 256, 0);
  for (double gamma : {0.8, 1.3, 2.2}) {
    const auto xa = ag::component_scaling(xo, gamma);
    for (std::size_t j = 0; j < xo.w(); j += 5) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> a(xo.t()), b(xo.t());
        for (std::size_t t = 0; t < xo.t(); ++t) {
          a[t] = xo.data.at(t, j, c);
          b[t] = xa.data.at(t, j, c);
        }
        const auto pa = signal::power_spectrum(a, 30.0, 0.1, 14.9, 8, true);
        const auto pb = signal::power_spectrum(b, 30.0, 0.1, 14.9, 8, true);
        for (std::size_t i = 0; i < pa.power.size(); ++i)
          CHECK(std::abs(pa.power[i] - pb.power[i]) < 1e-9);
      }
    }
  }
}

TEST_CASE("degenerate rows are skipped and counted") {
  stmap::STMap m;
  m.data = Tensor({32, 2, 3});
  for (std::size_t t = 0; t < 32; ++t)
    for (std::size_t c = 0; c < 3; ++c) {
      m.data.at(t, 0, c) = 0.5;  // constant row
      m.data.at(t, 1, c) = 0.5 + 0.1 * std::sin(0.4 * t + c);
    }
  int degenerate = 0;
  const auto out = ag::component_scaling(m, 1.7, ag::ScalingMode::kAsWritten,
                                         &degenerate);
  CHECK(degenerate == 3);
  for (std::size_t t = 0; t < 32; ++t)
    CHECK(out.data.at(t, 0, 0) == 0.5);  // untouched
}

TEST_CASE("ratio-preserving mode is a pure gain") {
  stmap::STMap m;
  m.data = Tensor({16, 1, 3});
  Rng rng(8);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = rng.uniform();
  const auto out =
      ag::component_scaling(m, 1.5, ag::ScalingMode::kRatioPreserving);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(1.5 * m.data[i]).epsilon(1e-12));
}

TEST_CASE("make_pair: all probabilities zero gives an identity record") {
  Rng rng(10);
  const auto clip = make_clip_map(70.0, rng);
  stmap::VitalLabels labels;
  ag::AugmentConfig cfg;
  cfg.p_offset = cfg.p_perm = cfg.p_scale = 0.0;
  Rng arng(99);
  const auto pair = ag::make_pair(clip, 20, 256, &labels, cfg, arng, 64);
  CHECK_FALSE(pair.record.applied_offset);
  CHECK_FALSE(pair.record.applied_perm);
  CHECK_FALSE(pair.record.applied_scale);
  CHECK(pair.record.delta_t == 0);
  CHECK(pair.record.gamma == 1.0);
  for (std::size_t i = 0; i < pair.xo.data.size(); ++i)
    CHECK(pair.xa.data[i] == pair.xo.data[i]);
  // Shared label reference, not a copy.
  CHECK(pair.labels == &labels);
}

TEST_CASE("make_pair is reproducible and in range under a fixed seed") {
  Rng rng(11);
  const auto clip = make_clip_map(70.0, rng);
  stmap::VitalLabels labels;
  ag::AugmentConfig cfg;

  Rng a1(1234), a2(1234);
  const auto p1 = ag::make_pair(clip, 0, 256, &labels, cfg, a1, 64);
  const auto p2 = ag::make_pair(clip, 0, 256, &labels, cfg, a2, 64);
  CHECK(p1.record.delta_t == p2.record.delta_t);
  CHECK(p1.record.gamma == p2.record.gamma);
  CHECK(p1.record.perm == p2.record.perm);
  for (std::size_t i = 0; i < p1.xa.data.size(); ++i)
    CHECK(p1.xa.data[i] == p2.xa.data[i]);

  CHECK(p1.record.delta_t >= 0);
  CHECK(p1.record.delta_t <= 30);
  CHECK(p1.record.gamma >= 0.8);
  CHECK(p1.record.gamma <= 2.2);
  CHECK(p1.xo.t() == 256);
  CHECK(p1.xo.w() == 64);
  CHECK(p1.xa.w() == 64);
}

TEST_CASE("scaled pairs differ in SSM while the normalized PSD matches") {
  // The contrast the time-domain inconsistency loss feeds on.
  Rng rng(13);
  const auto clip = make_clip_map(66.0, rng);
  const auto xo = ag::temporal_offset(clip, 0, 256, 0);
  const auto xa = ag::component_scaling(xo, 2.0);

  std::vector<double> a(xo.t()), b(xo.t());
  for (std::size_t t = 0; t < xo.t(); ++t) {
    a[t] = xo.data.at(t, 7, 1);
    b[t] = xa.data.at(t, 7, 1);
  }
  const auto sa = signal::self_similarity(a, 30);
  const auto sb = signal::self_similarity(b, 30);
  CHECK((sa.m - sb.m).norm() > 0.0);

  const auto pa = signal::power_spectrum(a, 30.0, 0.1, 14.9, 8, true);
  const auto pb = signal::power_spectrum(b, 30.0, 0.1, 14.9, 8, true);
  for (std::size_t i = 0; i < pa.power.size(); ++i)
    CHECK(std::abs(pa.power[i] - pb.power[i]) < 1e-9);
}

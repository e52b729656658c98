#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gap/classical.hpp"
#include "gap/common.hpp"
#include "gap/signal.hpp"
#include "gap/synth.hpp"

using namespace gap;
namespace fs = std::filesystem;

namespace {

std::uint64_t hash_tree(const std::string& root) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = f.substr(root.size());
    h = fnv1a64(rel.data(), rel.size(), h);
    std::ifstream in(f, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    h = fnv1a64(data.data(), data.size(), h);
  }
  return h;
}

synth::SubjectProfile test_subject() {
  synth::SubjectProfile s;
  s.subject_id = "s0";
  s.spo2_intercept = 110.0;
  s.spo2_slope = -25.0;
  s.bvp_harmonic_phase = 0.4;
  return s;
}

}  // namespace

TEST_CASE("synth_bvp puts the dominant peak at the heart rate") {
  const auto bvp = synth::synth_bvp(60.0, 12.0, 256.0 / 30.0, 30.0, 0.0);
  REQUIRE(bvp.size() == 256);
  const double f = signal::dominant_frequency(bvp, 30.0, 0.3, 4.0);
  CHECK(std::abs(f - 1.0) <= 30.0 / 2048.0 + 1e-9);
  // Zero mean by construction.
  CHECK(std::abs(signal::mean(bvp)) < 1e-12);
}

TEST_CASE("harmonic phase changes the waveform but not the PSD magnitude") {
  const auto a = synth::synth_bvp(72.0, 15.0, 256.0 / 30.0, 30.0, 0.0);
  const auto b = synth::synth_bvp(72.0, 15.0, 256.0 / 30.0, 30.0, 3.14159265);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 1.0);

  const auto pa = signal::power_spectrum(a, 30.0, 0.3, 6.0, 8, true);
  const auto pb = signal::power_spectrum(b, 30.0, 0.3, 6.0, 8, true);
  // Windowed estimates of the same magnitude spectrum; the fundamental and
  // harmonic bins agree closely.
  std::size_t best = 0;
  for (std::size_t i = 1; i < pa.power.size(); ++i)
    if (pa.power[i] > pa.power[best]) best = i;
  CHECK(pa.power[best] == doctest::Approx(pb.power[best]).epsilon(2e-2));
}

TEST_CASE("respiratory AM creates sidebands at f_hr plus and minus f_rr") {
  // Analytic expansion of [1 + 0.25 sin(2 pi f_rr t)] sin(2 pi f_hr t):
  // components at f_hr with amplitude 1 and at f_hr +- f_rr with 0.125.
  const double hr = 66.0, rr = 18.0;
  const auto bvp = synth::synth_bvp(hr, rr, 40.0, 30.0, 0.0);
  const auto sp = signal::power_spectrum(bvp, 30.0, 0.4, 3.0, 8, false);
  const double f_hr = hr / 60.0, f_rr = rr / 60.0;

  auto power_at = [&](double f) {
    double best = 0.0;
    for (std::size_t i = 0; i < sp.freqs.size(); ++i)
      if (std::abs(sp.freqs[i] - f) < 0.02) best = std::max(best, sp.power[i]);
    return best;
  };
  const double p_main = power_at(f_hr);
  const double p_lo = power_at(f_hr - f_rr);
  const double p_hi = power_at(f_hr + f_rr);
  // Background point clear of every component (f_hr, f_hr +- f_rr, 2 f_hr,
  // 2 f_hr +- f_rr).
  const double p_bg = power_at(f_hr + 2.0 * f_rr);

  // Sidebands carry (0.125)^2 of the carrier power, far above background.
  CHECK(p_lo > 1e-3 * p_main);
  CHECK(p_hi > 1e-3 * p_main);
  CHECK(p_lo > 10.0 * p_bg);
  CHECK(p_hi > 10.0 * p_bg);
  CHECK(p_main > p_lo);
}

TEST_CASE("synth_bvp rejects out-of-range vitals") {
  CHECK_THROWS_AS(synth::synth_bvp(20.0, 12.0, 10.0), ValidationError);
  CHECK_THROWS_AS(synth::synth_bvp(72.0, 90.0, 10.0), ValidationError);
}

TEST_CASE("generate_clip hits the target RoR from the subject law") {
  // spo2 = 110 - 25 RoR at spo2 = 97  =>  RoR = 0.52.
  auto subject = test_subject();
  synth::DomainProfile dom;
  dom.domain_id = "clean";
  synth::VitalsTrajectory v;
  v.hr_bpm = 72.0;
  v.rr_bpm = 15.0;
  v.spo2_pct = 97.0;
  Rng rng(11);
  const auto res = synth::generate_clip(subject, dom, v, 10.0, rng);

  stmap::RoiTraceClip clean = res.clip;
  clean.traces = res.clean_traces;
  const auto rs = classical::ror_series(clean);
  REQUIRE(!rs.values.empty());
  double mean_ror = 0.0;
  for (double r : rs.values) mean_ror += r;
  mean_ror /= static_cast<double>(rs.values.size());
  CHECK(std::abs(mean_ror - 0.52) <= 0.01);

  // Applying the law to the measured RoR recovers the SpO2 target within 0.5%.
  const double spo2 = subject.spo2_intercept + subject.spo2_slope * mean_ror;
  CHECK(std::abs(spo2 - 97.0) <= 0.5);
}

TEST_CASE("without motion every clean row is the same waveform up to gain") {
  auto subject = test_subject();
  synth::DomainProfile dom;
  dom.domain_id = "clean";
  dom.motion_rate = 0.0;
  synth::VitalsTrajectory v;
  Rng rng(3);
  const auto res = synth::generate_clip(subject, dom, v, 9.0, rng, 8);
  const auto& tr = res.clean_traces;
  const std::size_t f = tr.dim(1);
  for (std::size_t w = 1; w < tr.dim(0); ++w) {
    const double gain = tr.at(w, 0, 1) / tr.at(0, 0, 1);
    for (std::size_t i = 0; i < f; i += 7)
      CHECK(tr.at(w, i, 1) ==
            doctest::Approx(gain * tr.at(0, i, 1)).epsilon(1e-9));
  }
}

TEST_CASE("same SpO2, different intercepts, different measured RoR") {
  auto s1 = test_subject();
  auto s2 = test_subject();
  s2.subject_id = "s1";
  s2.spo2_intercept = 105.0;
  synth::DomainProfile dom;
  dom.domain_id = "clean";
  synth::VitalsTrajectory v;
  v.spo2_pct = 96.0;
  Rng rng(5);
  const auto r1 = synth::generate_clip(s1, dom, v, 10.0, rng);
  const auto r2 = synth::generate_clip(s2, dom, v, 10.0, rng);

  auto measure = [](const synth::ClipResult& res) {
    stmap::RoiTraceClip c = res.clip;
    c.traces = res.clean_traces;
    const auto rs = classical::ror_series(c);
    double m = 0.0;
    for (double x : rs.values) m += x;
    return m / static_cast<double>(rs.values.size());
  };
  const double ror1 = measure(r1);
  const double ror2 = measure(r2);
  CHECK(std::abs(ror1 - ror2) > 0.1);  // (110-96)/25 vs (105-96)/25
}

TEST_CASE("infeasible SpO2 targets are rejected") {
  auto subject = test_subject();
  synth::DomainProfile dom;
  synth::VitalsTrajectory v;
  v.spo2_pct = subject.spo2_intercept + 1.0;  // negative RoR required
  Rng rng(1);
  CHECK_THROWS_AS(synth::generate_clip(subject, dom, v, 10.0, rng),
                  ValidationError);
}

TEST_CASE("RoR fidelity: per-subject law recovered across clips") {
  auto subject = test_subject();
  subject.spo2_intercept = 112.0;
  subject.spo2_slope = -26.0;
  synth::DomainProfile dom;
  dom.domain_id = "clean";
  Rng rng(17);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 8; ++i) {
    synth::VitalsTrajectory v;
    v.hr_bpm = 60.0 + 6.0 * i;
    v.spo2_pct = 90.0 + 1.2 * i;
    const auto res = synth::generate_clip(subject, dom, v, 10.0, rng);
    stmap::RoiTraceClip c = res.clip;
    c.traces = res.clean_traces;
    const auto rs = classical::ror_series(c);
    double m = 0.0;
    for (double x : rs.values) m += x;
    pairs.push_back({m / static_cast<double>(rs.values.size()), v.spo2_pct});
  }
  const auto cal = classical::fit_spo2_calibration(pairs);
  CHECK(cal.fit_r2 > 0.99);
  CHECK(cal.intercept == doctest::Approx(112.0).epsilon(0.02));
  CHECK(cal.slope == doctest::Approx(-26.0).epsilon(0.05));
}

TEST_CASE("PSD fidelity: clean trace dominant frequency equals labeled HR") {
  auto subject = test_subject();
  synth::DomainProfile dom;
  dom.domain_id = "clean";
  Rng rng(23);
  for (double hr : {55.0, 76.0, 120.0}) {
    synth::VitalsTrajectory v;
    v.hr_bpm = hr;
    const auto res = synth::generate_clip(subject, dom, v, 10.0, rng);
    std::vector<double> g(res.clean_traces.dim(1));
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = res.clean_traces.at(0, i, 1);
    const double f = signal::dominant_frequency(g, 30.0, 0.66, 4.0);
    CHECK(std::abs(f * 60.0 - hr) <= 60.0 * 30.0 / (8.0 * g.size()) + 1e-9);
  }
}

TEST_CASE("generate_dataset is byte-identical under a fixed seed") {
  auto spec = synth::desk_benchmark_spec(7);
  for (auto& d : spec.domains) {
    d.subjects = 2;
    d.clips_per_subject = 2;
  }
  const std::string d1 = "synth_det_a", d2 = "synth_det_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  synth::generate_dataset(spec, d1);
  synth::generate_dataset(spec, d2);
  CHECK(hash_tree(d1) == hash_tree(d2));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("generate_dataset counts and mask propagation") {
  synth::DatasetSpec spec;
  spec.seed = 3;
  spec.emit_raw_traces = false;
  for (int d = 0; d < 4; ++d) {
    synth::DatasetDomainSpec ds;
    ds.profile.domain_id = "d" + std::to_string(d);
    ds.profile.label_mask = {true, true, d != 1, d != 2};  // d1 no rr, d2 no spo2
    ds.subjects = 5;
    ds.clips_per_subject = 6;
    spec.domains.push_back(ds);
  }
  const std::string root = "synth_counts";
  fs::remove_all(root);
  const auto manifest = synth::generate_dataset(spec, root);
  CHECK(manifest.clips.size() == 120);

  int sidecars = 0;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.path().extension() == ".json" &&
        e.path().filename() != "manifest.json")
      ++sidecars;
  CHECK(sidecars == 120);

  // Every sidecar in the no-SpO2 domain lacks the label and mask bit.
  for (const auto& e : fs::recursive_directory_iterator(root + "/d2")) {
    if (e.path().extension() != ".json") continue;
    const auto sc = stm1::read_sidecar(e.path().string());
    CHECK_FALSE(sc.labels.has_spo2);
  }
  for (const auto& e : fs::recursive_directory_iterator(root + "/d1")) {
    if (e.path().extension() != ".json") continue;
    const auto sc = stm1::read_sidecar(e.path().string());
    CHECK_FALSE(sc.labels.has_rr);
    CHECK(sc.labels.has_hr);
  }
  fs::remove_all(root);
}

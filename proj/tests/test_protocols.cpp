#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gap/common.hpp"
#include "gap/protocols.hpp"
#include "gap/signal.hpp"
#include "gap/synth.hpp"

using namespace gap;
namespace pr = gap::protocols;
namespace fs = std::filesystem;

namespace {

// Tiny dataset: short training still has to run end to end.
std::string tiny_dataset(std::uint64_t seed,
                         std::vector<bool> d1_mask = {true, true, false, true}) {
  synth::DatasetSpec spec;
  spec.seed = seed;
  spec.emit_raw_traces = false;
  const char* names[3] = {"alpha", "beta", "target"};
  for (int d = 0; d < 3; ++d) {
    synth::DatasetDomainSpec ds;
    ds.profile.domain_id = names[d];
    ds.profile.gamma = d == 0 ? 1.0 : (d == 1 ? 1.2 : 1.45);
    ds.profile.noise_std = 0.005;
    ds.profile.drift_amp = 0.05;
    ds.profile.label_mask = d == 1 ? d1_mask
                                   : std::vector<bool>{true, true, true, true};
    ds.subjects = 2;
    ds.clips_per_subject = 2;
    spec.domains.push_back(ds);
  }
  const std::string root =
      "tiny_ds_" + std::to_string(seed) + "_" + std::to_string(d1_mask[1]);
  fs::remove_all(root);
  synth::generate_dataset(spec, root);
  return root;
}

pr::MssdgConfig tiny_train_config(std::uint64_t seed) {
  pr::MssdgConfig cfg;
  cfg.source_domains = {"alpha", "beta"};
  cfg.batch_size = 2;
  cfg.iterations = 6;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  cfg.val_every = 3;
  cfg.model.preset = "desk";
  cfg.model.apply_preset();
  return cfg;
}

}  // namespace

TEST_CASE("load_dataset windows, identities, masks, and pseudo-labels") {
  const auto root = tiny_dataset(41);
  stm1::FileAudit audit;
  const auto ds = pr::load_dataset(root, {"alpha", "beta"}, &audit);

  // 2 domains x 2 subjects x 2 clips x 5 windows (300-frame clips).
  CHECK(ds.windows.size() == 40);
  CHECK(ds.identity_vocab.size() == 4);
  for (const auto& w : ds.windows) {
    CHECK(w.identity >= 0);
    CHECK(w.identity < 4);
    CHECK(w.input.dim(0) == 256);
    CHECK(w.input.dim(1) == 64);
    if (w.domain_id == "beta") {
      // RR is missing in beta; BVP exists, so a pseudo-label appears.
      CHECK_FALSE(w.labels.has_rr);
      CHECK(w.has_pseudo_rr);
      CHECK(w.pseudo_rr >= 6.0);
      CHECK(w.pseudo_rr <= 30.0);
    }
  }
  // Only the requested domains were touched.
  for (const auto& p : audit.paths())
    CHECK(p.find("target") == std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("pseudo HR from the true pulse peak") {
  // Domain without HR labels: pseudo HR comes from the BVP PSD peak.
  const auto root = tiny_dataset(43, {true, false, true, true});
  const auto ds = pr::load_dataset(root, {"beta"}, nullptr);
  int checked = 0;
  for (const auto& w : ds.windows) {
    REQUIRE(w.labels.has_bvp);
    CHECK_FALSE(w.labels.has_hr);
    REQUIRE(w.has_pseudo_hr);
    const double f = signal::dominant_frequency(w.labels.bvp, 30.0, 0.66, 4.0);
    CHECK(w.pseudo_hr == doctest::Approx(f * 60.0).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked > 0);
  // SpO2 is never pseudo-filled: windows keep only true SpO2 labels.
  fs::remove_all(root);
}

TEST_CASE("pseudo_labels leaves complete label sets unchanged") {
  pr::DatasetWindow w;
  w.labels.has_bvp = true;
  w.labels.bvp = synth::synth_bvp(78.0, 15.0, 256.0 / 30.0, 30.0, 0.0);
  w.labels.has_hr = true;
  w.labels.hr_bpm = 78.0;
  w.labels.has_rr = true;
  w.labels.rr_bpm = 15.0;
  pr::pseudo_labels(&w, 30.0);
  CHECK_FALSE(w.has_pseudo_hr);
  CHECK_FALSE(w.has_pseudo_rr);

  // Missing HR with BVP present: pseudo HR lands within one refined bin.
  pr::DatasetWindow v;
  v.labels.has_bvp = true;
  v.labels.bvp = synth::synth_bvp(78.0, 15.0, 256.0 / 30.0, 30.0, 0.0);
  pr::pseudo_labels(&v, 30.0);
  REQUIRE(v.has_pseudo_hr);
  CHECK(std::abs(v.pseudo_hr - 78.0) <= 60.0 * 30.0 / 2048.0 + 1e-9);

  // Neither BVP nor RR: nothing appears.
  pr::DatasetWindow u;
  pr::pseudo_labels(&u, 30.0);
  CHECK_FALSE(u.has_pseudo_hr);
  CHECK_FALSE(u.has_pseudo_rr);
}

TEST_CASE("short MSSDG run: ramp, logging, audit, determinism") {
  const auto root = tiny_dataset(47);
  auto cfg = tiny_train_config(5);

  stm1::FileAudit audit;
  const auto r1 = pr::train_mssdg(root, cfg, "tiny_run_a", &audit);
  REQUIRE(r1.log.size() == 6);

  // Ramp starts at exactly zero: no regularizer contribution at step 0.
  CHECK(r1.log[0].lambda == 0.0);
  CHECK(r1.log[0].step == 0);
  // Components are still measured and logged.
  CHECK(r1.log[1].lambda > 0.0);
  CHECK(fs::exists("tiny_run_a/best.ckpt"));
  CHECK(fs::exists("tiny_run_a/final.ckpt"));
  CHECK(fs::exists("tiny_run_a/train_log.csv"));
  CHECK(fs::exists("tiny_run_a/audit.json"));

  // The held-out domain is never read.
  for (const auto& p : audit.paths())
    CHECK(p.find("target") == std::string::npos);

  // Same seed, same data: identical final checkpoints.
  const auto r2 = pr::train_mssdg(root, cfg, "tiny_run_b", nullptr);
  auto m1 = model::GapModel::load_checkpoint(r1.final_checkpoint);
  auto m2 = model::GapModel::load_checkpoint(r2.final_checkpoint);
  CHECK(m1.model->checksum() == m2.model->checksum());

  // Supervised-only ablation: regularizer slots log as exact zeros.
  auto ab = cfg;
  ab.regularizers = false;
  const auto r3 = pr::train_mssdg(root, ab, "tiny_run_c", nullptr);
  for (const auto& l : r3.log) {
    CHECK(l.ssa == 0.0);
    CHECK(l.pe == 0.0);
    CHECK(l.composite == doctest::Approx(l.supervised));
  }

  fs::remove_all("tiny_run_a");
  fs::remove_all("tiny_run_b");
  fs::remove_all("tiny_run_c");
  fs::remove_all(root);
}

TEST_CASE("TTPA sessions: reset, one-pass, zero-lr equals frozen") {
  const auto root = tiny_dataset(53);
  auto cfg = tiny_train_config(5);
  cfg.iterations = 3;
  const auto trained = pr::train_mssdg(root, cfg, "ttpa_base", nullptr);

  auto base = model::GapModel::load_checkpoint(trained.best_checkpoint);
  const auto ds = pr::load_dataset(root, {"target"}, nullptr);
  REQUIRE(!ds.windows.empty());

  pr::TtpaConfig tc;
  tc.target_domain = "target";
  tc.seed = 9;

  SUBCASE("session start checksum equals the base checkpoint") {
    pr::TtpaSession session(*base.model, "target_s0", tc);
    CHECK(session.start_checksum() == base.model->checksum());
  }

  SUBCASE("revisiting a sample is a hard error") {
    pr::TtpaSession session(*base.model, "target_s0", tc);
    const auto& w = ds.windows.front();
    (void)session.adapt_and_predict(w, ds.clip_maps[w.clip_index]);
    CHECK_THROWS_AS(session.adapt_and_predict(w, ds.clip_maps[w.clip_index]),
                    ValidationError);
    CHECK(session.seen().size() == 1);
  }

  SUBCASE("lr = 0 reproduces the frozen model's fused-path predictions") {
    auto zero = tc;
    zero.lr = 0.0;
    pr::TtpaSession session(*base.model, "target_s0", zero);
    const auto& w = ds.windows.front();
    const auto pred =
        session.adapt_and_predict(w, ds.clip_maps[w.clip_index]);
    const auto frozen =
        base.model->forward_sample(w.input, gap::Mode::kTtpa, nullptr);
    CHECK(pred.hr == doctest::Approx(frozen.hr).epsilon(1e-12));
    CHECK(pred.spo2 == doctest::Approx(frozen.spo2).epsilon(1e-12));
    CHECK(session.model().checksum() == base.model->checksum());
  }

  SUBCASE("frozen prefixes receive exactly zero update") {
    auto fz = tc;
    fz.freeze = {"head.spo2", "enc.block0"};
    pr::TtpaSession session(*base.model, "target_s0", fz);
    const auto& w = ds.windows.front();
    (void)session.adapt_and_predict(w, ds.clip_maps[w.clip_index]);
    for (std::size_t i = 0; i < base.model->params().size(); ++i) {
      const auto& name = base.model->params()[i].name;
      const bool frozen = name.rfind("head.spo2", 0) == 0 ||
                          name.rfind("enc.block0", 0) == 0;
      const auto& a = base.model->params()[i].value;
      const auto& b = session.model().params()[i].value;
      double diff = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j)
        diff = std::max(diff, std::abs(a[j] - b[j]));
      if (frozen)
        CHECK(diff == 0.0);
    }
  }

  SUBCASE("subjects adapt independently of ordering") {
    const auto streams = [&] {
      std::map<std::string, std::vector<const pr::DatasetWindow*>> m;
      for (const auto& w : ds.windows) m[w.subject_id].push_back(&w);
      return m;
    }();
    REQUIRE(streams.size() >= 2);
    auto it = streams.begin();
    const auto s1 = it->first;
    const auto stream1 = it->second;
    ++it;
    const auto s2 = it->first;
    const auto stream2 = it->second;

    auto run_subject = [&](const std::string& sid,
                           const std::vector<const pr::DatasetWindow*>& st) {
      pr::TtpaSession session(*base.model, sid, tc);
      std::vector<double> preds;
      for (const auto* w : st)
        preds.push_back(
            session.adapt_and_predict(*w, ds.clip_maps[w->clip_index]).spo2);
      return preds;
    };
    // Order A: subject 1 then 2; order B: 2 then 1. Sessions share nothing,
    // so per-subject predictions must be identical.
    const auto a1 = run_subject(s1, stream1);
    const auto a2 = run_subject(s2, stream2);
    const auto b2 = run_subject(s2, stream2);
    const auto b1 = run_subject(s1, stream1);
    for (std::size_t i = 0; i < a1.size(); ++i) CHECK(a1[i] == b1[i]);
    for (std::size_t i = 0; i < a2.size(); ++i) CHECK(a2[i] == b2[i]);
  }

  SUBCASE("adapt_ttpa writes logs proving the contracts") {
    const auto result = pr::adapt_ttpa(root, trained.best_checkpoint, tc,
                                       "ttpa_run", nullptr);
    CHECK(fs::exists("ttpa_run/predictions_adapted.csv"));
    CHECK(fs::exists("ttpa_run/adaptation_log.json"));
    for (const auto& log : result.logs) {
      CHECK(log.start_checksum == base.model->checksum());
      std::set<std::string> unique(log.sample_order.begin(),
                                   log.sample_order.end());
      CHECK(unique.size() == log.sample_order.size());  // one pass, no repeats
    }
    fs::remove_all("ttpa_run");
  }

  fs::remove_all("ttpa_base");
  fs::remove_all(root);
}

TEST_CASE("evaluate_model emits one row per task per window") {
  const auto root = tiny_dataset(59);
  auto cfg = tiny_train_config(3);
  cfg.iterations = 2;
  const auto trained = pr::train_mssdg(root, cfg, "eval_base", nullptr);
  auto base = model::GapModel::load_checkpoint(trained.best_checkpoint);

  const auto ds = pr::load_dataset(root, {"target"}, nullptr);
  const auto ev = pr::evaluate_model(*base.model, ds, gap::Mode::kMssdg);
  CHECK(ev.predictions.size() == 3 * ds.windows.size());
  CHECK(ev.bvp_waveforms.size() == ds.windows.size());

  fs::remove_all("eval_base");
  fs::remove_all(root);
}

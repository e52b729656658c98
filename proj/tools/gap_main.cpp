// gap: multi-task remote physiological measurement toolkit.
//
// Subcommands: synth | baseline | train | adapt | eval | gradcheck |
// sweep-pi | report | analyze. Every subcommand takes --config <json> plus
// repeated --set key=value overrides. Exit codes: 0 success, 2 validation
// failure, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "gap/classical.hpp"
#include "gap/config.hpp"
#include "gap/gradcheck.hpp"
#include "gap/losses.hpp"
#include "gap/metrics.hpp"
#include "gap/model.hpp"
#include "gap/plot.hpp"
#include "gap/protocols.hpp"
#include "gap/signal.hpp"
#include "gap/stm1_io.hpp"
#include "gap/synth.hpp"

namespace {

namespace fs = std::filesystem;
using gap::config::Config;
using nlohmann::json;

Config load_config(const std::string& config_path,
                   const std::vector<std::string>& overrides) {
  Config cfg;
  if (!config_path.empty()) cfg = Config::from_file(config_path);
  for (const auto& kv : overrides) cfg.apply_override(kv);
  return cfg;
}

gap::losses::LossWeights loss_weights(const Config& c) {
  gap::losses::LossWeights w;
  w.p1 = c.get_double("loss.p1", w.p1);
  w.p2 = c.get_double("loss.p2", w.p2);
  w.p3 = c.get_double("loss.p3", w.p3);
  w.p4 = c.get_double("loss.p4", w.p4);
  w.p5 = c.get_double("loss.p5", w.p5);
  w.p6 = c.get_double("loss.p6", w.p6);
  w.p7 = c.get_double("loss.p7", w.p7);
  w.pi_floor = c.get_double("loss.pi", w.pi_floor);
  w.pseudo_weight = c.get_double("loss.pseudo_weight", w.pseudo_weight);
  w.spectral_norm = c.get_string("loss.norm", "frobenius") == "spectral";
  return w;
}

gap::augment::AugmentConfig aug_config(const Config& c) {
  gap::augment::AugmentConfig a;
  a.delta_t_max = c.get_int("aug.delta_t_max", a.delta_t_max);
  a.gamma_min = c.get_double("aug.gamma_min", a.gamma_min);
  a.gamma_max = c.get_double("aug.gamma_max", a.gamma_max);
  a.p_offset = c.get_double("aug.p_offset", a.p_offset);
  a.p_perm = c.get_double("aug.p_perm", a.p_perm);
  a.p_scale = c.get_double("aug.p_scale", a.p_scale);
  a.scaling_mode =
      c.get_string("aug.scaling_mode", "as_written") == "ratio_preserving"
          ? gap::augment::ScalingMode::kRatioPreserving
          : gap::augment::ScalingMode::kAsWritten;
  return a;
}

gap::model::ModelConfig model_config(const Config& c) {
  gap::model::ModelConfig m;
  m.preset = c.get_string("model.preset", "desk");
  m.apply_preset();
  m.input_t = c.get_int("model.input_t", m.input_t);
  m.input_w = c.get_int("model.input_w", m.input_w);
  return m;
}

gap::protocols::MssdgConfig mssdg_config(const Config& c) {
  gap::protocols::MssdgConfig t;
  t.source_domains = c.get_string_list("train.domains", {});
  t.val_fraction = c.get_double("train.val_fraction", t.val_fraction);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.iterations = c.get_int("train.iterations", t.iterations);
  t.lr = c.get_double("train.lr", t.lr);
  t.optimizer = c.get_string("train.optimizer", t.optimizer);
  t.seed = c.get_u64("train.seed", t.seed);
  t.val_every = c.get_int("train.val_every", t.val_every);
  t.ssm_window = c.get_int("train.ssm_window", t.ssm_window);
  t.regularizers = c.get_bool("train.regularizers", t.regularizers);
  t.weights = loss_weights(c);
  t.aug = aug_config(c);
  t.model = model_config(c);
  return t;
}

gap::protocols::TtpaConfig ttpa_config(const Config& c) {
  gap::protocols::TtpaConfig t;
  t.target_domain = c.get_string("ttpa.target_domain", "");
  t.lr = c.get_double("ttpa.lr", t.lr);
  t.seed = c.get_u64("ttpa.seed", t.seed);
  t.ssm_window = c.get_int("train.ssm_window", t.ssm_window);
  t.weights = loss_weights(c);
  t.aug = aug_config(c);
  t.freeze = c.get_string_list("ttpa.freeze", {});
  return t;
}

void echo_config(const Config& c, const std::string& run_dir) {
  fs::create_directories(run_dir);
  std::ofstream f(run_dir + "/config.json");
  f << c.dump() << "\n";
}

void write_bvp_json(
    const std::string& path,
    const std::map<std::string,
                   std::pair<std::vector<double>, std::vector<double>>>& w) {
  json j = json::object();
  for (const auto& [sid, pt] : w)
    j[sid] = {{"pred", pt.first}, {"truth", pt.second}};
  std::ofstream f(path);
  f << j.dump() << "\n";
}

std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
read_bvp_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw gap::ValidationError("cannot open " + path);
  json j;
  f >> j;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> w;
  for (auto it = j.begin(); it != j.end(); ++it)
    w[it.key()] = {it.value().at("pred").get<std::vector<double>>(),
                   it.value().at("truth").get<std::vector<double>>()};
  return w;
}

gap::synth::DatasetSpec synth_spec(const Config& c) {
  auto spec = gap::synth::desk_benchmark_spec(c.get_u64("synth.seed", 0));
  spec.clip_duration_s = c.get_double("synth.duration_s", spec.clip_duration_s);
  spec.hr_mod_depth = c.get_double("synth.hr_mod_depth", spec.hr_mod_depth);
  spec.emit_raw_traces = c.get_bool("synth.raw", spec.emit_raw_traces);
  const int clips = c.get_int("synth.clips_per_subject", 0);
  const int subjects = c.get_int("synth.subjects_per_domain", 0);
  for (auto& d : spec.domains) {
    if (clips > 0) d.clips_per_subject = clips;
    if (subjects > 0 && d.profile.domain_id != "field_target")
      d.subjects = subjects;
  }
  const int target_subjects = c.get_int("synth.target_subjects", 0);
  if (target_subjects > 0) spec.domains.back().subjects = target_subjects;
  return spec;
}

int cmd_synth(const Config& cfg, const std::string& out_dir) {
  const auto spec = synth_spec(cfg);
  const auto manifest = gap::synth::generate_dataset(spec, out_dir);
  std::cout << "dataset written to " << out_dir << " (" << manifest.clips.size()
            << " clips, " << manifest.domains.size() << " domains)\n";
  return 0;
}

int cmd_baseline(const Config& cfg, const std::string& data_dir,
                 const std::string& out_csv) {
  gap::stm1::FileAudit audit;
  const auto manifest =
      gap::stm1::read_manifest(data_dir + "/manifest.json", &audit);

  // Per-subject RoR calibrations from labeled clips (raw traces required).
  std::map<std::string, std::vector<std::pair<double, double>>> cal_pairs;
  struct ClipData {
    gap::stmap::STMap map;       // pulse-method input (raw when available)
    gap::stm1::Sidecar sc;
    double ror = -1.0;
    std::string id;
  };
  std::vector<ClipData> clips;
  for (const auto& clip : manifest.clips) {
    ClipData cd;
    const std::string stem = data_dir + "/" + clip.file;
    cd.map.data = gap::stm1::read_stm1(stem, &audit);
    cd.sc = gap::stm1::read_sidecar(stem.substr(0, stem.size() - 5) + ".json",
                                    &audit);
    cd.map.fps = cd.sc.fps;
    cd.id = clip.file;
    if (manifest.has_raw_traces) {
      auto raw =
          gap::stm1::read_stm1(stem.substr(0, stem.size() - 5) + ".raw.stm1",
                               &audit);
      const auto rs = gap::classical::ror_series_map(raw, cd.sc.fps);
      if (!rs.values.empty()) {
        double s = 0.0;
        for (double v : rs.values) s += v;
        cd.ror = s / static_cast<double>(rs.values.size());
        if (cd.sc.labels.has_spo2)
          cal_pairs[cd.sc.subject_id].push_back({cd.ror, cd.sc.labels.spo2_pct});
      }
      // Raw channel ratios make the CHROM/POS projections meaningful.
      cd.map.data = std::move(raw);
    }
    clips.push_back(std::move(cd));
  }

  std::map<std::string, gap::classical::SpO2Calibration> cals;
  for (const auto& [sid, pairs] : cal_pairs) {
    if (pairs.size() < 2) continue;
    try {
      cals[sid] = gap::classical::fit_spo2_calibration(pairs);
    } catch (const gap::ValidationError&) {
    }
  }

  std::ofstream f(out_csv);
  if (!f) throw gap::ValidationError("cannot open " + out_csv);
  f << "clip,subject,domain,method,hr_bpm,rr_bpm,spo2_pct,confidence\n";
  char buf[200];
  for (const auto& cd : clips) {
    // Respiratory rate from the drift band of the ROI-mean green trace.
    double rr = 0.0;
    bool has_rr = false;
    try {
      std::vector<double> g(cd.map.t());
      for (std::size_t t = 0; t < cd.map.t(); ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < cd.map.w(); ++j) s += cd.map.data.at(t, j, 1);
        g[t] = s / static_cast<double>(cd.map.w());
      }
      rr = gap::signal::dominant_frequency(g, cd.map.fps, gap::signal::kRrBandLo,
                                           gap::signal::kRrBandHi) *
           60.0;
      has_rr = true;
    } catch (const std::exception&) {
    }

    double spo2 = 0.0;
    bool has_spo2 = false;
    if (cd.ror > 0.0 && cals.count(cd.sc.subject_id)) {
      spo2 = gap::classical::apply_calibration(cals[cd.sc.subject_id], cd.ror);
      has_spo2 = true;
    }

    for (const char* method : {"green", "chrom", "pos"}) {
      gap::classical::PulseEstimate est;
      try {
        if (std::string(method) == "green")
          est = gap::classical::green_pulse(cd.map);
        else if (std::string(method) == "chrom")
          est = gap::classical::chrom_pulse(cd.map);
        else
          est = gap::classical::pos_pulse(cd.map);
      } catch (const std::exception&) {
        continue;
      }
      f << cd.id << ',' << cd.sc.subject_id << ',' << cd.sc.domain_id << ','
        << method << ',';
      std::snprintf(buf, sizeof(buf), "%.9g,", est.hr_bpm);
      f << buf;
      if (has_rr) {
        std::snprintf(buf, sizeof(buf), "%.9g", rr);
        f << buf;
      }
      f << ',';
      if (has_spo2) {
        std::snprintf(buf, sizeof(buf), "%.9g", spo2);
        f << buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.9g\n", est.confidence);
      f << buf;
    }
  }
  std::cout << "baseline estimates written to " << out_csv << "\n";
  return 0;
}

int cmd_train(const Config& cfg, const std::string& data_dir,
              const std::string& run_dir) {
  auto tc = mssdg_config(cfg);
  if (tc.source_domains.empty())
    throw gap::ValidationError("train: train.domains must list source domains");
  echo_config(cfg, run_dir);
  gap::stm1::FileAudit audit;
  const auto result = gap::protocols::train_mssdg(data_dir, tc, run_dir, &audit);
  std::cout << "best val MAE " << result.best_val_mae << " (checkpoint "
            << result.best_checkpoint << ")\n";
  return 0;
}

int cmd_adapt(const Config& cfg, const std::string& data_dir,
              const std::string& base_ckpt, const std::string& run_dir) {
  auto tc = ttpa_config(cfg);
  if (tc.target_domain.empty())
    throw gap::ValidationError("adapt: ttpa.target_domain is required");
  echo_config(cfg, run_dir);

  // Frozen baseline predictions from the same checkpoint, for comparison.
  auto loaded = gap::model::GapModel::load_checkpoint(base_ckpt);
  auto ds = gap::protocols::load_dataset(data_dir, {tc.target_domain}, nullptr);
  auto frozen =
      gap::protocols::evaluate_model(*loaded.model, ds, gap::Mode::kMssdg);
  gap::metrics::write_predictions_csv(run_dir + "/predictions_frozen.csv",
                                      frozen.predictions);
  write_bvp_json(run_dir + "/bvp_frozen.json", frozen.bvp_waveforms);

  const auto result =
      gap::protocols::adapt_ttpa(data_dir, base_ckpt, tc, run_dir, nullptr);
  write_bvp_json(run_dir + "/bvp_adapted.json", result.bvp_waveforms);

  const auto frozen_m = gap::metrics::compute_metrics(frozen.predictions);
  const auto adapted_m = gap::metrics::compute_metrics(result.predictions);
  for (const auto& task : {"hr", "rr", "spo2"}) {
    const auto fit = frozen_m.per_task.find(task);
    const auto ait = adapted_m.per_task.find(task);
    if (fit == frozen_m.per_task.end() || ait == adapted_m.per_task.end())
      continue;
    std::cout << task << " MAE frozen " << fit->second.mae << " -> adapted "
              << ait->second.mae << "\n";
  }
  return 0;
}

int cmd_eval(const Config& cfg, const std::string& pred_csv,
             const std::string& ckpt, const std::string& data_dir,
             const std::string& domain, const std::string& out_prefix,
             const std::string& bvp_json) {
  std::vector<gap::metrics::PredictionRow> rows;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      waveforms;
  if (!ckpt.empty()) {
    if (data_dir.empty() || domain.empty())
      throw gap::ValidationError("eval: --data and --domain required with --ckpt");
    auto loaded = gap::model::GapModel::load_checkpoint(ckpt);
    auto ds = gap::protocols::load_dataset(data_dir, {domain}, nullptr);
    auto ev = gap::protocols::evaluate_model(*loaded.model, ds,
                                             gap::Mode::kMssdg);
    rows = std::move(ev.predictions);
    waveforms = std::move(ev.bvp_waveforms);
    gap::metrics::write_predictions_csv(out_prefix + "predictions.csv", rows);
    write_bvp_json(out_prefix + "bvp.json", waveforms);
  } else {
    if (pred_csv.empty())
      throw gap::ValidationError("eval: need --pred or --ckpt");
    rows = gap::metrics::read_predictions_csv(pred_csv);
    if (!bvp_json.empty()) waveforms = read_bvp_json(bvp_json);
  }

  auto report = gap::metrics::compute_metrics(rows);
  report.config_hash = cfg.hash();
  report.seed = cfg.get_u64("train.seed", 0);
  if (!waveforms.empty()) {
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    for (const auto& [sid, pt] : waveforms)
      if (!pt.second.empty()) pairs.push_back(pt);
    if (!pairs.empty())
      report.hrv = gap::metrics::compute_hrv_row(pairs, 30.0);
  }
  gap::metrics::write_metrics_csv(out_prefix + "metrics.csv", report);
  gap::metrics::write_metrics_json(out_prefix + "metrics.json", report);
  std::cout << "metrics written to " << out_prefix << "metrics.{csv,json}\n";
  return 0;
}

int cmd_gradcheck(const Config& cfg) {
  const auto results =
      gap::gradcheck::check_all_losses(cfg.get_u64("gradcheck.seed", 1234), 3);
  bool all_pass = true;
  std::printf("%-14s %-12s %s\n", "loss", "max_rel_err", "status");
  for (const auto& r : results) {
    std::printf("%-14s %-12.3e %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) throw gap::NumericError("gradcheck: at least one loss failed");
  return 0;
}

int cmd_sweep_pi(const Config& cfg, const std::string& data_dir,
                 const std::string& run_dir) {
  echo_config(cfg, run_dir);
  const std::vector<double> grid = {0.0, 0.1, 0.3, 0.6, 1.0};
  std::ofstream f(run_dir + "/pi_sweep.csv");
  if (!f) throw gap::ValidationError("cannot open pi_sweep.csv");
  f << "pi,task,mae\n";

  std::map<double, std::map<std::string, double>> curves;
  for (double pi : grid) {
    Config c = cfg;
    c.set("loss.pi", pi);
    auto tc = mssdg_config(c);
    const std::string sub = run_dir + "/pi_" + std::to_string(pi);
    const auto result = gap::protocols::train_mssdg(data_dir, tc, sub, nullptr);

    // Held-out target MAE per task.
    const std::string target = cfg.get_string("ttpa.target_domain", "");
    if (target.empty())
      throw gap::ValidationError("sweep-pi: ttpa.target_domain required");
    auto loaded = gap::model::GapModel::load_checkpoint(result.best_checkpoint);
    auto ds = gap::protocols::load_dataset(data_dir, {target}, nullptr);
    auto ev =
        gap::protocols::evaluate_model(*loaded.model, ds, gap::Mode::kMssdg);
    const auto m = gap::metrics::compute_metrics(ev.predictions);
    char buf[120];
    for (const auto& [task, cell] : m.per_task) {
      std::snprintf(buf, sizeof(buf), "%.9g,%s,%.9g\n", pi, task.c_str(),
                    cell.mae);
      f << buf;
      curves[pi][task] = cell.mae;
    }
  }

  std::vector<gap::plot::Series> series;
  const std::uint32_t colors[3] = {0xd62728, 0x2ca02c, 0x1f77b4};
  int ci = 0;
  for (const auto& task : {"hr", "rr", "spo2"}) {
    gap::plot::Series s;
    s.rgb = colors[ci++ % 3];
    for (const auto& [pi, m] : curves)
      if (m.count(task)) {
        s.x.push_back(pi);
        s.y.push_back(m.at(task));
      }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  gap::plot::render_png(run_dir + "/pi_sweep.png", series);
  std::cout << "pi sweep written to " << run_dir << "\n";
  return 0;
}

int cmd_analyze(const std::string& stm_path, const std::string& out_prefix) {
  gap::stmap::STMap map;
  map.data = gap::stm1::read_stm1(stm_path);
  map.fps = 30.0;

  const auto pulse = gap::classical::green_pulse(map);
  const auto sp = gap::signal::power_spectrum(
      pulse.signal, map.fps, gap::signal::kHrBandLo, gap::signal::kHrBandHi, 8,
      true);
  {
    std::ofstream f(out_prefix + "spectrum.csv");
    f << "freq_hz,power\n";
    char buf[80];
    for (std::size_t i = 0; i < sp.freqs.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", sp.freqs[i], sp.power[i]);
      f << buf;
    }
  }
  const auto ssm = gap::signal::self_similarity(pulse.signal, 30);
  {
    std::ofstream f(out_prefix + "ssm.csv");
    char buf[48];
    for (Eigen::Index i = 0; i < ssm.m.rows(); ++i) {
      for (Eigen::Index j = 0; j < ssm.m.cols(); ++j) {
        std::snprintf(buf, sizeof(buf), j + 1 == ssm.m.cols() ? "%.9g" : "%.9g,",
                      ssm.m(i, j));
        f << buf;
      }
      f << '\n';
    }
  }
  std::cout << "analysis written to " << out_prefix << "{spectrum,ssm}.csv\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  std::ofstream md(run_dir + "/report.md");
  if (!md) throw gap::ValidationError("cannot open report.md");
  md << "# Run report\n\n";

  // Loss curves.
  if (fs::exists(run_dir + "/train_log.csv")) {
    std::ifstream f(run_dir + "/train_log.csv");
    std::string line;
    std::getline(f, line);
    std::vector<double> steps, sup, comp;
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string field;
      std::vector<std::string> fields;
      while (std::getline(ss, field, ',')) fields.push_back(field);
      if (fields.size() < 11) continue;
      steps.push_back(std::stod(fields[0]));
      sup.push_back(std::stod(fields[9]));
      comp.push_back(std::stod(fields[10]));
    }
    if (!steps.empty()) {
      gap::plot::render_png(run_dir + "/loss_curves.png",
                            {{steps, sup, 0x1f77b4, false},
                             {steps, comp, 0xd62728, false}});
      md << "## Training\n\n`loss_curves.png`: supervised (blue) and composite "
            "(red) loss vs step.\n\n";
    }
  }

  // Bland-Altman per task from whichever prediction files exist.
  for (const auto& name :
       {"predictions.csv", "predictions_frozen.csv", "predictions_adapted.csv"}) {
    const std::string path = run_dir + "/" + name;
    if (!fs::exists(path)) continue;
    const auto rows = gap::metrics::read_predictions_csv(path);
    const auto rep = gap::metrics::compute_metrics(rows);
    md << "## " << name << "\n\n| task | n | MAE | RMSE | Pearson |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& [task, cell] : rep.per_task) {
      md << "| " << task << " | " << cell.n << " | " << cell.mae << " | "
         << cell.rmse << " | ";
      if (cell.pearson.has_value())
        md << *cell.pearson;
      else
        md << "undefined";
      md << " |\n";
    }
    md << "\nPer-subject breakdown:\n\n| subject | task | MAE |\n|---|---|---|\n";
    for (const auto& [subj, m] : rep.per_subject)
      for (const auto& [task, cell] : m)
        md << "| " << subj << " | " << task << " | " << cell.mae << " |\n";
    md << "\n";

    for (const auto& task : {"hr", "rr", "spo2"}) {
      gap::plot::Series s;
      s.markers = true;
      s.rgb = 0x1f77b4;
      for (const auto& r : rows) {
        if (r.task != task || !r.mask) continue;
        s.x.push_back(0.5 * (r.pred + r.truth));
        s.y.push_back(r.pred - r.truth);
      }
      if (s.x.size() < 2) continue;
      const std::string png = run_dir + "/bland_altman_" + task + "_" +
                              std::string(name).substr(0, std::string(name).find('.')) +
                              ".png";
      gap::plot::render_png(png, {s});
      md << "`" << fs::path(png).filename().string()
         << "`: Bland-Altman, x = mean of prediction and truth, y = "
            "prediction - truth.\n\n";
    }
  }

  // Waveform overlay: truth vs frozen vs adapted for the first labeled sample.
  if (fs::exists(run_dir + "/bvp_frozen.json") &&
      fs::exists(run_dir + "/bvp_adapted.json")) {
    const auto frozen = read_bvp_json(run_dir + "/bvp_frozen.json");
    const auto adapted = read_bvp_json(run_dir + "/bvp_adapted.json");
    for (const auto& [sid, pt] : frozen) {
      if (pt.second.empty() || !adapted.count(sid)) continue;
      std::vector<double> t(pt.second.size());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
      auto norm = [](std::vector<double> v) {
        const double m = gap::signal::mean(v);
        double s = gap::signal::stdev_population(v);
        if (s < 1e-12) s = 1.0;
        for (double& x : v) x = (x - m) / s;
        return v;
      };
      gap::plot::render_png(
          run_dir + "/waveform_overlay.png",
          {{t, norm(pt.second), 0x1f77b4, false},
           {t, norm(frozen.at(sid).first), 0x2ca02c, false},
           {t, norm(adapted.at(sid).first), 0xd62728, false}});
      md << "`waveform_overlay.png`: sample " << sid
         << ", standardized BVP: truth (blue), pre-adaptation (green), "
            "post-adaptation (red).\n\n";
      break;
    }
  }

  std::cout << "report written to " << run_dir << "/report.md\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gap: multi-task remote physiological measurement toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file")
      ->expected(1);
  app.add_option("--set", overrides, "key.path=value overrides");

  std::string out_dir, data_dir, run_dir, base_ckpt, pred_csv, ckpt, domain,
      out_prefix = "./", bvp_json, stm_path, out_csv;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* baseline = app.add_subcommand("baseline", "classical method estimates");
  baseline->add_option("--data", data_dir, "dataset directory")->required();
  baseline->add_option("--out", out_csv, "output CSV")->required();

  auto* train = app.add_subcommand("train", "MSSDG training");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--run", run_dir, "run directory")->required();

  auto* adapt = app.add_subcommand("adapt", "TTPA per-subject adaptation");
  adapt->add_option("--data", data_dir, "dataset directory")->required();
  adapt->add_option("--base", base_ckpt, "base checkpoint")->required();
  adapt->add_option("--run", run_dir, "run directory")->required();

  auto* eval = app.add_subcommand("eval", "metrics from predictions or model");
  eval->add_option("--pred", pred_csv, "predictions CSV");
  eval->add_option("--ckpt", ckpt, "checkpoint to evaluate");
  eval->add_option("--data", data_dir, "dataset directory");
  eval->add_option("--domain", domain, "domain to evaluate");
  eval->add_option("--out-prefix", out_prefix, "output path prefix");
  eval->add_option("--bvp", bvp_json, "waveform JSON for HRV evaluation");

  auto* gradcheck = app.add_subcommand("gradcheck", "loss gradient checks");

  auto* sweep = app.add_subcommand("sweep-pi", "orthogonality floor sweep");
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--run", run_dir, "run directory")->required();

  auto* report = app.add_subcommand("report", "render run summary and plots");
  report->add_option("--run", run_dir, "run directory")->required();

  auto* analyze = app.add_subcommand("analyze", "dump spectrum and SSM CSVs");
  analyze->add_option("--stm", stm_path, "STM1 file")->required();
  analyze->add_option("--out-prefix", out_prefix, "output path prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    const Config cfg = load_config(config_path, overrides);
    if (synth->parsed()) return cmd_synth(cfg, out_dir);
    if (baseline->parsed()) return cmd_baseline(cfg, data_dir, out_csv);
    if (train->parsed()) return cmd_train(cfg, data_dir, run_dir);
    if (adapt->parsed()) return cmd_adapt(cfg, data_dir, base_ckpt, run_dir);
    if (eval->parsed())
      return cmd_eval(cfg, pred_csv, ckpt, data_dir, domain, out_prefix,
                      bvp_json);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg);
    if (sweep->parsed()) return cmd_sweep_pi(cfg, data_dir, run_dir);
    if (report->parsed()) return cmd_report(run_dir);
    if (analyze->parsed()) return cmd_analyze(stm_path, out_prefix);
  } catch (const gap::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const gap::ValidationError& e) {
    std::cerr << "validation failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

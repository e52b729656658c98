#include "gap/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gap/common.hpp"
#include "gap/signal.hpp"

namespace gap::metrics {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

Cell make_cell(const std::vector<double>& pred, const std::vector<double>& truth) {
  Cell c;
  c.n = static_cast<int>(pred.size());
  if (c.n == 0) return c;
  double ae = 0.0, se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    ae += std::abs(e);
    se += e * e;
  }
  c.mae = ae / c.n;
  c.rmse = std::sqrt(se / c.n);
  if (c.n >= 2) {
    double mn = truth[0], mx = truth[0];
    for (double t : truth) {
      mn = std::min(mn, t);
      mx = std::max(mx, t);
    }
    if (mx - mn > kNormEps) {
      try {
        c.pearson = signal::pearson(pred, truth);
      } catch (const NumericError&) {
        c.pearson.reset();
      }
    }
  }
  return c;
}

}  // namespace

void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRow>& rows) {
  std::ofstream f(path);
  if (!f) throw ValidationError("write_predictions_csv: cannot open " + path);
  f << "subject,sample,domain,task,pred,truth,mask,pseudo\n";
  for (const auto& r : rows)
    f << r.subject << ',' << r.sample << ',' << r.domain << ',' << r.task << ','
      << fmt(r.pred) << ',' << fmt(r.truth) << ',' << (r.mask ? 1 : 0) << ','
      << (r.pseudo ? 1 : 0) << '\n';
}

std::vector<PredictionRow> read_predictions_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("read_predictions_csv: cannot open " + path);
  std::vector<PredictionRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8)
      throw ValidationError("read_predictions_csv: malformed row at line " +
                            std::to_string(lineno));
    PredictionRow r;
    r.subject = fields[0];
    r.sample = fields[1];
    r.domain = fields[2];
    r.task = fields[3];
    try {
      r.pred = std::stod(fields[4]);
      r.truth = std::stod(fields[5]);
      r.mask = std::stoi(fields[6]) != 0;
      r.pseudo = std::stoi(fields[7]) != 0;
    } catch (const std::exception&) {
      throw ValidationError("read_predictions_csv: bad number at line " +
                            std::to_string(lineno));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

MetricReport compute_metrics(const std::vector<PredictionRow>& rows) {
  MetricReport rep;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> task;
  std::map<std::pair<std::string, std::string>,
           std::pair<std::vector<double>, std::vector<double>>>
      dom, subj;
  for (const auto& r : rows) {
    if (!r.mask) continue;
    task[r.task].first.push_back(r.pred);
    task[r.task].second.push_back(r.truth);
    dom[{r.domain, r.task}].first.push_back(r.pred);
    dom[{r.domain, r.task}].second.push_back(r.truth);
    subj[{r.subject, r.task}].first.push_back(r.pred);
    subj[{r.subject, r.task}].second.push_back(r.truth);
  }
  for (const auto& [name, pt] : task)
    rep.per_task[name] = make_cell(pt.first, pt.second);
  for (const auto& [key, pt] : dom)
    rep.per_domain[key.first][key.second] = make_cell(pt.first, pt.second);
  for (const auto& [key, pt] : subj)
    rep.per_subject[key.first][key.second] = make_cell(pt.first, pt.second);
  return rep;
}

HrvRow compute_hrv_row(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>&
        pred_true_waveforms,
    double fps) {
  HrvRow row;
  std::vector<double> lfnu_p, lfnu_t, hfnu_p, hfnu_t, ratio_p, ratio_t, hr_p,
      hr_t;
  for (const auto& [pred, truth] : pred_true_waveforms) {
    try {
      const auto hp = signal::hrv_metrics(pred, fps);
      const auto ht = signal::hrv_metrics(truth, fps);
      const double fhp =
          signal::dominant_frequency(pred, fps, signal::kHrBandLo,
                                     signal::kHrBandHi);
      const double fht =
          signal::dominant_frequency(truth, fps, signal::kHrBandLo,
                                     signal::kHrBandHi);
      lfnu_p.push_back(hp.lfnu);
      lfnu_t.push_back(ht.lfnu);
      hfnu_p.push_back(hp.hfnu);
      hfnu_t.push_back(ht.hfnu);
      ratio_p.push_back(hp.lf_over_hf);
      ratio_t.push_back(ht.lf_over_hf);
      hr_p.push_back(fhp * 60.0);
      hr_t.push_back(fht * 60.0);
    } catch (const std::exception&) {
      ++row.skipped;
    }
  }
  row.n = static_cast<int>(lfnu_p.size());
  row.lfnu = make_cell(lfnu_p, lfnu_t);
  row.hfnu = make_cell(hfnu_p, hfnu_t);
  row.lf_over_hf = make_cell(ratio_p, ratio_t);
  row.hr_bpm = make_cell(hr_p, hr_t);
  return row;
}

namespace {

void write_cell_csv(std::ofstream& f, const std::string& scope,
                    const std::string& group, const std::string& task,
                    const Cell& c) {
  f << scope << ',' << group << ',' << task << ',' << c.n << ',' << fmt(c.mae)
    << ',' << fmt(c.rmse) << ','
    << (c.pearson.has_value() ? fmt(*c.pearson) : std::string()) << '\n';
}

json cell_json(const Cell& c) {
  json j = {{"n", c.n}, {"mae", c.mae}, {"rmse", c.rmse}};
  if (c.pearson.has_value())
    j["pearson"] = *c.pearson;
  else
    j["pearson"] = nullptr;
  return j;
}

}  // namespace

void write_metrics_csv(const std::string& path, const MetricReport& report) {
  std::ofstream f(path);
  if (!f) throw ValidationError("write_metrics_csv: cannot open " + path);
  f << "scope,group,task,n,mae,rmse,pearson\n";
  for (const auto& [t, c] : report.per_task) write_cell_csv(f, "all", "", t, c);
  for (const auto& [g, m] : report.per_domain)
    for (const auto& [t, c] : m) write_cell_csv(f, "domain", g, t, c);
  for (const auto& [g, m] : report.per_subject)
    for (const auto& [t, c] : m) write_cell_csv(f, "subject", g, t, c);
  if (report.hrv.has_value()) {
    const auto& h = *report.hrv;
    write_cell_csv(f, "hrv", "", "lfnu", h.lfnu);
    write_cell_csv(f, "hrv", "", "hfnu", h.hfnu);
    write_cell_csv(f, "hrv", "", "lf_over_hf", h.lf_over_hf);
    write_cell_csv(f, "hrv", "", "hr_bpm", h.hr_bpm);
  }
}

void write_metrics_json(const std::string& path, const MetricReport& report) {
  json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  for (const auto& [t, c] : report.per_task) j["per_task"][t] = cell_json(c);
  for (const auto& [g, m] : report.per_domain)
    for (const auto& [t, c] : m) j["per_domain"][g][t] = cell_json(c);
  for (const auto& [g, m] : report.per_subject)
    for (const auto& [t, c] : m) j["per_subject"][g][t] = cell_json(c);
  if (report.hrv.has_value()) {
    const auto& h = *report.hrv;
    j["hrv"] = {{"n", h.n},
                {"skipped", h.skipped},
                {"lfnu", cell_json(h.lfnu)},
                {"hfnu", cell_json(h.hfnu)},
                {"lf_over_hf", cell_json(h.lf_over_hf)},
                {"hr_bpm", cell_json(h.hr_bpm)}};
  }
  std::ofstream f(path);
  if (!f) throw ValidationError("write_metrics_json: cannot open " + path);
  f << j.dump(2) << "\n";
}

}  // namespace gap::metrics

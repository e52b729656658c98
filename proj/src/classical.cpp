#include "gap/classical.hpp"

#include <algorithm>
#include <cmath>

#include "gap/common.hpp"
#include "gap/signal.hpp"

namespace gap::classical {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kProjWindow = 48;  // 1.6 s at 30 fps

std::vector<double> roi_mean_channel(const stmap::STMap& map, int c) {
  const std::size_t t = map.t(), w = map.w();
  std::vector<double> out(t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += map.data.at(i, j, c);
    out[i] = s / static_cast<double>(w);
  }
  return out;
}

PulseEstimate finish_pulse(std::vector<double> raw, double fps,
                           std::string method) {
  PulseEstimate est;
  est.method = std::move(method);
  est.signal = signal::band_pass(raw, fps, signal::kHrBandLo, signal::kHrBandHi);

  const auto sp = signal::power_spectrum(est.signal, fps, signal::kHrBandLo,
                                         signal::kHrBandHi, 8, false);
  std::size_t best = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < sp.power.size(); ++i) {
    total += sp.power[i];
    if (sp.power[i] > sp.power[best]) best = i;
  }
  est.hr_bpm = sp.freqs[best] * 60.0;
  const double mean_power = total / static_cast<double>(sp.power.size());
  est.confidence = sp.power[best] / std::max(mean_power, kNormEps);
  est.low_confidence = est.confidence < kLowConfidencePar;
  return est;
}

// Shared CHROM/POS machinery: per-window channel normalization, projection,
// Hann overlap-add with 50% hop.
template <typename Project>
PulseEstimate projection_pulse(const stmap::STMap& map, const char* name,
                               Project project, int* skipped_windows) {
  const auto t = static_cast<int>(map.t());
  if (t < kProjWindow)
    throw ValidationError(std::string(name) + ": need at least 48 samples");

  const auto r = roi_mean_channel(map, 0);
  const auto g = roi_mean_channel(map, 1);
  const auto b = roi_mean_channel(map, 2);

  std::vector<double> hann(kProjWindow);
  for (int i = 0; i < kProjWindow; ++i)
    hann[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (kProjWindow - 1)));

  std::vector<double> acc(t, 0.0), norm(t, 0.0);
  int skipped = 0;
  for (int start = 0; start + kProjWindow <= t; start += kProjWindow / 2) {
    double mr = 0, mg = 0, mb = 0;
    for (int i = 0; i < kProjWindow; ++i) {
      mr += r[start + i];
      mg += g[start + i];
      mb += b[start + i];
    }
    mr /= kProjWindow;
    mg /= kProjWindow;
    mb /= kProjWindow;
    if (mr <= kNormEps || mg <= kNormEps || mb <= kNormEps) {
      ++skipped;
      continue;
    }
    std::vector<double> rn(kProjWindow), gn(kProjWindow), bn(kProjWindow);
    for (int i = 0; i < kProjWindow; ++i) {
      rn[i] = r[start + i] / mr;
      gn[i] = g[start + i] / mg;
      bn[i] = b[start + i] / mb;
    }
    std::vector<double> s;
    if (!project(rn, gn, bn, &s)) {
      ++skipped;
      continue;
    }
    const double sm = signal::mean(s);
    for (int i = 0; i < kProjWindow; ++i) {
      acc[start + i] += hann[i] * (s[i] - sm);
      norm[start + i] += hann[i];
    }
  }
  if (skipped_windows) *skipped_windows = skipped;

  std::vector<double> out(t, 0.0);
  for (int i = 0; i < t; ++i)
    out[i] = norm[i] > kNormEps ? acc[i] / norm[i] : 0.0;
  return finish_pulse(std::move(out), map.fps, name);
}

}  // namespace

PulseEstimate green_pulse(const stmap::STMap& map) {
  try {
    return finish_pulse(roi_mean_channel(map, 1), map.fps, "green");
  } catch (const NumericError&) {
    throw NumericError("green_pulse: no pulsatile component in map");
  }
}

PulseEstimate chrom_pulse(const stmap::STMap& map, int* skipped_windows) {
  return projection_pulse(
      map, "chrom",
      [](const std::vector<double>& rn, const std::vector<double>& gn,
         const std::vector<double>& bn, std::vector<double>* s) {
        const int n = static_cast<int>(rn.size());
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
          x[i] = 3.0 * rn[i] - 2.0 * gn[i];
          y[i] = 1.5 * rn[i] + gn[i] - 1.5 * bn[i];
        }
        const double sx = signal::stdev_population(x);
        const double sy = signal::stdev_population(y);
        if (sy <= kNormEps) return false;
        s->resize(n);
        for (int i = 0; i < n; ++i) (*s)[i] = x[i] - (sx / sy) * y[i];
        return true;
      },
      skipped_windows);
}

PulseEstimate pos_pulse(const stmap::STMap& map, int* skipped_windows) {
  return projection_pulse(
      map, "pos",
      [](const std::vector<double>& rn, const std::vector<double>& gn,
         const std::vector<double>& bn, std::vector<double>* s) {
        const int n = static_cast<int>(rn.size());
        std::vector<double> s1(n), s2(n);
        for (int i = 0; i < n; ++i) {
          s1[i] = gn[i] - bn[i];
          s2[i] = -2.0 * rn[i] + gn[i] + bn[i];
        }
        const double d1 = signal::stdev_population(s1);
        const double d2 = signal::stdev_population(s2);
        if (d2 <= kNormEps) return false;
        s->resize(n);
        for (int i = 0; i < n; ++i) (*s)[i] = s1[i] + (d1 / d2) * s2[i];
        return true;
      },
      skipped_windows);
}

RorSeries ror_series_map(const Tensor& raw, double fps, double window_s,
                         int ch1, int ch2) {
  if (raw.ndim() != 3 || raw.dim(2) != 3)
    throw ValidationError("ror_series: raw map must be T x W x 3");
  const auto win = static_cast<std::size_t>(std::lround(window_s * fps));
  if (win < static_cast<std::size_t>(std::lround(0.5 * fps)))
    throw ValidationError("ror_series: window must cover at least 0.5 s");
  const std::size_t t = raw.dim(0), w = raw.dim(1);

  std::vector<double> m1(t), m2(t);
  for (std::size_t i = 0; i < t; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      s1 += raw.at(i, j, ch1);
      s2 += raw.at(i, j, ch2);
    }
    m1[i] = s1 / static_cast<double>(w);
    m2[i] = s2 / static_cast<double>(w);
  }

  RorSeries out;
  for (std::size_t start = 0; start + win <= t; start += win) {
    double dc1 = 0, dc2 = 0;
    for (std::size_t i = 0; i < win; ++i) {
      dc1 += m1[start + i];
      dc2 += m2[start + i];
    }
    dc1 /= static_cast<double>(win);
    dc2 /= static_cast<double>(win);
    double v1 = 0, v2 = 0;
    for (std::size_t i = 0; i < win; ++i) {
      v1 += (m1[start + i] - dc1) * (m1[start + i] - dc1);
      v2 += (m2[start + i] - dc2) * (m2[start + i] - dc2);
    }
    const double ac1 = std::sqrt(v1 / static_cast<double>(win));
    const double ac2 = std::sqrt(v2 / static_cast<double>(win));
    if (dc1 <= 0.0 || dc2 <= 0.0 || ac2 <= kNormEps) {
      ++out.dropped_windows;
      continue;
    }
    out.values.push_back((ac1 / dc1) / (ac2 / dc2));
    out.times.push_back((static_cast<double>(start) + win / 2.0) / fps);
  }
  return out;
}

RorSeries ror_series(const stmap::RoiTraceClip& clip, double window_s, int ch1,
                     int ch2) {
  clip.validate();
  const std::size_t r = clip.rois(), f = clip.frames();
  Tensor raw({f, r, 3});
  for (std::size_t w = 0; w < r; ++w)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t c = 0; c < 3; ++c) raw.at(i, w, c) = clip.traces.at(w, i, c);
  return ror_series_map(raw, clip.fps, window_s, ch1, ch2);
}

SpO2Calibration fit_spo2_calibration(
    const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 2)
    throw ValidationError("fit_spo2_calibration: need at least 2 pairs");
  double xm = 0, ym = 0;
  for (const auto& [x, y] : pairs) {
    xm += x;
    ym += y;
  }
  xm /= static_cast<double>(pairs.size());
  ym /= static_cast<double>(pairs.size());

  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - xm) * (x - xm);
    sxy += (x - xm) * (y - ym);
    syy += (y - ym) * (y - ym);
  }
  if (sxx < kNormEps)
    throw ValidationError("fit_spo2_calibration: rank-deficient fit "
                          "(all RoR values identical)");

  SpO2Calibration cal;
  cal.slope = sxy / sxx;
  cal.intercept = ym - cal.slope * xm;

  double ss_res = 0.0;
  for (const auto& [x, y] : pairs) {
    const double e = y - (cal.intercept + cal.slope * x);
    ss_res += e * e;
  }
  cal.fit_r2 = syy < kNormEps ? 1.0 : 1.0 - ss_res / syy;
  return cal;
}

double apply_calibration(const SpO2Calibration& cal, double ror) {
  return std::clamp(cal.intercept + cal.slope * ror, 50.0, 100.0);
}

}  // namespace gap::classical

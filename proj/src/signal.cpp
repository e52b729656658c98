#include "gap/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "gap/common.hpp"
#include "gap/kernels/kernels.hpp"

namespace gap::signal {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void fft(const std::vector<std::complex<double>>& in,
         std::vector<std::complex<double>>& out) {
  Eigen::FFT<double> f;
  f.fwd(out, in);
}

void ifft(const std::vector<std::complex<double>>& in,
          std::vector<std::complex<double>>& out) {
  Eigen::FFT<double> f;
  f.inv(out, in);
}

double mean(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  return kernels::reduce_sum(x.size(), x.data()) / static_cast<double>(x.size());
}

double stdev_population(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ValidationError("pearson: need two equal-length series of size >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx < kNormEps || syy < kNormEps)
    throw NumericError("pearson: constant input");
  return sxy / std::sqrt(sxx * syy);
}

Spectrum power_spectrum(const std::vector<double>& x, double fps,
                        double band_lo, double band_hi, int zero_pad,
                        bool normalize) {
  const std::size_t n = x.size();
  if (n < 32) throw ValidationError("power_spectrum: need at least 32 samples");
  if (!(fps > 0.0)) throw ValidationError("power_spectrum: fps must be positive");
  if (zero_pad < 1) throw ValidationError("power_spectrum: zero_pad < 1");
  for (double v : x)
    if (!std::isfinite(v)) throw ValidationError("power_spectrum: non-finite input");

  const double m = mean(x);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = x[i] - m;
  if (kernels::reduce_sumsq(n, d.data()) < 1e-20)
    throw NumericError("power_spectrum: degenerate (constant) signal");

  const std::size_t L = n * static_cast<std::size_t>(zero_pad);
  std::vector<std::complex<double>> buf(L, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                                           static_cast<double>(n - 1)));
    buf[i] = {d[i] * w, 0.0};
  }
  std::vector<std::complex<double>> y;
  fft(buf, y);

  Spectrum sp;
  sp.band_lo = band_lo;
  sp.band_hi = band_hi;
  const std::size_t half = L / 2;
  for (std::size_t mbin = 0; mbin <= half; ++mbin) {
    const double f = static_cast<double>(mbin) * fps / static_cast<double>(L);
    if (f < band_lo || f > band_hi) continue;
    sp.freqs.push_back(f);
    sp.power.push_back(std::norm(y[mbin]));
  }
  if (sp.freqs.empty())
    throw ValidationError("power_spectrum: band holds no frequency bins");

  if (normalize) {
    const double s =
        kernels::reduce_sum(sp.power.size(), sp.power.data()) + kNormEps;
    for (double& p : sp.power) p /= s;
    sp.normalized = true;
  }
  return sp;
}

double spectrum_kl(const Spectrum& qa, const Spectrum& qo) {
  if (!qa.normalized || !qo.normalized)
    throw ValidationError("spectrum_kl: spectra must be normalized");
  if (qa.freqs.size() != qo.freqs.size())
    throw ValidationError("spectrum_kl: frequency grids differ in size");
  for (std::size_t i = 0; i < qa.freqs.size(); ++i)
    if (std::abs(qa.freqs[i] - qo.freqs[i]) > 1e-12)
      throw ValidationError("spectrum_kl: frequency grids differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < qa.power.size(); ++i) {
    const double a = std::max(qa.power[i], kLogEps);
    const double o = std::max(qo.power[i], kLogEps);
    kl += qa.power[i] * (std::log(a) - std::log(o));
  }
  // KL is nonnegative; rounding may leave a tiny negative residue.
  return std::max(kl, 0.0);
}

double dominant_frequency(const std::vector<double>& x, double fps,
                          double band_lo, double band_hi, int zero_pad) {
  const Spectrum sp = power_spectrum(x, fps, band_lo, band_hi, zero_pad, false);
  std::size_t best = 0;
  for (std::size_t i = 1; i < sp.power.size(); ++i)
    if (sp.power[i] > sp.power[best]) best = i;  // ties keep the lower bin
  return sp.freqs[best];
}

SelfSimilarityMatrix self_similarity(const std::vector<double>& x, int s) {
  const int t = static_cast<int>(x.size());
  if (s < 2) throw ValidationError("self_similarity: window length s < 2");
  if (t < s) throw ValidationError("self_similarity: signal shorter than window");
  const int k = t - s + 1;

  // Normalized window matrix, then one Gram product.
  Eigen::MatrixXd u(k, s);
  SelfSimilarityMatrix out;
  out.s = s;
  std::vector<bool> ok(k, true);
  for (int i = 0; i < k; ++i) {
    const double nrm = std::sqrt(
        kernels::reduce_sumsq(static_cast<std::size_t>(s), x.data() + i));
    if (nrm <= kNormEps) {
      ok[i] = false;
      out.has_zero_norm_window = true;
      u.row(i).setZero();
      continue;
    }
    for (int j = 0; j < s; ++j) u(i, j) = x[i + j] / nrm;
  }
  out.m.resize(k, k);
  // Row-major buffers for the kernel GEMM: M = U * U^T.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ur = u;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mr(k, k);
  kernels::gemm<double>(false, true, k, k, s, 1.0, ur.data(), s, ur.data(), s,
                        0.0, mr.data(), k);
  out.m = mr;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j)
      out.m(i, j) = std::clamp(out.m(i, j), -1.0, 1.0);
    out.m(i, i) = ok[i] ? 1.0 : 0.0;
  }
  return out;
}

std::vector<double> amplitude_envelope(const std::vector<double>& x, double fps,
                                       double smooth_s) {
  if (x.size() < 4) throw ValidationError("amplitude_envelope: series too short");
  const double m = mean(x);
  std::vector<double> rect(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rect[i] = std::abs(x[i] - m);

  const int w = std::max<int>(1, static_cast<int>(std::lround(smooth_s * fps)));
  const int half = w / 2;
  const int n = static_cast<int>(x.size());
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += rect[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::vector<double> band_pass(const std::vector<double>& x, double fps,
                              double lo, double hi) {
  const std::size_t n = x.size();
  if (n < 8) throw ValidationError("band_pass: series too short");
  const double m = mean(x);
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {x[i] - m, 0.0};
  std::vector<std::complex<double>> y;
  fft(buf, y);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = std::min(static_cast<double>(k),
                              static_cast<double>(n - k)) *
                     fps / static_cast<double>(n);
    if (f < lo || f > hi) y[k] = {0.0, 0.0};
  }
  std::vector<std::complex<double>> back;
  ifft(y, back);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = back[i].real();
  return out;
}

std::vector<std::size_t> detect_peaks(const std::vector<double>& x, double fps,
                                      double min_sep_s, double prom_frac) {
  const int n = static_cast<int>(x.size());
  if (n < 3) return {};
  double mn, mx;
  kernels::minmax(x.size(), x.data(), &mn, &mx);
  const double range = mx - mn;
  if (range <= kNormEps) return {};
  const double prom_min = prom_frac * range;

  std::vector<int> cand;
  for (int i = 1; i + 1 < n; ++i)
    if (x[i] > x[i - 1] && x[i] >= x[i + 1]) cand.push_back(i);

  // Topographic prominence: scan to the nearest higher sample on each side,
  // tracking the deepest valley crossed.
  std::vector<int> keep;
  for (int i : cand) {
    double left_min = x[i], right_min = x[i];
    for (int j = i - 1; j >= 0; --j) {
      left_min = std::min(left_min, x[j]);
      if (x[j] > x[i]) break;
    }
    for (int j = i + 1; j < n; ++j) {
      right_min = std::min(right_min, x[j]);
      if (x[j] > x[i]) break;
    }
    if (x[i] - std::max(left_min, right_min) >= prom_min) keep.push_back(i);
  }

  // Greedy minimum separation, highest peaks first.
  std::sort(keep.begin(), keep.end(),
            [&](int a, int b) { return x[a] != x[b] ? x[a] > x[b] : a < b; });
  const double min_sep = min_sep_s * fps;
  std::vector<int> accepted;
  for (int i : keep) {
    bool ok = true;
    for (int j : accepted)
      if (std::abs(i - j) < min_sep) {
        ok = false;
        break;
      }
    if (ok) accepted.push_back(i);
  }
  std::sort(accepted.begin(), accepted.end());
  return std::vector<std::size_t>(accepted.begin(), accepted.end());
}

HrvMetrics hrv_from_ibi(const std::vector<double>& times,
                        const std::vector<double>& ibis) {
  if (times.size() != ibis.size() || times.size() < 2)
    throw ValidationError("hrv_from_ibi: need at least 2 IBI samples");

  constexpr double kFs = 4.0;
  const double t0 = times.front(), t1 = times.back();
  const auto m = static_cast<std::size_t>(std::floor((t1 - t0) * kFs)) + 1;
  if (m < 32)
    throw ValidationError("hrv_from_ibi: IBI span too short for spectral analysis");

  CubicSpline spline(times, ibis);
  std::vector<double> series(m);
  for (std::size_t i = 0; i < m; ++i)
    series[i] = spline.eval(t0 + static_cast<double>(i) / kFs);

  Spectrum sp;
  try {
    sp = power_spectrum(series, kFs, 0.04, 0.4, 8, false);
  } catch (const NumericError&) {
    throw NumericError("hrv_from_ibi: insufficient variability");
  }
  double lf = 0.0, hf = 0.0;
  for (std::size_t i = 0; i < sp.freqs.size(); ++i) {
    if (sp.freqs[i] < 0.15)
      lf += sp.power[i];
    else
      hf += sp.power[i];
  }
  if (lf + hf < 1e-10) throw NumericError("hrv_from_ibi: insufficient variability");

  HrvMetrics out;
  out.lfnu = lf / (lf + hf);
  out.hfnu = hf / (lf + hf);
  out.lf_over_hf = lf / std::max(hf, kNormEps);
  return out;
}

HrvMetrics hrv_metrics(const std::vector<double>& bvp, double fps) {
  const auto peaks = detect_peaks(bvp, fps, 60.0 / 240.0, 0.1);
  if (peaks.size() < 2)
    throw ValidationError("hrv_metrics: fewer than 2 peaks detected");
  std::vector<double> times, ibis;
  for (std::size_t k = 1; k < peaks.size(); ++k) {
    times.push_back(static_cast<double>(peaks[k]) / fps);
    ibis.push_back(static_cast<double>(peaks[k] - peaks[k - 1]) / fps);
  }
  if (times.size() < 2)
    throw ValidationError("hrv_metrics: fewer than 2 IBI samples");
  return hrv_from_ibi(times, ibis);
}

CubicSpline::CubicSpline(std::vector<double> t, std::vector<double> y)
    : t_(std::move(t)), y_(std::move(y)) {
  const std::size_t n = t_.size();
  if (n != y_.size() || n < 2)
    throw ValidationError("CubicSpline: need >= 2 knots");
  for (std::size_t i = 1; i < n; ++i)
    if (!(t_[i] > t_[i - 1]))
      throw ValidationError("CubicSpline: knots must be strictly increasing");

  m_.assign(n, 0.0);
  if (n == 2) return;  // degenerates to linear

  // Natural spline: tridiagonal system for interior second derivatives.
  std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = t_[i] - t_[i - 1];
    const double h1 = t_[i + 1] - t_[i];
    a[i] = h0;
    b[i] = 2.0 * (h0 + h1);
    c[i] = h1;
    d[i] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
  }
  // Thomas algorithm over i = 1..n-2.
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    d[i] -= w * d[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m_[i] = (d[i] - c[i] * (i + 2 < n ? m_[i + 1] : 0.0)) / b[i];
    if (i == 1) break;
  }
}

double CubicSpline::eval(double t) const {
  const std::size_t n = t_.size();
  t = std::clamp(t, t_.front(), t_.back());
  std::size_t i =
      std::upper_bound(t_.begin(), t_.end(), t) - t_.begin();
  i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
  const double h = t_[i + 1] - t_[i];
  const double u = t - t_[i];
  const double v = t_[i + 1] - t;
  return (m_[i] * v * v * v + m_[i + 1] * u * u * u) / (6.0 * h) +
         (y_[i] / h - m_[i] * h / 6.0) * v + (y_[i + 1] / h - m_[i + 1] * h / 6.0) * u;
}

}  // namespace gap::signal

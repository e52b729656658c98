#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace gap::signal {

// Frequency bands, in Hz. The pulse band covers 40-240 bpm, the conventional
// rPPG range; the respiratory band covers 6-30 breaths/min.
inline constexpr double kHrBandLo = 0.66;
inline constexpr double kHrBandHi = 4.0;
inline constexpr double kRrBandLo = 0.1;
inline constexpr double kRrBandHi = 0.5;

void fft(const std::vector<std::complex<double>>& in,
         std::vector<std::complex<double>>& out);
void ifft(const std::vector<std::complex<double>>& in,
          std::vector<std::complex<double>>& out);

struct Spectrum {
  std::vector<double> freqs;  // Hz, strictly increasing
  std::vector<double> power;  // nonnegative
  double band_lo = 0.0;
  double band_hi = 0.0;
  bool normalized = false;
};

// Hann-windowed periodogram of the mean-removed signal, restricted to
// [band_lo, band_hi]. zero_pad multiplies the FFT length, refining the bin
// spacing to fps / (zero_pad * n). Throws NumericError on a constant signal
// and ValidationError when the band holds no bins.
Spectrum power_spectrum(const std::vector<double>& x, double fps,
                        double band_lo, double band_hi, int zero_pad = 8,
                        bool normalize = false);

// KL divergence sum_k Qa_k (ln Qa_k - ln Qo_k) over matching grids, both
// normalized, with the 1e-8 floor inside the logarithms.
double spectrum_kl(const Spectrum& qa, const Spectrum& qo);

// Frequency of the largest in-band PSD bin; ties break toward the lower
// frequency.
double dominant_frequency(const std::vector<double>& x, double fps,
                          double band_lo, double band_hi, int zero_pad = 8);

struct SelfSimilarityMatrix {
  Eigen::MatrixXd m;  // (T-s+1) x (T-s+1), entries in [-1, 1]
  int s = 0;          // window length in samples
  bool has_zero_norm_window = false;
};

// Cosine similarity between every pair of length-s sliding windows
// (step 1). Zero-norm windows contribute 0 rows/columns and set the flag.
SelfSimilarityMatrix self_similarity(const std::vector<double>& x, int s);

// |x - mean| smoothed with a centered boxcar of smooth_s seconds; recovers
// the amplitude-modulation envelope of a pulse signal.
std::vector<double> amplitude_envelope(const std::vector<double>& x, double fps,
                                       double smooth_s = 0.5);

// Zero-phase band-pass: mean removal, FFT bin masking to [lo, hi], inverse
// transform. Output is zero-mean.
std::vector<double> band_pass(const std::vector<double>& x, double fps,
                              double lo, double hi);

// Local maxima at least min_sep_s apart (greedy, highest first) whose
// topographic prominence exceeds prom_frac of the signal range. Returned
// indices are sorted.
std::vector<std::size_t> detect_peaks(const std::vector<double>& x, double fps,
                                      double min_sep_s = 0.25,
                                      double prom_frac = 0.1);

struct HrvMetrics {
  double lfnu = 0.0;
  double hfnu = 0.0;
  double lf_over_hf = 0.0;
};

// LF [0.04,0.15) Hz and HF [0.15,0.4] Hz powers of the 4 Hz cubic-spline
// resampled inter-beat-interval series. Throws NumericError("insufficient
// variability") when LF+HF vanishes (metronomic IBI).
HrvMetrics hrv_from_ibi(const std::vector<double>& times,
                        const std::vector<double>& ibis);

// Peak-detect the BVP waveform, build the IBI series, then hrv_from_ibi.
HrvMetrics hrv_metrics(const std::vector<double>& bvp, double fps);

// Natural cubic spline through (t_i, y_i); evaluation clamps t to the knot
// span, so endpoints are preserved under resampling.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> t, std::vector<double> y);
  double eval(double t) const;

 private:
  std::vector<double> t_, y_, m_;  // m_: second derivatives at knots
};

double mean(const std::vector<double>& x);
double stdev_population(const std::vector<double>& x);
double pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gap::signal

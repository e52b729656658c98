#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gap/stmap.hpp"
#include "gap/tensor.hpp"

namespace gap::classical {

// PSD peak-to-mean ratio below which an HR estimate is flagged unreliable.
// Clean pulses measure >= 18 and in-band white noise <= 8 on synthetic
// realizations (see tests/test_classical.cpp), so 12 splits them cleanly.
inline constexpr double kLowConfidencePar = 12.0;

struct PulseEstimate {
  std::vector<double> signal;  // zero-mean, band-limited
  double hr_bpm = 0.0;
  std::string method;
  double confidence = 0.0;  // peak-to-mean in-band PSD ratio
  bool low_confidence = false;
};

// ROI-averaged green channel, detrended and band-passed to the pulse band;
// HR is the refined PSD peak. Throws NumericError on a constant map.
// CHROM/POS expect maps whose channels keep their physical gain relations
// (raw trace maps); per-row normalization flattens the ratios they project.
PulseEstimate green_pulse(const stmap::STMap& map);

// Projection methods computed in sliding 1.6 s windows with Hann overlap-add
// after per-window temporal normalization of each channel:
//   CHROM: X = 3R - 2G, Y = 1.5R + G - 1.5B, S = X - (sX/sY) Y
//   POS:   S1 = G - B, S2 = -2R + G + B,     S = S1 + (s1/s2) S2
// Windows with a vanishing denominator are skipped (counted in
// *skipped_windows when given).
PulseEstimate chrom_pulse(const stmap::STMap& map, int* skipped_windows = nullptr);
PulseEstimate pos_pulse(const stmap::STMap& map, int* skipped_windows = nullptr);

struct RorSeries {
  std::vector<double> values;
  std::vector<double> times;  // window centers, seconds
  int dropped_windows = 0;
};

// Ratio-of-ratios per non-overlapping window on the ROI-averaged,
// un-normalized traces: RoR = (AC_1/DC_1)/(AC_2/DC_2) with AC the population
// standard deviation and DC the mean. Channel indices default to (red, blue).
RorSeries ror_series(const stmap::RoiTraceClip& clip, double window_s = 1.0,
                     int ch1 = 0, int ch2 = 2);

// Same computation on a raw (t, w, c) trace map at the given fps.
RorSeries ror_series_map(const Tensor& raw, double fps, double window_s = 1.0,
                         int ch1 = 0, int ch2 = 2);

struct SpO2Calibration {
  double intercept = 0.0;  // percent
  double slope = 0.0;      // percent per RoR unit
  double fit_r2 = 0.0;
};

// Ordinary least squares of SpO2 against RoR. Throws on fewer than 2
// distinct RoR values.
SpO2Calibration fit_spo2_calibration(
    const std::vector<std::pair<double, double>>& ror_spo2_pairs);

// intercept + slope * ror, clamped to [50, 100].
double apply_calibration(const SpO2Calibration& cal, double ror);

}  // namespace gap::classical

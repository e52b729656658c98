#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gap/tensor.hpp"

namespace gap::stmap {

inline constexpr double kTargetFps = 30.0;
inline constexpr int kDefaultWindow = 256;
inline constexpr int kDefaultStride = 10;
inline constexpr int kModelRows = 64;

// Per-ROI RGB means over time, before resampling or normalization.
struct RoiTraceClip {
  Tensor traces;  // R x F x 3
  double fps = 0.0;
  std::string subject_id;
  std::string domain_id;
  std::string clip_id;

  std::size_t rois() const { return traces.dim(0); }
  std::size_t frames() const { return traces.dim(1); }
  void validate() const;
};

// Normalized spatio-temporal map, T x W x 3 in [0, 1] at 30 fps.
struct STMap {
  Tensor data;
  double fps = kTargetFps;
  std::string clip_id;
  std::size_t start_index = 0;        // window offset into the source clip
  bool has_degenerate_rows = false;   // constant rows were filled with 0.5

  std::size_t t() const { return data.dim(0); }
  std::size_t w() const { return data.dim(1); }
};

// Mask order follows (bvp, hr, rr, spo2).
struct VitalLabels {
  std::vector<double> bvp;
  double hr_bpm = 0.0;
  double rr_bpm = 0.0;
  double spo2_pct = 0.0;
  bool has_bvp = false;
  bool has_hr = false;
  bool has_rr = false;
  bool has_spo2 = false;

  void validate() const;
};

// Cubic-spline resampling onto a uniform 30 Hz grid covering the original
// duration (output length = round(n * 30 / fps)); endpoint values are
// preserved. Throws on fewer than 4 samples or non-finite input.
std::vector<double> resample_to_30fps(const std::vector<double>& x, double fps);

// Resample every ROI/channel trace to 30 fps, then min-max normalize each
// (row, channel) series over the full clip. Constant series become 0.5 and
// set has_degenerate_rows.
STMap traces_to_stmap(const RoiTraceClip& clip);

// Windows at starts 0, stride, 2*stride, ... while start+window <= T.
// Returns an empty list (and sets *warned_too_short) when T < window.
std::vector<STMap> window_stmap(const STMap& map, int window = kDefaultWindow,
                                int stride = kDefaultStride,
                                bool* warned_too_short = nullptr);

// Linear interpolation along the ROI axis only (align-corners); T and
// channels untouched; output clamped to [0, 1].
STMap resize_rows(const STMap& map, int out_w = kModelRows);

}  // namespace gap::stmap

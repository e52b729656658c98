#include "gap/stmap.hpp"

#include <algorithm>
#include <cmath>

#include "gap/common.hpp"
#include "gap/kernels/kernels.hpp"
#include "gap/signal.hpp"

namespace gap::stmap {

void RoiTraceClip::validate() const {
  if (traces.ndim() != 3 || traces.dim(2) != 3)
    throw ValidationError("RoiTraceClip: traces must be R x F x 3");
  if (rois() < 1 || frames() < 2)
    throw ValidationError("RoiTraceClip: need R >= 1 and F >= 2");
  if (!(fps > 0.0)) throw ValidationError("RoiTraceClip: fps must be positive");
  for (std::size_t i = 0; i < traces.size(); ++i)
    if (!std::isfinite(traces[i]))
      throw ValidationError("RoiTraceClip: non-finite trace value");
}

void VitalLabels::validate() const {
  if (has_bvp && bvp.empty())
    throw ValidationError("VitalLabels: bvp mask set but series empty");
  if (!has_bvp && !bvp.empty())
    throw ValidationError("VitalLabels: bvp present but mask unset");
  if (has_hr && (hr_bpm < 30.0 || hr_bpm > 240.0))
    throw ValidationError("VitalLabels: hr outside [30, 240]");
  if (has_rr && (rr_bpm < 4.0 || rr_bpm > 60.0))
    throw ValidationError("VitalLabels: rr outside [4, 60]");
  if (has_spo2 && (spo2_pct < 50.0 || spo2_pct > 100.0))
    throw ValidationError("VitalLabels: spo2 outside [50, 100]");
}

std::vector<double> resample_to_30fps(const std::vector<double>& x, double fps) {
  if (x.size() < 4)
    throw ValidationError("resample_to_30fps: cubic spline needs >= 4 samples");
  if (!(fps > 0.0)) throw ValidationError("resample_to_30fps: fps must be positive");
  for (double v : x)
    if (!std::isfinite(v)) throw ValidationError("resample_to_30fps: non-finite value");

  const std::size_t n = x.size();
  const auto m = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * kTargetFps / fps));
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) / fps;

  signal::CubicSpline spline(t, x);
  std::vector<double> out(m);
  for (std::size_t k = 0; k < m; ++k)
    out[k] = spline.eval(static_cast<double>(k) / kTargetFps);
  return out;
}

STMap traces_to_stmap(const RoiTraceClip& clip) {
  clip.validate();
  const std::size_t r = clip.rois();

  // Resample first so every row shares the 30 fps grid.
  std::vector<std::vector<double>> series(r * 3);
  std::size_t t_out = 0;
  for (std::size_t w = 0; w < r; ++w) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> raw(clip.frames());
      for (std::size_t f = 0; f < clip.frames(); ++f) raw[f] = clip.traces.at(w, f, c);
      auto& dst = series[w * 3 + c];
      dst = (clip.fps == kTargetFps) ? std::move(raw)
                                     : resample_to_30fps(raw, clip.fps);
      t_out = dst.size();
    }
  }

  STMap map;
  map.clip_id = clip.clip_id;
  map.data = Tensor({t_out, r, 3});
  for (std::size_t w = 0; w < r; ++w) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& s = series[w * 3 + c];
      double mn, mx;
      kernels::minmax(s.size(), s.data(), &mn, &mx);
      const double range = mx - mn;
      if (range <= kNormEps) {
        for (std::size_t t = 0; t < t_out; ++t) map.data.at(t, w, c) = 0.5;
        map.has_degenerate_rows = true;
      } else {
        for (std::size_t t = 0; t < t_out; ++t)
          map.data.at(t, w, c) = (s[t] - mn) / range;
      }
    }
  }
  return map;
}

std::vector<STMap> window_stmap(const STMap& map, int window, int stride,
                                bool* warned_too_short) {
  if (window < 2 || stride < 1)
    throw ValidationError("window_stmap: invalid window/stride");
  if (warned_too_short) *warned_too_short = false;
  const auto t = static_cast<int>(map.t());
  std::vector<STMap> out;
  if (t < window) {
    if (warned_too_short) *warned_too_short = true;
    return out;
  }
  const std::size_t w = map.w();
  for (int start = 0; start + window <= t; start += stride) {
    STMap win;
    win.fps = map.fps;
    win.clip_id = map.clip_id;
    win.start_index = map.start_index + static_cast<std::size_t>(start);
    win.has_degenerate_rows = map.has_degenerate_rows;
    win.data = Tensor({static_cast<std::size_t>(window), w, 3});
    for (int tt = 0; tt < window; ++tt)
      for (std::size_t ww = 0; ww < w; ++ww)
        for (std::size_t c = 0; c < 3; ++c)
          win.data.at(tt, ww, c) = map.data.at(start + tt, ww, c);
    out.push_back(std::move(win));
  }
  return out;
}

STMap resize_rows(const STMap& map, int out_w) {
  const std::size_t in_w = map.w();
  if (in_w < 2) throw ValidationError("resize_rows: need at least 2 input rows");
  if (out_w < 2) throw ValidationError("resize_rows: need at least 2 output rows");
  const std::size_t t = map.t();

  STMap out;
  out.fps = map.fps;
  out.clip_id = map.clip_id;
  out.start_index = map.start_index;
  out.has_degenerate_rows = map.has_degenerate_rows;
  out.data = Tensor({t, static_cast<std::size_t>(out_w), 3});

  const double scale = static_cast<double>(in_w - 1) / static_cast<double>(out_w - 1);
  for (int w = 0; w < out_w; ++w) {
    const double pos = static_cast<double>(w) * scale;
    const auto i0 = std::min(static_cast<std::size_t>(pos), in_w - 2);
    const double frac = pos - static_cast<double>(i0);
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1.0 - frac) * map.data.at(tt, i0, c) +
                         frac * map.data.at(tt, i0 + 1, c);
        out.data.at(tt, w, c) = std::clamp(v, 0.0, 1.0);
      }
  }
  return out;
}

}  // namespace gap::stmap

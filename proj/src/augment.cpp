#include "gap/augment.hpp"

#include <algorithm>
#include <cmath>

namespace gap::augment {

namespace {

stmap::STMap cut_window(const stmap::STMap& clip_map, std::size_t start,
                        std::size_t window) {
  if (start + window > clip_map.t())
    throw ValidationError("cut_window: window exceeds clip length");
  stmap::STMap out;
  out.fps = clip_map.fps;
  out.clip_id = clip_map.clip_id;
  out.start_index = clip_map.start_index + start;
  out.has_degenerate_rows = clip_map.has_degenerate_rows;
  const std::size_t w = clip_map.w();
  out.data = Tensor({window, w, 3});
  for (std::size_t t = 0; t < window; ++t)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        out.data.at(t, j, c) = clip_map.data.at(start + t, j, c);
  return out;
}

}  // namespace

stmap::STMap temporal_offset(const stmap::STMap& clip_map, std::size_t start,
                             std::size_t window, int delta_t, bool* clamped) {
  if (delta_t < 0) throw ValidationError("temporal_offset: negative delta_t");
  if (start + window > clip_map.t())
    throw ValidationError("temporal_offset: base window exceeds clip");
  const std::size_t max_shift = clip_map.t() - window - start;
  std::size_t shift = static_cast<std::size_t>(delta_t);
  if (clamped) *clamped = false;
  if (shift > max_shift) {
    shift = max_shift;
    if (clamped) *clamped = true;
  }
  return cut_window(clip_map, start + shift, window);
}

stmap::STMap spatial_permutation(const stmap::STMap& map,
                                 const std::vector<std::size_t>& perm) {
  const std::size_t w = map.w();
  if (perm.size() != w)
    throw ValidationError("spatial_permutation: permutation size mismatch");
  std::vector<bool> seen(w, false);
  for (std::size_t p : perm) {
    if (p >= w || seen[p])
      throw ValidationError("spatial_permutation: not a bijection");
    seen[p] = true;
  }
  stmap::STMap out = map;
  for (std::size_t t = 0; t < map.t(); ++t)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        out.data.at(t, perm[j], c) = map.data.at(t, j, c);
  return out;
}

stmap::STMap component_scaling(const stmap::STMap& map, double gamma,
                               ScalingMode mode, int* degenerate_rows) {
  stmap::STMap out = map;
  const std::size_t t = map.t(), w = map.w();
  int degenerate = 0;
  for (std::size_t j = 0; j < w; ++j) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (mode == ScalingMode::kRatioPreserving) {
        for (std::size_t i = 0; i < t; ++i)
          out.data.at(i, j, c) = gamma * map.data.at(i, j, c);
        continue;
      }
      double mu = 0.0;
      for (std::size_t i = 0; i < t; ++i) mu += map.data.at(i, j, c);
      mu /= static_cast<double>(t);
      double var = 0.0;
      for (std::size_t i = 0; i < t; ++i) {
        const double d = map.data.at(i, j, c) - mu;
        var += d * d;
      }
      const double sigma = std::sqrt(var / static_cast<double>(t));
      if (sigma <= kNormEps) {
        ++degenerate;  // row left untouched
        continue;
      }
      for (std::size_t i = 0; i < t; ++i)
        out.data.at(i, j, c) =
            gamma * (map.data.at(i, j, c) - mu) / sigma + gamma * mu;
    }
  }
  if (degenerate_rows) *degenerate_rows = degenerate;
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1],
              perm[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
  return perm;
}

AugmentedPair make_pair(const stmap::STMap& clip_map, std::size_t window_start,
                        std::size_t window, const stmap::VitalLabels* labels,
                        const AugmentConfig& cfg, Rng& rng, int resize_to) {
  AugmentedPair pair;
  pair.labels = labels;
  pair.xo = cut_window(clip_map, window_start, window);

  auto& rec = pair.record;
  rec.applied_offset = rng.uniform() < cfg.p_offset;
  if (rec.applied_offset)
    rec.delta_t = static_cast<int>(rng.uniform_int(0, cfg.delta_t_max));
  pair.xa = temporal_offset(clip_map, window_start, window,
                            rec.applied_offset ? rec.delta_t : 0,
                            &rec.offset_clamped);

  if (resize_to > 0) {
    pair.xo = stmap::resize_rows(pair.xo, resize_to);
    pair.xa = stmap::resize_rows(pair.xa, resize_to);
  }

  rec.applied_perm = rng.uniform() < cfg.p_perm;
  rec.perm.resize(pair.xa.w());
  for (std::size_t i = 0; i < rec.perm.size(); ++i) rec.perm[i] = i;
  if (rec.applied_perm) {
    rec.perm = random_permutation(pair.xa.w(), rng);
    pair.xa = spatial_permutation(pair.xa, rec.perm);
  }

  rec.applied_scale = rng.uniform() < cfg.p_scale;
  if (rec.applied_scale) {
    rec.gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
    pair.xa = component_scaling(pair.xa, rec.gamma, cfg.scaling_mode,
                                &rec.degenerate_rows_skipped);
  }
  return pair;
}

}  // namespace gap::augment

#pragma once

#include <cstddef>
#include <vector>

#include "gap/common.hpp"
#include "gap/stmap.hpp"

namespace gap::augment {

enum class ScalingMode {
  kAsWritten,        // x' = g*(x - mu)/sigma + g*mu  (output std is exactly g)
  kRatioPreserving,  // x' = g*x                      (pure gain)
};

struct AugmentConfig {
  int delta_t_max = 30;
  double gamma_min = 0.8;
  double gamma_max = 2.2;
  double p_offset = 1.0;
  double p_perm = 1.0;
  double p_scale = 1.0;
  ScalingMode scaling_mode = ScalingMode::kAsWritten;
};

struct AugmentationRecord {
  int delta_t = 0;
  std::vector<std::size_t> perm;  // identity when permutation not applied
  double gamma = 1.0;
  bool applied_offset = false;
  bool applied_perm = false;
  bool applied_scale = false;
  bool offset_clamped = false;
  int degenerate_rows_skipped = 0;
};

// xo and xa share the label object; augmentation is label-preserving by
// construction, so `labels` is a reference, not a copy.
struct AugmentedPair {
  stmap::STMap xo;
  stmap::STMap xa;
  AugmentationRecord record;
  const stmap::VitalLabels* labels = nullptr;
};

// Re-cut the window at start+delta_t from the full-length clip map. A shift
// past the clip tail is clamped (flagged via *clamped).
stmap::STMap temporal_offset(const stmap::STMap& clip_map, std::size_t start,
                             std::size_t window, int delta_t,
                             bool* clamped = nullptr);

// Rows reordered by perm: out[perm[i]] = in[i]. perm must be a bijection
// over the map's W rows.
stmap::STMap spatial_permutation(const stmap::STMap& map,
                                 const std::vector<std::size_t>& perm);

// Per (row, channel) moment rescaling. In the default mode the output mean
// is gamma*mu and the output standard deviation is exactly gamma; the
// normalized non-DC power spectrum is unchanged (affine map). Degenerate
// rows (sigma ~ 0) are left untouched and counted. Values may leave [0, 1];
// they are not re-clamped.
stmap::STMap component_scaling(const stmap::STMap& map, double gamma,
                               ScalingMode mode = ScalingMode::kAsWritten,
                               int* degenerate_rows = nullptr);

// Offset -> permutation -> scaling, each fired with its configured
// probability; all sampled parameters land in the record. resize_to > 0
// resizes both maps to that many rows before permutation/scaling.
AugmentedPair make_pair(const stmap::STMap& clip_map, std::size_t window_start,
                        std::size_t window, const stmap::VitalLabels* labels,
                        const AugmentConfig& cfg, Rng& rng, int resize_to = 0);

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

}  // namespace gap::augment

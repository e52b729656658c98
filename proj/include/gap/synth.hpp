#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gap/common.hpp"
#include "gap/stm1_io.hpp"
#include "gap/stmap.hpp"
#include "gap/tensor.hpp"

namespace gap::synth {

// Per-person optical/physiological identity. The linear RoR law
// spo2 = intercept + slope * RoR (slope < 0) is the injected individual
// bias that personalization is expected to recover.
struct SubjectProfile {
  std::string subject_id;
  double spo2_intercept = 110.0;  // percent
  double spo2_slope = -25.0;      // percent per RoR unit
  std::array<double, 3> channel_gains = {1.0, 1.0, 1.0};
  double bvp_harmonic_phase = 0.0;  // radians
  double baseline_hr_bpm = 75.0;
  double baseline_rr_bpm = 15.0;

  void validate() const;
};

// Recording-condition shifts: static gain, camera gamma, sensor noise, head
// motion events, and a slow multiplicative illumination drift.
struct DomainProfile {
  std::string domain_id;
  double illumination_gain = 1.0;
  double gamma = 1.0;  // in [0.5, 2.5]
  double noise_std = 0.0;
  double motion_rate = 0.0;  // events per minute
  double drift_amp = 0.0;    // relative amplitude of the illumination drift
  double drift_freq_lo = 0.05;  // Hz; raise into the pulse band for flicker
  double drift_freq_hi = 0.12;
  std::vector<bool> label_mask = {true, true, true, true};  // (bvp,hr,rr,spo2)

  void validate() const;
};

struct VitalsTrajectory {
  double hr_bpm = 75.0;  // mean heart rate over the clip
  double rr_bpm = 15.0;
  double spo2_pct = 97.0;
  double hr_mod_depth = 0.0;  // relative slow modulation of instantaneous HR
  double hr_mod_freq = 0.1;   // Hz
};

// Two-harmonic pulse waveform, amplitude-modulated by respiration:
//   s(t) = [1 + 0.25 sin(2 pi f_rr t)] [sin(phi(t)) + 0.35 sin(2 phi(t) + phase)]
// with phi(t) = 2 pi \int f_hr, made zero-mean over the clip. With a constant
// trajectory the dominant PSD peak sits at hr/60 Hz with respiratory
// sidebands at f_hr +- f_rr.
std::vector<double> synth_bvp(double hr_bpm, double rr_bpm, double duration_s,
                              double fps = 30.0, double phase = 0.0);
std::vector<double> synth_bvp_traj(const VitalsTrajectory& traj,
                                   double duration_s, double fps, double phase);

struct ClipResult {
  stmap::RoiTraceClip clip;
  stmap::VitalLabels labels;
  Tensor clean_traces;  // pre-noise, pre-motion traces for oracle checks
};

// Per-ROI traces DC_c * roi_gain * (1 + a_c bvp + d_resp resp) * (1 + drift),
// channel amplitudes fixed so the subject's RoR law maps the target SpO2 to
// RoR = (intercept - spo2) / (-slope); then gain, gamma, motion, noise.
// Throws when the SpO2 target is infeasible under the subject's law.
ClipResult generate_clip(const SubjectProfile& subject,
                         const DomainProfile& domain,
                         const VitalsTrajectory& vitals, double duration_s,
                         Rng& rng, int rois = 25);

struct DatasetDomainSpec {
  DomainProfile profile;
  int subjects = 5;
  int clips_per_subject = 6;
};

struct DatasetSpec {
  std::vector<DatasetDomainSpec> domains;
  double clip_duration_s = 10.0;
  int rois = 25;
  bool emit_raw_traces = true;
  double hr_mod_depth = 0.0;
  std::uint64_t seed = 0;
  // Subject randomization ranges.
  double intercept_lo = 104.0, intercept_hi = 116.0;
  double slope_lo = -28.0, slope_hi = -22.0;
  double spo2_lo = 90.5, spo2_hi = 99.0;
  double hr_lo = 48.0, hr_hi = 150.0;
};

SubjectProfile random_subject(const std::string& id, const DatasetSpec& spec,
                              Rng& rng);

// Writes <out_dir>/<domain>/<clip>.stm1 (+ sidecar, + optional .raw.stm1)
// and manifest.json. Deterministic for a fixed spec/seed.
stm1::Manifest generate_dataset(const DatasetSpec& spec,
                                const std::string& out_dir);

// The four-domain desk benchmark: three partially labeled source domains
// (one without RR, one without SpO2) and one fully labeled held-out target.
DatasetSpec desk_benchmark_spec(std::uint64_t seed);

}  // namespace gap::synth

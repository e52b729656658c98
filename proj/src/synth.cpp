#include "gap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "gap/kernels/kernels.hpp"

namespace gap::synth {

namespace {

constexpr double kTwoPi = 6.28318530717958647692529;

// Relative pulsatile amplitudes. Green carries the strongest pulse; the red
// amplitude is the fixed reference of the RoR law and blue is derived from
// the target RoR.
constexpr double kRedAc = 0.02;
constexpr double kGreenAc = 0.045;
constexpr double kRespAc = 0.006;
constexpr std::array<double, 3> kBaseDc = {0.75, 0.55, 0.40};

int poisson_knuth(double lambda, Rng& rng) {
  if (lambda <= 0.0) return 0;
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

}  // namespace

void SubjectProfile::validate() const {
  if (!(spo2_slope < 0.0))
    throw ValidationError("SubjectProfile: slope must be negative");
  for (double g : channel_gains)
    if (!(g > 0.0)) throw ValidationError("SubjectProfile: gains must be positive");
}

void DomainProfile::validate() const {
  if (!(illumination_gain > 0.0))
    throw ValidationError("DomainProfile: gain must be positive");
  if (gamma < 0.5 || gamma > 2.5)
    throw ValidationError("DomainProfile: gamma outside [0.5, 2.5]");
  if (noise_std < 0.0) throw ValidationError("DomainProfile: negative noise_std");
  if (drift_amp < 0.0 || drift_amp >= 1.0)
    throw ValidationError("DomainProfile: drift_amp outside [0, 1)");
  if (!(drift_freq_lo > 0.0) || !(drift_freq_hi >= drift_freq_lo))
    throw ValidationError("DomainProfile: bad drift frequency range");
  if (label_mask.size() != 4)
    throw ValidationError("DomainProfile: label_mask must have 4 entries");
}

std::vector<double> synth_bvp_traj(const VitalsTrajectory& traj,
                                   double duration_s, double fps,
                                   double phase) {
  if (traj.hr_bpm < 30.0 || traj.hr_bpm > 240.0)
    throw ValidationError("synth_bvp: hr outside [30, 240]");
  if (traj.rr_bpm < 4.0 || traj.rr_bpm > 60.0)
    throw ValidationError("synth_bvp: rr outside [4, 60]");
  if (!(duration_s > 0.0) || !(fps > 0.0))
    throw ValidationError("synth_bvp: duration and fps must be positive");

  const auto n = static_cast<std::size_t>(std::llround(duration_s * fps));
  const double f_hr = traj.hr_bpm / 60.0;
  const double f_rr = traj.rr_bpm / 60.0;

  std::vector<double> s(n);
  double phi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double inst = f_hr * (1.0 + traj.hr_mod_depth *
                                          std::sin(kTwoPi * traj.hr_mod_freq * t));
    const double am = 1.0 + 0.25 * std::sin(kTwoPi * f_rr * t);
    const double carrier = std::sin(phi) + 0.35 * std::sin(2.0 * phi + phase);
    s[i] = am * carrier;
    phi += kTwoPi * inst / fps;
  }
  const double m =
      kernels::reduce_sum(n, s.data()) / static_cast<double>(n);
  for (double& v : s) v -= m;
  return s;
}

std::vector<double> synth_bvp(double hr_bpm, double rr_bpm, double duration_s,
                              double fps, double phase) {
  VitalsTrajectory traj;
  traj.hr_bpm = hr_bpm;
  traj.rr_bpm = rr_bpm;
  return synth_bvp_traj(traj, duration_s, fps, phase);
}

ClipResult generate_clip(const SubjectProfile& subject,
                         const DomainProfile& domain,
                         const VitalsTrajectory& vitals, double duration_s,
                         Rng& rng, int rois) {
  subject.validate();
  domain.validate();
  if (duration_s < 9.0)
    throw ValidationError("generate_clip: duration must be >= 9 s");
  if (rois < 1) throw ValidationError("generate_clip: need at least one ROI");

  // Invert the subject's law for the channel amplitude ratio.
  const double ror = (subject.spo2_intercept - vitals.spo2_pct) /
                     (-subject.spo2_slope);
  if (!(ror > 0.05) || !(ror < 5.0))
    throw ValidationError("generate_clip: SpO2 target infeasible for subject law");
  const double blue_ac = kRedAc / ror;
  if (blue_ac <= 0.0 || blue_ac > 0.2)
    throw ValidationError("generate_clip: SpO2 target infeasible for subject law");
  const std::array<double, 3> ac = {kRedAc, kGreenAc, blue_ac};

  const double fps = stmap::kTargetFps;
  const auto bvp = synth_bvp_traj(vitals, duration_s, fps,
                                  subject.bvp_harmonic_phase);
  const auto frames = bvp.size();
  const auto r = static_cast<std::size_t>(rois);

  // Per-ROI pure gain so every clean row is the same waveform up to scale.
  std::vector<double> roi_gain(r);
  for (auto& g : roi_gain) g = rng.uniform(0.85, 1.15);

  const double resp_phase = rng.uniform(0.0, kTwoPi);
  const double drift_freq = rng.uniform(domain.drift_freq_lo, domain.drift_freq_hi);
  const double drift_phase = rng.uniform(0.0, kTwoPi);
  const double f_rr = vitals.rr_bpm / 60.0;

  Tensor clean({r, frames, 3});
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / fps;
    const double resp = std::sin(kTwoPi * f_rr * t + resp_phase);
    const double drift =
        1.0 + domain.drift_amp * std::sin(kTwoPi * drift_freq * t + drift_phase);
    for (std::size_t c = 0; c < 3; ++c) {
      const double wave = (1.0 + ac[c] * bvp[f] + kRespAc * resp) * drift;
      const double base = kBaseDc[c] * subject.channel_gains[c] * wave;
      for (std::size_t w = 0; w < r; ++w)
        clean.at(w, f, c) = base * roi_gain[w];
    }
  }

  // Camera model: scene gain, then gamma, then motion and sensor noise.
  Tensor traces = clean;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double lit = domain.illumination_gain * traces[i];
    traces[i] = std::pow(std::max(lit, 1e-6), domain.gamma);
  }

  const int events = poisson_knuth(domain.motion_rate * duration_s / 60.0, rng);
  for (int e = 0; e < events; ++e) {
    const double t0 = rng.uniform(0.0, std::max(duration_s - 0.5, 0.0));
    const auto f0 = static_cast<std::size_t>(t0 * fps);
    const auto f1 = std::min(frames, f0 + static_cast<std::size_t>(0.5 * fps));
    const auto block = static_cast<std::size_t>(
        rng.uniform_int(2, std::max<std::int64_t>(2, rois / 2)));
    const auto w0 = static_cast<std::size_t>(
        rng.uniform_int(0, std::max<std::int64_t>(0, rois - static_cast<int>(block))));
    std::vector<std::size_t> perm(block);
    for (std::size_t i = 0; i < block; ++i) perm[i] = i;
    for (std::size_t i = block; i > 1; --i)
      std::swap(perm[i - 1],
                perm[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
    Tensor tmp = traces;
    for (std::size_t i = 0; i < block; ++i)
      for (std::size_t f = f0; f < f1; ++f)
        for (std::size_t c = 0; c < 3; ++c)
          traces.at(w0 + i, f, c) = tmp.at(w0 + perm[i], f, c);
  }

  if (domain.noise_std > 0.0)
    for (std::size_t i = 0; i < traces.size(); ++i)
      traces[i] += rng.normal(0.0, domain.noise_std);

  ClipResult out;
  out.clip.traces = std::move(traces);
  out.clip.fps = fps;
  out.clip.subject_id = subject.subject_id;
  out.clip.domain_id = domain.domain_id;
  out.clean_traces = std::move(clean);

  auto& l = out.labels;
  l.has_bvp = domain.label_mask[0];
  l.has_hr = domain.label_mask[1];
  l.has_rr = domain.label_mask[2];
  l.has_spo2 = domain.label_mask[3];
  if (l.has_bvp) l.bvp = bvp;
  if (l.has_hr) l.hr_bpm = vitals.hr_bpm;
  if (l.has_rr) l.rr_bpm = vitals.rr_bpm;
  if (l.has_spo2) l.spo2_pct = vitals.spo2_pct;
  l.validate();
  return out;
}

SubjectProfile random_subject(const std::string& id, const DatasetSpec& spec,
                              Rng& rng) {
  SubjectProfile s;
  s.subject_id = id;
  s.spo2_intercept = rng.uniform(spec.intercept_lo, spec.intercept_hi);
  s.spo2_slope = rng.uniform(spec.slope_lo, spec.slope_hi);
  for (auto& g : s.channel_gains) g = rng.uniform(0.8, 1.25);
  s.bvp_harmonic_phase = rng.uniform(0.0, kTwoPi);
  s.baseline_hr_bpm = rng.uniform(62.0, 105.0);
  s.baseline_rr_bpm = rng.uniform(10.0, 20.0);
  return s;
}

stm1::Manifest generate_dataset(const DatasetSpec& spec,
                                const std::string& out_dir) {
  if (spec.domains.empty())
    throw ValidationError("generate_dataset: no domains in spec");
  for (const auto& d : spec.domains) {
    d.profile.validate();
    if (d.subjects < 1 || d.clips_per_subject < 1)
      throw ValidationError("generate_dataset: counts must be positive");
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Rng master(spec.seed);
  stm1::Manifest manifest;
  manifest.seed = spec.seed;
  manifest.fps = stmap::kTargetFps;
  manifest.has_raw_traces = spec.emit_raw_traces;

  for (std::size_t di = 0; di < spec.domains.size(); ++di) {
    const auto& dspec = spec.domains[di];
    const auto& dom = dspec.profile;
    fs::create_directories(fs::path(out_dir) / dom.domain_id);

    stm1::ManifestDomain md;
    md.domain_id = dom.domain_id;
    md.label_mask = dom.label_mask;

    for (int si = 0; si < dspec.subjects; ++si) {
      const std::string sid = dom.domain_id + "_s" + std::to_string(si);
      Rng srng = master.fork(fnv1a64(sid.data(), sid.size()));
      const SubjectProfile subject = random_subject(sid, spec, srng);
      md.subject_ids.push_back(sid);

      for (int ci = 0; ci < dspec.clips_per_subject; ++ci) {
        const std::string clip_id = sid + "_c" + std::to_string(ci);
        Rng crng = srng.fork(static_cast<std::uint64_t>(ci) + 1);

        VitalsTrajectory v;
        v.hr_bpm = std::clamp(subject.baseline_hr_bpm + crng.uniform(-18.0, 18.0),
                              spec.hr_lo, spec.hr_hi);
        v.rr_bpm = std::clamp(subject.baseline_rr_bpm + crng.uniform(-4.0, 4.0),
                              6.0, 26.0);
        v.spo2_pct = crng.uniform(spec.spo2_lo, spec.spo2_hi);
        v.hr_mod_depth = spec.hr_mod_depth;

        ClipResult res = generate_clip(subject, dom, v, spec.clip_duration_s,
                                       crng, spec.rois);
        res.clip.clip_id = clip_id;

        stmap::STMap map = stmap::traces_to_stmap(res.clip);
        const std::string rel =
            dom.domain_id + "/" + clip_id + ".stm1";
        stm1::write_stm1(out_dir + "/" + rel, map.data);

        stm1::Sidecar sc;
        sc.subject_id = sid;
        sc.domain_id = dom.domain_id;
        sc.fps = stmap::kTargetFps;
        sc.start_index = 0;
        sc.labels = res.labels;
        stm1::write_sidecar(out_dir + "/" + dom.domain_id + "/" + clip_id + ".json",
                            sc);

        if (spec.emit_raw_traces) {
          // Raw (un-normalized) traces stored in (t, w, c) layout.
          const auto r = res.clip.traces.dim(0);
          const auto frames = res.clip.traces.dim(1);
          Tensor raw({frames, r, 3});
          for (std::size_t w = 0; w < r; ++w)
            for (std::size_t f = 0; f < frames; ++f)
              for (std::size_t c = 0; c < 3; ++c)
                raw.at(f, w, c) = res.clip.traces.at(w, f, c);
          stm1::write_stm1(
              out_dir + "/" + dom.domain_id + "/" + clip_id + ".raw.stm1", raw);
        }

        stm1::ManifestClip mc;
        mc.file = rel;
        mc.subject_id = sid;
        mc.domain_id = dom.domain_id;
        manifest.clips.push_back(std::move(mc));
      }
    }
    manifest.domains.push_back(std::move(md));
  }

  stm1::write_manifest(out_dir + "/manifest.json", manifest);
  return manifest;
}

DatasetSpec desk_benchmark_spec(std::uint64_t seed) {
  DatasetSpec spec;
  spec.seed = seed;
  spec.clip_duration_s = 10.0;

  DatasetDomainSpec lab;
  lab.profile.domain_id = "lab_full";
  lab.profile.illumination_gain = 1.0;
  lab.profile.gamma = 1.0;
  lab.profile.noise_std = 0.004;
  lab.profile.drift_amp = 0.05;
  lab.profile.label_mask = {true, true, true, true};

  DatasetDomainSpec cam;
  cam.profile.domain_id = "cam_no_rr";
  cam.profile.illumination_gain = 0.9;
  cam.profile.gamma = 1.15;
  cam.profile.noise_std = 0.006;
  cam.profile.drift_amp = 0.04;
  cam.profile.label_mask = {true, true, false, true};

  DatasetDomainSpec led;
  led.profile.domain_id = "led_no_spo2";
  led.profile.illumination_gain = 1.1;
  led.profile.gamma = 0.85;
  led.profile.noise_std = 0.008;
  led.profile.drift_amp = 0.08;
  led.profile.label_mask = {true, true, true, false};

  // The held-out domain carries the shifts the augmentations simulate:
  // head-motion row scrambles, stronger sensor noise, camera gamma, and a
  // larger illumination drift.
  DatasetDomainSpec field;
  field.profile.domain_id = "field_target";
  field.profile.illumination_gain = 1.3;
  field.profile.gamma = 1.5;
  field.profile.noise_std = 0.025;
  field.profile.drift_amp = 0.15;
  field.profile.motion_rate = 12.0;
  field.profile.label_mask = {true, true, true, true};
  field.subjects = 6;

  spec.domains = {lab, cam, led, field};
  return spec;
}

}  // namespace gap::synth

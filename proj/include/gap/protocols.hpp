#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "gap/augment.hpp"
#include "gap/common.hpp"
#include "gap/losses.hpp"
#include "gap/metrics.hpp"
#include "gap/model.hpp"
#include "gap/stm1_io.hpp"
#include "gap/stmap.hpp"

namespace gap::protocols {

// One model-ready window: the resized input plus window-sliced labels and
// any pseudo-labels derived from the true BVP.
struct DatasetWindow {
  std::size_t clip_index = 0;
  std::size_t start = 0;
  Tensor input;  // (window, model_rows, 3)
  stmap::VitalLabels labels;
  std::string subject_id, domain_id, sample_id;
  int identity = -1;  // index into the identity vocabulary; -1 off-vocab
  bool has_pseudo_hr = false, has_pseudo_rr = false;
  double pseudo_hr = 0.0, pseudo_rr = 0.0;
};

struct LoadedDataset {
  std::string root;
  stm1::Manifest manifest;
  std::vector<stmap::STMap> clip_maps;  // full-length normalized maps
  std::vector<stm1::Sidecar> clip_meta;
  std::vector<DatasetWindow> windows;
  std::vector<std::string> identity_vocab;  // sorted subject ids
};

// Reads only the listed domains (every file open lands in the audit),
// windows each clip, resizes rows to model_rows, and fills pseudo-labels.
LoadedDataset load_dataset(const std::string& root,
                           const std::vector<std::string>& domains,
                           stm1::FileAudit* audit, int window = 256,
                           int stride = 10, int model_rows = 64);

// Fills missing HR/RR from the true BVP (PSD peak; envelope peak for RR)
// at the soft pseudo-label weight; SpO2 is never pseudo-filled. No-op
// without BVP truth or when the label already exists.
void pseudo_labels(DatasetWindow* win, double fps);

struct MssdgConfig {
  std::vector<std::string> source_domains;
  double val_fraction = 0.1;
  int batch_size = 8;
  int iterations = 2000;
  double lr = 1e-5;
  std::string optimizer = "adam";  // "adam" | "sgd"
  std::uint64_t seed = 0;
  int val_every = 100;
  int ssm_window = 30;
  bool regularizers = true;  // false: supervised-only ablation
  losses::LossWeights weights;
  augment::AugmentConfig aug;
  model::ModelConfig model;
};

// One optimization step's losses over a batch; exposed so the end-to-end
// finite-difference check can drive the exact training path.
struct StepEval {
  losses::ComponentLosses comps;
  double pe_raw = 0.0;
  double composite = 0.0;
  double lambda = 1.0;
  std::vector<model::SampleOutput> out_o;
};

// Forward, losses, and (when grads != nullptr) parameter gradients for one
// batch. Component gradients carry exactly their composite coefficients.
// The augmentation draw comes from aug_rng, so re-seeding reproduces the
// same pair.
StepEval compute_step(const model::GapModel& mdl,
                      const std::vector<const DatasetWindow*>& batch,
                      const std::vector<const stmap::STMap*>& maps,
                      gap::Mode mode, const losses::LossWeights& w,
                      const augment::AugmentConfig& aug_cfg, int ssm_window,
                      std::int64_t step, std::int64_t total_steps,
                      bool with_supervised, bool with_regularizers,
                      const std::vector<int>& id_targets, Rng& aug_rng,
                      model::ParamGrads* grads);

struct StepLog {
  std::int64_t step = 0;
  double lambda = 0.0;
  double ssa = 0.0, sda = 0.0, lp = 0.0, fc = 0.0, pe = 0.0, pe_raw = 0.0,
         tc = 0.0, supervised = 0.0, composite = 0.0;
  double val_mae = -1.0;  // negative when no validation ran this step
};

struct TrainResult {
  std::string best_checkpoint;
  std::string final_checkpoint;
  double best_val_mae = 0.0;
  std::vector<StepLog> log;
  int n_identities = 0;
};

// MSSDG: source-domain training with the ramped composite objective, 9:1
// train/validation split by clip, best checkpoint by mean scalar-task MAE.
TrainResult train_mssdg(const std::string& dataset_root, const MssdgConfig& cfg,
                        const std::string& run_dir,
                        stm1::FileAudit* audit = nullptr);

struct TtpaConfig {
  std::string target_domain;
  double lr = 1e-5;
  std::uint64_t seed = 0;
  int ssm_window = 30;
  losses::LossWeights weights;
  augment::AugmentConfig aug;
  std::vector<std::string> freeze;  // parameter-name prefixes left untouched
};

// Streaming per-subject adaptation session. One optimizer step per sample,
// in order, no revisits; predictions are recorded after the step.
class TtpaSession {
 public:
  TtpaSession(const model::GapModel& base, std::string subject_id,
              const TtpaConfig& cfg);

  // Adapts on the sample (pair forward, L_U + L_A backward, SGD step), then
  // runs the post-step TTPA forward and returns it. Throws on a revisit.
  model::SampleOutput adapt_and_predict(const DatasetWindow& win,
                                        const stmap::STMap& clip_map);

  const std::vector<std::string>& seen() const { return seen_; }
  std::uint64_t start_checksum() const { return start_checksum_; }
  const model::GapModel& model() const { return *model_; }

 private:
  std::unique_ptr<model::GapModel> model_;
  std::string subject_id_;
  TtpaConfig cfg_;
  Rng rng_;
  std::uint64_t start_checksum_ = 0;
  std::vector<std::string> seen_;
  std::set<std::string> seen_set_;
  std::vector<char> trainable_;
};

struct TtpaSubjectLog {
  std::string subject_id;
  std::uint64_t start_checksum = 0;
  std::vector<std::string> sample_order;
};

struct TtpaResult {
  std::vector<metrics::PredictionRow> predictions;
  std::vector<TtpaSubjectLog> logs;
  // sample_id -> (pred bvp, true bvp); truth empty when unlabeled
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      bvp_waveforms;
};

TtpaResult adapt_ttpa(const std::string& dataset_root,
                      const std::string& base_checkpoint, const TtpaConfig& cfg,
                      const std::string& run_dir,
                      stm1::FileAudit* audit = nullptr);

// Forward-only predictions over a loaded dataset (used for held-out-domain
// evaluation and the frozen baseline in TTPA comparisons).
struct EvalOutput {
  std::vector<metrics::PredictionRow> predictions;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      bvp_waveforms;
};
EvalOutput evaluate_model(const model::GapModel& model, const LoadedDataset& ds,
                          gap::Mode mode);

void write_step_log_csv(const std::string& path, const std::vector<StepLog>& log);

}  // namespace gap::protocols

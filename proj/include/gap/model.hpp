#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gap/common.hpp"
#include "gap/tensor.hpp"

namespace gap::model {

// Task index order used throughout: hr, rr, spo2, bvp; the identity branch
// is the auxiliary N+1-th task.
inline constexpr int kTaskHr = 0;
inline constexpr int kTaskRr = 1;
inline constexpr int kTaskSpo2 = 2;
inline constexpr int kTaskBvp = 3;
inline constexpr int kNumTasks = 4;

struct ModelConfig {
  std::string preset = "desk";  // "desk" | "paper"
  int input_t = 256;
  int input_w = 64;
  std::vector<int> enc_channels = {12, 24, 48, 96};
  int enc_res_units = 0;  // residual units per stage ("paper": 1)
  int enc_kernel_t = 7;   // temporal kernel; pulse-rate features need a wide
                          // receptive field along T
  int enc_w_stride0 = 4;  // first-stage W stride; ROI rows are near-redundant
  int gn_groups = 4;
  int gate_hidden = 64;
  int id_hidden = 64;
  int bvp_channels = 32;
  int n_identities = 15;  // N_p; the identity head has N_p + 1 outputs

  // Fills architecture fields from the preset name, keeping input shape and
  // n_identities.
  void apply_preset();
  void validate() const;
};

struct Param {
  std::string name;
  Tensor value;
};

// Per-parameter gradient buffers, parallel to GapModel::params().
struct ParamGrads {
  std::vector<Tensor> g;
  void add_scaled(const ParamGrads& other, double scale);
};

struct SampleOutput {
  double hr = 0.0, rr = 0.0, spo2 = 0.0;
  Eigen::VectorXd bvp;       // length T
  Eigen::VectorXd z_shared;  // D
  std::array<Eigen::VectorXd, kNumTasks> z_task;
  Eigen::VectorXd z_p;
  Eigen::VectorXd id_logits;        // N_p + 1
  std::vector<Tensor> block_feats;  // per encoder stage, (C, H, W)
};

// Gradients w.r.t. the outputs above; empty members contribute nothing.
struct SampleGradients {
  double dhr = 0.0, drr = 0.0, dspo2 = 0.0;
  Eigen::VectorXd dbvp;
  std::array<Eigen::VectorXd, kNumTasks> dz_task;
  Eigen::VectorXd dz_p;
  Eigen::VectorXd did_logits;
  std::vector<Tensor> dblock_feats;
};

struct SampleCacheImpl;

// Opaque per-sample activation cache for backward passes. Cheap to move;
// one per in-flight sample.
struct SampleCache {
  std::shared_ptr<SampleCacheImpl> impl;
};

class GapModel {
 public:
  GapModel(const ModelConfig& cfg, std::uint64_t seed);
  ~GapModel();
  GapModel(const GapModel&);
  GapModel& operator=(const GapModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  int feature_dim() const;  // D = last encoder width

  // stmap is (T, W, 3). In TTPA mode every task feature is fused with the
  // identity feature (layer-normalized sum) before decoding; MSSDG applies
  // the same input LayerNorm without fusion.
  SampleOutput forward_sample(const Tensor& stmap, gap::Mode mode,
                              SampleCache* cache = nullptr) const;

  // Accumulates parameter gradients into pg and frees nothing; the cache
  // must come from forward_sample on this model.
  void backward_sample(const SampleCache& cache, const SampleGradients& gout,
                       ParamGrads* pg) const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  ParamGrads zero_grads() const;

  // Explicit gradient-routing table: names of parameters trainable in the
  // given mode, minus any whose name starts with a freeze prefix.
  std::vector<std::string> trainable_parameters(
      gap::Mode mode, const std::vector<std::string>& freeze_prefixes = {}) const;

  std::uint64_t checksum() const;

  void save_checkpoint(const std::string& path, std::uint64_t step) const;
  struct Loaded {
    std::unique_ptr<GapModel> model;
    std::uint64_t step = 0;
  };
  static Loaded load_checkpoint(const std::string& path);

 private:
  struct Arch;
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<Param> params_;
  std::unique_ptr<Arch> arch_;

  void build_arch();
  void init_params(std::uint64_t seed);
};

}  // namespace gap::model

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gap/common.hpp"
#include "gap/tensor.hpp"

namespace gap::losses {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LossWeights {
  double p1 = 1e-4;  // semantic structure alignment
  double p2 = 1e-3;  // semantic distribution alignment
  double p3 = 0.01;  // identity cross-entropy
  double p4 = 0.01;  // frequency consistency
  double p5 = 0.01;  // orthogonality penalty
  double p6 = 0.01;  // time-domain consistency
  double p7 = 0.01;  // time-domain inconsistency
  double pi_floor = 0.1;
  double pseudo_weight = 0.1;
  bool spectral_norm = false;  // Frobenius by default
};

// ---------------------------------------------------------------------------
// Block feature flattening
//
// Per-block encoder features (C, H, W) per sample, for the original and
// augmented batches. Standardization is non-affine: first per channel over
// the concatenated (o, a) batch, then per (sample, channel) over space;
// afterwards the W axis is averaged and (T=H, C) flattened to D with
// d = t*C + c.
struct FlattenCache;

struct FlattenResult {
  MatrixXd zo;  // B x D
  MatrixXd za;  // B x D
  std::shared_ptr<FlattenCache> cache;
};

FlattenResult flatten_block(const std::vector<Tensor>& feats_o,
                            const std::vector<Tensor>& feats_a);

void flatten_block_backward(const FlattenResult& fr, const MatrixXd& dzo,
                            const MatrixXd& dza, std::vector<Tensor>* dfeats_o,
                            std::vector<Tensor>* dfeats_a);

// ---------------------------------------------------------------------------
// Alignment losses on flattened features (one block; callers sum blocks).

// SVD reconstruction-swap residual || Uo Sa Vo^T - Ua So Va^T ||_F.
// Gradients flow through U, S and V of both decompositions.
double ssa_loss(const MatrixXd& zo, const MatrixXd& za, MatrixXd* dzo = nullptr,
                MatrixXd* dza = nullptr, bool spectral = false);

// Gram-matrix residual || Zo Zo^T - Za Za^T ||_F (no centering).
double sda_loss(const MatrixXd& zo, const MatrixXd& za, MatrixXd* dzo = nullptr,
                MatrixXd* dza = nullptr, bool spectral = false);

// ---------------------------------------------------------------------------
// Prediction-consistency losses.

// mean |po - pa| over the batch.
double fc_scalar_loss(const VectorXd& po, const VectorXd& pa,
                      VectorXd* dpo = nullptr, VectorXd* dpa = nullptr);

// Batch-mean KL(Qa || Qo) between the normalized pulse-band PSDs of the
// predicted waveforms (rows of bo/ba).
double fc_bvp_loss(const MatrixXd& bvp_o, const MatrixXd& bvp_a, double fps,
                   MatrixXd* dbo = nullptr, MatrixXd* dba = nullptr);

// Batch-mean cosine similarity between flattened self-similarity matrices
// of the two waveform batches (window length s, step 1). In [-1, 1].
double tic_loss(const MatrixXd& bvp_o, const MatrixXd& bvp_a, int s,
                MatrixXd* dbo = nullptr, MatrixXd* dba = nullptr);

// 1 - tic_loss.
double tc_loss(const MatrixXd& bvp_o, const MatrixXd& bvp_a, int s,
               MatrixXd* dbo = nullptr, MatrixXd* dba = nullptr);

// ---------------------------------------------------------------------------
// Identity branch losses.

// mean_i || Zp_hat Zi_hat^T - I ||_F over tasks (rows L2-normalized),
// clamped from below at pi_floor (zero gradient at or under the floor).
// *raw_out receives the unclamped value.
double pe_loss(const std::vector<MatrixXd>& z_tasks, const MatrixXd& z_p,
               double pi_floor, std::vector<MatrixXd>* dz_tasks = nullptr,
               MatrixXd* dz_p = nullptr, double* raw_out = nullptr);

// Softmax cross-entropy, mean over batch.
double cross_entropy(const MatrixXd& logits, const std::vector<int>& targets,
                     MatrixXd* dlogits = nullptr);

// ---------------------------------------------------------------------------
// Supervised losses.

// 1 - Pearson correlation, in [0, 2]. Throws NumericError on constant input.
double neg_pearson(const VectorXd& pred, const VectorXd& truth,
                   VectorXd* dpred = nullptr);

// Row-wise neg_pearson averaged over selected rows (mask weight > 0);
// weights scale each row's contribution.
double neg_pearson_batch(const MatrixXd& pred, const MatrixXd& truth,
                         const VectorXd& row_weights, MatrixXd* dpred = nullptr);

// Weighted mean absolute error over entries with weight > 0.
double l1_masked(const VectorXd& pred, const VectorXd& truth,
                 const VectorXd& weights, VectorXd* dpred = nullptr);

// ---------------------------------------------------------------------------
// Composite objective.

// Ramp factor 2/(1+exp(-10 t/T)) - 1 suppressing regularizers early on.
double lambda_ramp(std::int64_t step, std::int64_t total_steps);

struct ComponentLosses {
  std::optional<double> ssa, sda, lp, fc, pe, tc, tic, supervised;
};

// MSSDG: lambda(t) * (p1 SSA + p2 SDA + p3 LP + p4 FC + p5 PE + p6 TC) + L_MT.
// TTPA:  p1 SSA + p2 SDA + p3 LP + p4 FC + p7 TIC (lambda fixed at 1).
// Missing required components raise ValidationError naming the loss.
double composite(const ComponentLosses& parts, const LossWeights& w,
                 std::int64_t step, std::int64_t total_steps, gap::Mode mode,
                 double* lambda_out = nullptr);

// ---------------------------------------------------------------------------
// Differentiable normalized band PSD (shared by fc_bvp_loss and exposed for
// tests): forward keeps the workspace needed to map dQ back to the signal.
struct PsdCache;

struct DifferentiablePsd {
  VectorXd q;  // normalized band powers
  std::shared_ptr<PsdCache> cache;
};

DifferentiablePsd psd_forward(const VectorXd& x, double fps, double band_lo,
                              double band_hi, int zero_pad = 8);
VectorXd psd_backward(const DifferentiablePsd& psd, const VectorXd& dq);

}  // namespace gap::losses

#include "gap/losses.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <Eigen/SVD>

#include "gap/common.hpp"
#include "gap/kernels/kernels.hpp"
#include "gap/signal.hpp"

namespace gap::losses {

namespace {

constexpr double kPi = 3.14159265358979323846;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double clamp_denom(double d) {
  if (std::abs(d) >= 1e-10) return d;
  return d < 0.0 ? -1e-10 : 1e-10;
}

// Deterministic SVD orientation: the largest-magnitude entry of every left
// singular vector is made nonnegative (joint column flips keep U S V^T).
void sign_fix(MatrixXd& u, MatrixXd& v) {
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index imax = 0;
    u.col(j).cwiseAbs().maxCoeff(&imax);
    if (u(imax, j) < 0.0) {
      u.col(j) = -u.col(j);
      v.col(j) = -v.col(j);
    }
  }
}

// Reverse-mode map through a thin SVD A = U diag(s) V^T.
MatrixXd svd_backward(const MatrixXd& u, const VectorXd& s, const MatrixXd& v,
                      const MatrixXd& du, const VectorXd& ds,
                      const MatrixXd& dv) {
  const Eigen::Index m = u.rows();
  const Eigen::Index n = v.rows();
  const Eigen::Index k = s.size();

  MatrixXd f(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      f(i, j) = i == j ? 0.0 : 1.0 / clamp_denom(s(j) * s(j) - s(i) * s(i));

  const MatrixXd utdu = u.transpose() * du;
  const MatrixXd vtdv = v.transpose() * dv;
  MatrixXd inner = f.cwiseProduct(utdu - utdu.transpose()) * s.asDiagonal();
  inner += s.asDiagonal() * f.cwiseProduct(vtdv - vtdv.transpose());
  inner += MatrixXd(ds.asDiagonal());
  MatrixXd da = u * inner * v.transpose();

  VectorXd sinv(k);
  for (Eigen::Index i = 0; i < k; ++i) sinv(i) = 1.0 / std::max(s(i), 1e-12);
  if (m > k) {
    const MatrixXd proj = du - u * utdu;  // (I - U U^T) dU
    da += proj * sinv.asDiagonal() * v.transpose();
  }
  if (n > k) {
    const MatrixXd dvt_proj = dv.transpose() - vtdv.transpose() * v.transpose();
    da += u * sinv.asDiagonal() * dvt_proj;
  }
  return da;
}

// Group standardization y = (x - mean)/sqrt(var + kStdEps); the backward
// uses dx = (dy - mean(dy) - y*mean(dy.*y)) / s, exact including the guard.
struct Standardized {
  double inv_s = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// flatten_block

struct FlattenCache {
  std::size_t b = 0, c = 0, h = 0, w = 0;
  // Stage 1 (per channel over the joint batch) outputs and scales.
  std::vector<Tensor> y1;           // 2B tensors (C,H,W)
  std::vector<double> inv_s1;       // per channel
  // Stage 2 (per sample, channel over space) outputs and scales.
  std::vector<Tensor> y2;           // 2B tensors (C,H,W)
  std::vector<std::vector<double>> inv_s2;  // [sample][channel]
};

FlattenResult flatten_block(const std::vector<Tensor>& feats_o,
                            const std::vector<Tensor>& feats_a) {
  if (feats_o.empty() || feats_o.size() != feats_a.size())
    throw ValidationError("flatten_block: need equal nonempty batches");
  const std::size_t b = feats_o.size();
  const auto& shape = feats_o[0].shape();
  if (shape.size() != 3)
    throw ValidationError("flatten_block: features must be (C, H, W)");
  for (const auto& t : feats_o)
    if (t.shape() != shape) throw ValidationError("flatten_block: shape mismatch");
  for (const auto& t : feats_a)
    if (t.shape() != shape) throw ValidationError("flatten_block: shape mismatch");
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  if (2 * b < 2) throw ValidationError("flatten_block: batch too small");

  auto cache = std::make_shared<FlattenCache>();
  cache->b = b;
  cache->c = c;
  cache->h = h;
  cache->w = w;

  const std::size_t total = 2 * b;
  auto sample = [&](std::size_t i) -> const Tensor& {
    return i < b ? feats_o[i] : feats_a[i - b];
  };

  // Stage 1: channel statistics over the joint batch.
  const double n1 = static_cast<double>(total * h * w);
  std::vector<double> mean1(c, 0.0), var1(c, 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    const Tensor& x = sample(i);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + ch * h * w;
      mean1[ch] += kernels::reduce_sum(h * w, p);
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) mean1[ch] /= n1;
  for (std::size_t i = 0; i < total; ++i) {
    const Tensor& x = sample(i);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + ch * h * w;
      for (std::size_t j = 0; j < h * w; ++j) {
        const double d = p[j] - mean1[ch];
        var1[ch] += d * d;
      }
    }
  }
  cache->inv_s1.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch)
    cache->inv_s1[ch] = 1.0 / std::sqrt(var1[ch] / n1 + kStdEps);

  cache->y1.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const Tensor& x = sample(i);
    Tensor& y = cache->y1[i];
    y = Tensor({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + ch * h * w;
      double* q = y.data() + ch * h * w;
      for (std::size_t j = 0; j < h * w; ++j)
        q[j] = (p[j] - mean1[ch]) * cache->inv_s1[ch];
    }
  }

  // Stage 2: instance statistics over space.
  const double n2 = static_cast<double>(h * w);
  cache->y2.resize(total);
  cache->inv_s2.assign(total, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < total; ++i) {
    const Tensor& y = cache->y1[i];
    Tensor& z = cache->y2[i];
    z = Tensor({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = y.data() + ch * h * w;
      const double m = kernels::reduce_sum(h * w, p) / n2;
      double var = 0.0;
      for (std::size_t j = 0; j < h * w; ++j) {
        const double d = p[j] - m;
        var += d * d;
      }
      const double inv_s = 1.0 / std::sqrt(var / n2 + kStdEps);
      cache->inv_s2[i][ch] = inv_s;
      double* q = z.data() + ch * h * w;
      for (std::size_t j = 0; j < h * w; ++j) q[j] = (p[j] - m) * inv_s;
    }
  }

  // Mean over W, then flatten (T=H, C) with d = t*C + c.
  FlattenResult out;
  out.cache = cache;
  const std::size_t d = h * c;
  out.zo.resize(b, d);
  out.za.resize(b, d);
  for (std::size_t i = 0; i < total; ++i) {
    const Tensor& z = cache->y2[i];
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < h; ++t) {
        const double* row = z.data() + (ch * h + t) * w;
        const double v = kernels::reduce_sum(w, row) / static_cast<double>(w);
        if (i < b)
          out.zo(i, t * c + ch) = v;
        else
          out.za(i - b, t * c + ch) = v;
      }
  }
  return out;
}

void flatten_block_backward(const FlattenResult& fr, const MatrixXd& dzo,
                            const MatrixXd& dza, std::vector<Tensor>* dfeats_o,
                            std::vector<Tensor>* dfeats_a) {
  const auto& cc = *fr.cache;
  const std::size_t b = cc.b, c = cc.c, h = cc.h, w = cc.w;
  const std::size_t total = 2 * b;

  // Un-flatten and un-mean into per-sample spatial grads.
  std::vector<Tensor> dz(total);
  for (std::size_t i = 0; i < total; ++i) {
    dz[i] = Tensor({c, h, w});
    const MatrixXd& src = i < b ? dzo : dza;
    const std::size_t row = i < b ? i : i - b;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < h; ++t) {
        const double g = src(row, t * c + ch) / static_cast<double>(w);
        double* p = dz[i].data() + (ch * h + t) * w;
        for (std::size_t j = 0; j < w; ++j) p[j] = g;
      }
  }

  // Stage 2 backward (per sample, channel).
  const double n2 = static_cast<double>(h * w);
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* g = dz[i].data() + ch * h * w;
      const double* y = cc.y2[i].data() + ch * h * w;
      const double mg = kernels::reduce_sum(h * w, g) / n2;
      const double mgy = kernels::dot(h * w, g, y) / n2;
      const double inv_s = cc.inv_s2[i][ch];
      for (std::size_t j = 0; j < h * w; ++j)
        g[j] = (g[j] - mg - y[j] * mgy) * inv_s;
    }
  }

  // Stage 1 backward (per channel over the joint batch).
  const double n1 = static_cast<double>(total * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mg = 0.0, mgy = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      const double* g = dz[i].data() + ch * h * w;
      const double* y = cc.y1[i].data() + ch * h * w;
      mg += kernels::reduce_sum(h * w, g);
      mgy += kernels::dot(h * w, g, y);
    }
    mg /= n1;
    mgy /= n1;
    const double inv_s = cc.inv_s1[ch];
    for (std::size_t i = 0; i < total; ++i) {
      double* g = dz[i].data() + ch * h * w;
      const double* y = cc.y1[i].data() + ch * h * w;
      for (std::size_t j = 0; j < h * w; ++j)
        g[j] = (g[j] - mg - y[j] * mgy) * inv_s;
    }
  }

  dfeats_o->assign(dz.begin(), dz.begin() + b);
  dfeats_a->assign(dz.begin() + b, dz.end());
}

// ---------------------------------------------------------------------------
// SSA / SDA

double ssa_loss(const MatrixXd& zo, const MatrixXd& za, MatrixXd* dzo,
                MatrixXd* dza, bool spectral) {
  if (zo.rows() != za.rows() || zo.cols() != za.cols())
    throw ValidationError("ssa_loss: shape mismatch");
  if (zo.rows() < 1) throw ValidationError("ssa_loss: empty batch");

  Eigen::JacobiSVD<MatrixXd> svd_o(zo, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::JacobiSVD<MatrixXd> svd_a(za, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd_o.info() != Eigen::Success || svd_a.info() != Eigen::Success)
    throw NumericError("ssa_loss: SVD failed to converge");

  MatrixXd uo = svd_o.matrixU(), vo = svd_o.matrixV();
  MatrixXd ua = svd_a.matrixU(), va = svd_a.matrixV();
  const VectorXd so = svd_o.singularValues();
  const VectorXd sa = svd_a.singularValues();
  sign_fix(uo, vo);
  sign_fix(ua, va);

  const MatrixXd r_oa = uo * sa.asDiagonal() * vo.transpose();
  const MatrixXd r_ao = ua * so.asDiagonal() * va.transpose();
  const MatrixXd diff = r_oa - r_ao;

  if (spectral) {
    Eigen::JacobiSVD<MatrixXd> sd(diff);
    return sd.singularValues()(0);
  }

  const double nrm = diff.norm();
  if (dzo && dza) {
    if (nrm < 1e-15) {
      dzo->setZero(zo.rows(), zo.cols());
      dza->setZero(za.rows(), za.cols());
    } else {
      const MatrixXd g = diff / nrm;
      const MatrixXd duo = g * vo * sa.asDiagonal();
      const MatrixXd dvo = g.transpose() * uo * sa.asDiagonal();
      const VectorXd dsa = (uo.transpose() * g * vo).diagonal();
      const MatrixXd dua = -g * va * so.asDiagonal();
      const MatrixXd dva = -g.transpose() * ua * so.asDiagonal();
      const VectorXd dso = -(ua.transpose() * g * va).diagonal();
      *dzo = svd_backward(uo, so, vo, duo, dso, dvo);
      *dza = svd_backward(ua, sa, va, dua, dsa, dva);
    }
  }
  return nrm;
}

double sda_loss(const MatrixXd& zo, const MatrixXd& za, MatrixXd* dzo,
                MatrixXd* dza, bool spectral) {
  if (zo.rows() != za.rows() || zo.cols() != za.cols())
    throw ValidationError("sda_loss: shape mismatch");
  const MatrixXd mo = zo * zo.transpose();
  const MatrixXd ma = za * za.transpose();
  const MatrixXd diff = mo - ma;

  if (spectral) {
    Eigen::JacobiSVD<MatrixXd> sd(diff);
    return sd.singularValues()(0);
  }

  const double nrm = diff.norm();
  if (dzo && dza) {
    if (nrm < 1e-15) {
      dzo->setZero(zo.rows(), zo.cols());
      dza->setZero(za.rows(), za.cols());
    } else {
      const MatrixXd g = diff / nrm;
      const MatrixXd gsym = g + g.transpose();
      *dzo = gsym * zo;
      *dza = -(gsym * za);
    }
  }
  return nrm;
}

// ---------------------------------------------------------------------------
// Frequency / time-domain consistency

double fc_scalar_loss(const VectorXd& po, const VectorXd& pa, VectorXd* dpo,
                      VectorXd* dpa) {
  if (po.size() != pa.size() || po.size() == 0)
    throw ValidationError("fc_scalar_loss: shape mismatch");
  const double n = static_cast<double>(po.size());
  double loss = 0.0;
  if (dpo) dpo->setZero(po.size());
  if (dpa) dpa->setZero(pa.size());
  for (Eigen::Index i = 0; i < po.size(); ++i) {
    const double d = po(i) - pa(i);
    loss += std::abs(d);
    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    if (dpo) (*dpo)(i) = s / n;
    if (dpa) (*dpa)(i) = -s / n;
  }
  return loss / n;
}

struct PsdCache {
  std::size_t t = 0, l = 0;
  std::vector<double> window;            // Hann
  std::vector<std::complex<double>> y;   // full spectrum
  std::vector<std::size_t> band_bins;
  VectorXd p;  // raw band powers
  double sum = 0.0;
};

DifferentiablePsd psd_forward(const VectorXd& x, double fps, double band_lo,
                              double band_hi, int zero_pad) {
  const std::size_t t = static_cast<std::size_t>(x.size());
  if (t < 32) throw ValidationError("psd_forward: need at least 32 samples");

  auto cache = std::make_shared<PsdCache>();
  cache->t = t;
  cache->l = t * static_cast<std::size_t>(zero_pad);
  cache->window.resize(t);
  const double m = x.mean();

  std::vector<std::complex<double>> buf(cache->l, {0.0, 0.0});
  for (std::size_t i = 0; i < t; ++i) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                                           static_cast<double>(t - 1)));
    cache->window[i] = w;
    buf[i] = {(x(i) - m) * w, 0.0};
  }
  signal::fft(buf, cache->y);

  for (std::size_t k = 0; k <= cache->l / 2; ++k) {
    const double f = static_cast<double>(k) * fps / static_cast<double>(cache->l);
    if (f >= band_lo && f <= band_hi) cache->band_bins.push_back(k);
  }
  if (cache->band_bins.empty())
    throw ValidationError("psd_forward: empty band");

  const auto nb = cache->band_bins.size();
  cache->p.resize(nb);
  for (std::size_t k = 0; k < nb; ++k)
    cache->p(k) = std::norm(cache->y[cache->band_bins[k]]);
  cache->sum = cache->p.sum() + kNormEps;

  DifferentiablePsd out;
  out.cache = cache;
  out.q = cache->p / cache->sum;
  return out;
}

VectorXd psd_backward(const DifferentiablePsd& psd, const VectorXd& dq) {
  const auto& cc = *psd.cache;
  const auto nb = cc.band_bins.size();
  if (static_cast<std::size_t>(dq.size()) != nb)
    throw ValidationError("psd_backward: gradient size mismatch");

  // Through the normalization q = p / (sum + eps).
  const double dot_qp = dq.dot(cc.p);
  VectorXd dp(nb);
  for (std::size_t k = 0; k < nb; ++k)
    dp(k) = dq(k) / cc.sum - dot_qp / (cc.sum * cc.sum);

  // Through P = |Y|^2 and the DFT (adjoint = unnormalized inverse).
  std::vector<std::complex<double>> g(cc.l, {0.0, 0.0});
  for (std::size_t k = 0; k < nb; ++k)
    g[cc.band_bins[k]] = 2.0 * dp(k) * cc.y[cc.band_bins[k]];
  std::vector<std::complex<double>> back;
  signal::ifft(g, back);

  VectorXd dx(cc.t);
  for (std::size_t i = 0; i < cc.t; ++i)
    dx(i) = back[i].real() * static_cast<double>(cc.l) * cc.window[i];
  const double mg = dx.mean();
  for (std::size_t i = 0; i < cc.t; ++i) dx(i) -= mg;
  return dx;
}

double fc_bvp_loss(const MatrixXd& bvp_o, const MatrixXd& bvp_a, double fps,
                   MatrixXd* dbo, MatrixXd* dba) {
  if (bvp_o.rows() != bvp_a.rows() || bvp_o.cols() != bvp_a.cols())
    throw ValidationError("fc_bvp_loss: shape mismatch");
  const auto b = bvp_o.rows();
  if (b == 0) throw ValidationError("fc_bvp_loss: empty batch");
  if (dbo) dbo->setZero(bvp_o.rows(), bvp_o.cols());
  if (dba) dba->setZero(bvp_a.rows(), bvp_a.cols());

  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto po = psd_forward(bvp_o.row(i).transpose(), fps,
                                signal::kHrBandLo, signal::kHrBandHi);
    const auto pa = psd_forward(bvp_a.row(i).transpose(), fps,
                                signal::kHrBandLo, signal::kHrBandHi);
    const auto nb = po.q.size();
    double kl = 0.0;
    VectorXd dqa(nb), dqo(nb);
    for (Eigen::Index k = 0; k < nb; ++k) {
      const double a = std::max(pa.q(k), kLogEps);
      const double o = std::max(po.q(k), kLogEps);
      kl += pa.q(k) * (std::log(a) - std::log(o));
      dqa(k) = std::log(a) - std::log(o) + (pa.q(k) > kLogEps ? 1.0 : 0.0);
      dqo(k) = po.q(k) > kLogEps ? -pa.q(k) / o : 0.0;
    }
    total += kl;
    if (dbo && dba) {
      dba->row(i) = psd_backward(pa, dqa).transpose() / static_cast<double>(b);
      dbo->row(i) = psd_backward(po, dqo).transpose() / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

namespace {

// Normalized sliding-window matrix and its backward scatter.
struct SsmRow {
  RowMat uhat;                    // K x s
  std::vector<double> inv_norm;   // 0 for zero-norm windows
  RowMat m;                       // K x K
};

SsmRow ssm_forward(const double* x, int t, int s) {
  const int k = t - s + 1;
  SsmRow out;
  out.uhat.resize(k, s);
  out.inv_norm.assign(k, 0.0);
  for (int i = 0; i < k; ++i) {
    const double nrm = std::sqrt(kernels::reduce_sumsq(s, x + i));
    if (nrm <= kNormEps) {
      out.uhat.row(i).setZero();
      continue;
    }
    out.inv_norm[i] = 1.0 / nrm;
    for (int j = 0; j < s; ++j) out.uhat(i, j) = x[i + j] / nrm;
  }
  out.m.resize(k, k);
  kernels::gemm<double>(false, true, k, k, s, 1.0, out.uhat.data(), s,
                        out.uhat.data(), s, 0.0, out.m.data(), k);
  return out;
}

// Accumulates into dx (length t).
void ssm_backward(const SsmRow& row, const RowMat& dm, int t, int s,
                  double* dx) {
  const int k = t - s + 1;
  RowMat dsym = dm + dm.transpose();
  RowMat duhat(k, s);
  kernels::gemm<double>(false, false, k, s, k, 1.0, dsym.data(), k,
                        row.uhat.data(), s, 0.0, duhat.data(), s);
  for (int i = 0; i < k; ++i) {
    if (row.inv_norm[i] == 0.0) continue;
    const double proj = kernels::dot<double>(s, duhat.data() + i * s,
                                             row.uhat.data() + i * s);
    for (int j = 0; j < s; ++j)
      dx[i + j] += (duhat(i, j) - proj * row.uhat(i, j)) * row.inv_norm[i];
  }
}

}  // namespace

double tic_loss(const MatrixXd& bvp_o, const MatrixXd& bvp_a, int s,
                MatrixXd* dbo, MatrixXd* dba) {
  if (bvp_o.rows() != bvp_a.rows() || bvp_o.cols() != bvp_a.cols())
    throw ValidationError("tic_loss: shape mismatch");
  const int t = static_cast<int>(bvp_o.cols());
  if (s < 2 || t < s) throw ValidationError("tic_loss: window exceeds signal");
  const auto b = bvp_o.rows();
  if (dbo) dbo->setZero(bvp_o.rows(), bvp_o.cols());
  if (dba) dba->setZero(bvp_a.rows(), bvp_a.cols());

  // Row-major copies so window views are contiguous.
  RowMat ro = bvp_o, ra = bvp_a;
  double total = 0.0;
  std::vector<double> gxo(t), gxa(t);
  for (Eigen::Index i = 0; i < b; ++i) {
    const SsmRow so = ssm_forward(ro.data() + i * t, t, s);
    const SsmRow sa = ssm_forward(ra.data() + i * t, t, s);
    const double no = so.m.norm();
    const double na = sa.m.norm();
    if (no <= kNormEps || na <= kNormEps)
      throw NumericError("tic_loss: zero-norm self-similarity matrix");
    const double num = (so.m.cwiseProduct(sa.m)).sum();
    const double tic = num / (no * na);
    total += tic;
    if (dbo && dba) {
      const double w = 1.0 / static_cast<double>(b);
      RowMat dmo = w * (sa.m / (no * na) - tic * so.m / (no * no));
      RowMat dma = w * (so.m / (no * na) - tic * sa.m / (na * na));
      std::fill(gxo.begin(), gxo.end(), 0.0);
      std::fill(gxa.begin(), gxa.end(), 0.0);
      ssm_backward(so, dmo, t, s, gxo.data());
      ssm_backward(sa, dma, t, s, gxa.data());
      for (int j = 0; j < t; ++j) {
        (*dbo)(i, j) = gxo[j];
        (*dba)(i, j) = gxa[j];
      }
    }
  }
  return total / static_cast<double>(b);
}

double tc_loss(const MatrixXd& bvp_o, const MatrixXd& bvp_a, int s,
               MatrixXd* dbo, MatrixXd* dba) {
  const double tic = tic_loss(bvp_o, bvp_a, s, dbo, dba);
  if (dbo) *dbo = -*dbo;
  if (dba) *dba = -*dba;
  return 1.0 - tic;
}


// ---------------------------------------------------------------------------
// Identity branch

double pe_loss(const std::vector<MatrixXd>& z_tasks, const MatrixXd& z_p,
               double pi_floor, std::vector<MatrixXd>* dz_tasks, MatrixXd* dz_p,
               double* raw_out) {
  if (z_tasks.empty()) throw ValidationError("pe_loss: no task features");
  const auto b = z_p.rows();
  const auto d = z_p.cols();
  for (const auto& z : z_tasks)
    if (z.rows() != b || z.cols() != d)
      throw ValidationError("pe_loss: dimension mismatch");

  auto normalize_rows = [](const MatrixXd& z, MatrixXd* zhat,
                           VectorXd* inv_norm) {
    zhat->resizeLike(z);
    inv_norm->setZero(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double nrm = z.row(i).norm();
      if (nrm <= kNormEps) {
        zhat->row(i).setZero();
        continue;
      }
      (*inv_norm)(i) = 1.0 / nrm;
      zhat->row(i) = z.row(i) / nrm;
    }
  };

  MatrixXd zp_hat;
  VectorXd zp_inv;
  normalize_rows(z_p, &zp_hat, &zp_inv);

  const double n_tasks = static_cast<double>(z_tasks.size());
  double raw = 0.0;
  MatrixXd dzp_hat = MatrixXd::Zero(b, d);
  std::vector<MatrixXd> dzi_hat;
  std::vector<MatrixXd> zi_hats(z_tasks.size());
  std::vector<VectorXd> zi_invs(z_tasks.size());
  if (dz_tasks) dzi_hat.assign(z_tasks.size(), MatrixXd::Zero(b, d));

  for (std::size_t k = 0; k < z_tasks.size(); ++k) {
    normalize_rows(z_tasks[k], &zi_hats[k], &zi_invs[k]);
    const MatrixXd gram = zp_hat * zi_hats[k].transpose();
    const MatrixXd resid = gram - MatrixXd::Identity(b, b);
    const double r = resid.norm();
    raw += r / n_tasks;
    if (dz_tasks && dz_p && r > 1e-12) {
      const MatrixXd dgram = resid / (n_tasks * r);
      dzp_hat += dgram * zi_hats[k];
      dzi_hat[k] += dgram.transpose() * zp_hat;
    }
  }
  if (raw_out) *raw_out = raw;

  const bool clamped = raw <= pi_floor;
  if (dz_tasks && dz_p) {
    dz_tasks->assign(z_tasks.size(), MatrixXd::Zero(b, d));
    dz_p->setZero(b, d);
    if (!clamped) {
      auto denorm = [](const MatrixXd& zhat, const VectorXd& inv_norm,
                       const MatrixXd& dzhat, MatrixXd* dz) {
        dz->setZero(zhat.rows(), zhat.cols());
        for (Eigen::Index i = 0; i < zhat.rows(); ++i) {
          if (inv_norm(i) == 0.0) continue;
          const double proj = dzhat.row(i).dot(zhat.row(i));
          dz->row(i) = (dzhat.row(i) - proj * zhat.row(i)) * inv_norm(i);
        }
      };
      denorm(zp_hat, zp_inv, dzp_hat, dz_p);
      for (std::size_t k = 0; k < z_tasks.size(); ++k)
        denorm(zi_hats[k], zi_invs[k], dzi_hat[k], &(*dz_tasks)[k]);
    }
  }
  return std::max(raw, pi_floor);
}

double cross_entropy(const MatrixXd& logits, const std::vector<int>& targets,
                     MatrixXd* dlogits) {
  const auto b = logits.rows();
  const auto c = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != b)
    throw ValidationError("cross_entropy: target count mismatch");
  if (dlogits) dlogits->setZero(b, c);

  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = targets[i];
    if (y < 0 || y >= c) throw ValidationError("cross_entropy: target out of range");
    const double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) z += std::exp(logits(i, j) - mx);
    const double logz = std::log(z) + mx;
    total += logz - logits(i, y);
    if (dlogits) {
      for (Eigen::Index j = 0; j < c; ++j)
        (*dlogits)(i, j) = std::exp(logits(i, j) - logz) / static_cast<double>(b);
      (*dlogits)(i, y) -= 1.0 / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

// ---------------------------------------------------------------------------
// Supervised losses

double neg_pearson(const VectorXd& pred, const VectorXd& truth, VectorXd* dpred) {
  if (pred.size() != truth.size() || pred.size() < 2)
    throw ValidationError("neg_pearson: need equal-length series, size >= 2");
  const double n = static_cast<double>(pred.size());
  const VectorXd xc = pred.array() - pred.mean();
  const VectorXd yc = truth.array() - truth.mean();
  const double sxx = xc.squaredNorm();
  const double syy = yc.squaredNorm();
  if (sxx < kNormEps || syy < kNormEps)
    throw NumericError("neg_pearson: constant input");
  const double sx = std::sqrt(sxx);
  const double sy = std::sqrt(syy);
  const double rho = xc.dot(yc) / (sx * sy);
  if (dpred) {
    // d(1-rho)/dpred; both terms are zero-mean so the mean-removal adjoint
    // is a no-op.
    *dpred = -(yc / (sx * sy) - rho * xc / sxx);
  }
  (void)n;
  return 1.0 - rho;
}

double neg_pearson_batch(const MatrixXd& pred, const MatrixXd& truth,
                         const VectorXd& row_weights, MatrixXd* dpred) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ValidationError("neg_pearson_batch: shape mismatch");
  if (row_weights.size() != pred.rows())
    throw ValidationError("neg_pearson_batch: weight count mismatch");
  if (dpred) dpred->setZero(pred.rows(), pred.cols());

  double wsum = 0.0;
  for (Eigen::Index i = 0; i < row_weights.size(); ++i)
    if (row_weights(i) > 0.0) wsum += row_weights(i);
  if (wsum <= 0.0) return 0.0;

  double total = 0.0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (row_weights(i) <= 0.0) continue;
    VectorXd g;
    const double v = neg_pearson(pred.row(i).transpose(),
                                 truth.row(i).transpose(), dpred ? &g : nullptr);
    total += row_weights(i) * v;
    if (dpred) dpred->row(i) = (row_weights(i) / wsum) * g.transpose();
  }
  return total / wsum;
}

double l1_masked(const VectorXd& pred, const VectorXd& truth,
                 const VectorXd& weights, VectorXd* dpred) {
  if (pred.size() != truth.size() || pred.size() != weights.size())
    throw ValidationError("l1_masked: shape mismatch");
  if (dpred) dpred->setZero(pred.size());
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (weights(i) > 0.0) wsum += weights(i);
  if (wsum <= 0.0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (weights(i) <= 0.0) continue;
    const double d = pred(i) - truth(i);
    total += weights(i) * std::abs(d);
    if (dpred)
      (*dpred)(i) = weights(i) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / wsum;
  }
  return total / wsum;
}

// ---------------------------------------------------------------------------
// Composite

double lambda_ramp(std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return 1.0;
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return 2.0 / (1.0 + std::exp(-10.0 * x)) - 1.0;
}

double composite(const ComponentLosses& parts, const LossWeights& w,
                 std::int64_t step, std::int64_t total_steps, gap::Mode mode,
                 double* lambda_out) {
  auto need = [](const std::optional<double>& v, const char* name) {
    if (!v.has_value())
      throw ValidationError(std::string("composite: missing required loss ") +
                            name);
    return *v;
  };

  if (mode == gap::Mode::kMssdg) {
    const double lambda = lambda_ramp(step, total_steps);
    if (lambda_out) *lambda_out = lambda;
    const double reg = w.p1 * need(parts.ssa, "ssa") +
                       w.p2 * need(parts.sda, "sda") +
                       w.p3 * need(parts.lp, "lp") + w.p4 * need(parts.fc, "fc") +
                       w.p5 * need(parts.pe, "pe") + w.p6 * need(parts.tc, "tc");
    return lambda * reg + need(parts.supervised, "supervised");
  }

  if (lambda_out) *lambda_out = 1.0;
  return w.p1 * need(parts.ssa, "ssa") + w.p2 * need(parts.sda, "sda") +
         w.p3 * need(parts.lp, "lp") + w.p4 * need(parts.fc, "fc") +
         w.p7 * need(parts.tic, "tic");
}

}  // namespace gap::losses

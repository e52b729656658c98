#include "gap/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gap/kernels/kernels.hpp"

namespace gap::model {

namespace {

using Eigen::VectorXd;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Layer primitives. All tensors are per-sample; conv features are (C, H, W).

struct ConvSpec {
  int ic = 0, oc = 0, kh = 0, kw = 0, sh = 1, sw = 1, ph = 0, pw = 0;
  int wi = -1, bi = -1;  // parameter registry indices
  int out_h(int h) const { return (h + 2 * ph - kh) / sh + 1; }
  int out_w(int w) const { return (w + 2 * pw - kw) / sw + 1; }
};

struct GnSpec {
  int c = 0, groups = 1;
  int gi = -1, bi = -1;
};

struct DenseSpec {
  int in = 0, out = 0;
  int wi = -1, bi = -1;
};

void im2col(const Tensor& x, const ConvSpec& s, std::vector<double>* col) {
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  const int oh = s.out_h(h), ow = s.out_w(w);
  const int k = s.ic * s.kh * s.kw;
  col->assign(static_cast<std::size_t>(k) * oh * ow, 0.0);
  for (int c = 0; c < s.ic; ++c) {
    const double* xc = x.data() + static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < s.kh; ++i) {
      for (int j = 0; j < s.kw; ++j) {
        double* dst = col->data() +
                      (static_cast<std::size_t>(c) * s.kh * s.kw + i * s.kw + j) *
                          oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * s.sh + i - s.ph;
          if (y < 0 || y >= h) continue;
          const double* src = xc + static_cast<std::size_t>(y) * w;
          double* drow = dst + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int xx = ox * s.sw + j - s.pw;
            if (xx >= 0 && xx < w) drow[ox] = src[xx];
          }
        }
      }
    }
  }
}

void col2im(const std::vector<double>& col, const ConvSpec& s, Tensor* dx) {
  const int h = static_cast<int>(dx->dim(1));
  const int w = static_cast<int>(dx->dim(2));
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int c = 0; c < s.ic; ++c) {
    double* xc = dx->data() + static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < s.kh; ++i) {
      for (int j = 0; j < s.kw; ++j) {
        const double* src = col.data() +
                            (static_cast<std::size_t>(c) * s.kh * s.kw +
                             i * s.kw + j) *
                                oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * s.sh + i - s.ph;
          if (y < 0 || y >= h) continue;
          double* drow = xc + static_cast<std::size_t>(y) * w;
          const double* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int xx = ox * s.sw + j - s.pw;
            if (xx >= 0 && xx < w) drow[xx] += srow[ox];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const ConvSpec& s,
                    const std::vector<Param>& params) {
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  const int oh = s.out_h(h), ow = s.out_w(w);
  const int k = s.ic * s.kh * s.kw;
  std::vector<double> col;
  im2col(x, s, &col);
  Tensor y({static_cast<std::size_t>(s.oc), static_cast<std::size_t>(oh),
            static_cast<std::size_t>(ow)});
  kernels::gemm<double>(false, false, s.oc, oh * ow, k, 1.0,
                        params[s.wi].value.data(), k, col.data(), oh * ow, 0.0,
                        y.data(), oh * ow);
  const double* b = params[s.bi].value.data();
  for (int oc = 0; oc < s.oc; ++oc) {
    double* row = y.data() + static_cast<std::size_t>(oc) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) row[i] += b[oc];
  }
  return y;
}

void conv_backward(const Tensor& x, const Tensor& dy, const ConvSpec& s,
                   const std::vector<Param>& params, ParamGrads* pg,
                   Tensor* dx) {
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  const int oh = s.out_h(h), ow = s.out_w(w);
  const int k = s.ic * s.kh * s.kw;
  std::vector<double> col;
  im2col(x, s, &col);

  // dW += dY col^T; db += row sums.
  kernels::gemm<double>(false, true, s.oc, k, oh * ow, 1.0, dy.data(), oh * ow,
                        col.data(), oh * ow, 1.0, pg->g[s.wi].data(), k);
  double* db = pg->g[s.bi].data();
  for (int oc = 0; oc < s.oc; ++oc)
    db[oc] += kernels::reduce_sum(
        static_cast<std::size_t>(oh) * ow,
        dy.data() + static_cast<std::size_t>(oc) * oh * ow);

  if (dx) {
    std::vector<double> dcol(static_cast<std::size_t>(k) * oh * ow);
    kernels::gemm<double>(true, false, k, oh * ow, s.oc, 1.0,
                          params[s.wi].value.data(), k, dy.data(), oh * ow, 0.0,
                          dcol.data(), oh * ow);
    col2im(dcol, s, dx);
  }
}

struct GnCache {
  Tensor xhat;                   // normalized pre-affine
  std::vector<double> inv_std;   // per group
};

Tensor gn_forward(const Tensor& x, const GnSpec& s,
                  const std::vector<Param>& params, GnCache* cache) {
  const std::size_t c = x.dim(0), spatial = x.dim(1) * x.dim(2);
  const int gc = s.c / s.groups;
  Tensor y(x.shape());
  cache->xhat = Tensor(x.shape());
  cache->inv_std.assign(s.groups, 0.0);
  const double* gamma = params[s.gi].value.data();
  const double* beta = params[s.bi].value.data();
  for (int g = 0; g < s.groups; ++g) {
    const std::size_t n = static_cast<std::size_t>(gc) * spatial;
    const double* xp = x.data() + static_cast<std::size_t>(g) * n;
    const double m = kernels::reduce_sum(n, xp) / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xp[i] - m) * (xp[i] - m);
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(n) + kStdEps);
    cache->inv_std[g] = inv;
    double* xh = cache->xhat.data() + static_cast<std::size_t>(g) * n;
    double* yp = y.data() + static_cast<std::size_t>(g) * n;
    for (int cc = 0; cc < gc; ++cc) {
      const int ch = g * gc + cc;
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = static_cast<std::size_t>(cc) * spatial + i;
        xh[idx] = (xp[idx] - m) * inv;
        yp[idx] = gamma[ch] * xh[idx] + beta[ch];
      }
    }
  }
  (void)c;
  return y;
}

void gn_backward(const Tensor& dy, const GnSpec& s, const GnCache& cache,
                 const std::vector<Param>& params, ParamGrads* pg, Tensor* dx) {
  const std::size_t spatial = cache.xhat.dim(1) * cache.xhat.dim(2);
  const int gc = s.c / s.groups;
  const double* gamma = params[s.gi].value.data();
  double* dgamma = pg->g[s.gi].data();
  double* dbeta = pg->g[s.bi].data();
  for (int g = 0; g < s.groups; ++g) {
    const std::size_t n = static_cast<std::size_t>(gc) * spatial;
    const double* dyp = dy.data() + static_cast<std::size_t>(g) * n;
    const double* xh = cache.xhat.data() + static_cast<std::size_t>(g) * n;
    double* dxp = dx->data() + static_cast<std::size_t>(g) * n;

    // Affine backward, and dxhat statistics for the standardization.
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (int cc = 0; cc < gc; ++cc) {
      const int ch = g * gc + cc;
      double sg = 0.0, sb = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = static_cast<std::size_t>(cc) * spatial + i;
        sg += dyp[idx] * xh[idx];
        sb += dyp[idx];
        const double dxh = dyp[idx] * gamma[ch];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh[idx];
      }
      dgamma[ch] += sg;
      dbeta[ch] += sb;
    }
    const double mean_dxh = sum_dxh / static_cast<double>(n);
    const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(n);
    for (int cc = 0; cc < gc; ++cc) {
      const int ch = g * gc + cc;
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = static_cast<std::size_t>(cc) * spatial + i;
        const double dxh = dyp[idx] * gamma[ch];
        dxp[idx] +=
            (dxh - mean_dxh - xh[idx] * mean_dxh_xh) * cache.inv_std[g];
      }
    }
  }
}

VectorXd dense_forward(const VectorXd& x, const DenseSpec& s,
                       const std::vector<Param>& params) {
  VectorXd y(s.out);
  const double* w = params[s.wi].value.data();
  const double* b = params[s.bi].value.data();
  for (int o = 0; o < s.out; ++o)
    y(o) = kernels::dot<double>(s.in, w + static_cast<std::size_t>(o) * s.in,
                                x.data()) +
           b[o];
  return y;
}

void dense_backward(const VectorXd& x, const VectorXd& dy, const DenseSpec& s,
                    const std::vector<Param>& params, ParamGrads* pg,
                    VectorXd* dx) {
  double* dw = pg->g[s.wi].data();
  double* db = pg->g[s.bi].data();
  const double* w = params[s.wi].value.data();
  if (dx) dx->setZero(s.in);
  for (int o = 0; o < s.out; ++o) {
    kernels::axpy<double>(s.in, dy(o), x.data(),
                          dw + static_cast<std::size_t>(o) * s.in);
    db[o] += dy(o);
    if (dx)
      kernels::axpy<double>(s.in, dy(o), w + static_cast<std::size_t>(o) * s.in,
                            dx->data());
  }
}

// Non-affine layer norm over a vector; backward mirrors the group formula.
VectorXd ln_forward(const VectorXd& v, VectorXd* xhat, double* inv_std) {
  const double n = static_cast<double>(v.size());
  const double m = v.mean();
  double var = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) var += (v(i) - m) * (v(i) - m);
  const double inv = 1.0 / std::sqrt(var / n + kStdEps);
  *inv_std = inv;
  *xhat = (v.array() - m) * inv;
  return *xhat;
}

VectorXd ln_backward(const VectorXd& dy, const VectorXd& xhat, double inv_std) {
  const double mg = dy.mean();
  const double mgy = dy.dot(xhat) / static_cast<double>(dy.size());
  return ((dy.array() - mg) - xhat.array() * mgy) * inv_std;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------

struct GapModel::Arch {
  struct ResUnit {
    ConvSpec c1, c2;
    GnSpec g1, g2;
  };
  struct Stage {
    ConvSpec conv;
    GnSpec gn;
    std::vector<ResUnit> res;
  };
  std::vector<Stage> stages;
  std::array<DenseSpec, kNumTasks + 1> gate_fc1;  // last gate feeds identity
  std::array<DenseSpec, kNumTasks + 1> gate_fc2;
  std::array<DenseSpec, 3> heads;  // hr, rr, spo2
  ConvSpec bvp_in;
  GnSpec bvp_in_gn;
  std::vector<ConvSpec> bvp_up;
  std::vector<GnSpec> bvp_up_gn;
  ConvSpec bvp_out;
  DenseSpec id_fc1, id_fc2;
  int l0 = 0;      // decoder input length
  int up_steps = 0;
};

void ModelConfig::apply_preset() {
  if (preset == "desk") {
    enc_channels = {12, 24, 48, 96};
    enc_res_units = 0;
    gate_hidden = 64;
    id_hidden = 64;
    bvp_channels = 32;
  } else if (preset == "paper") {
    enc_channels = {64, 128, 256, 512};
    enc_res_units = 1;
    gate_hidden = 128;
    id_hidden = 128;
    bvp_channels = 64;
  } else {
    throw ValidationError("ModelConfig: unknown preset " + preset);
  }
}

void ModelConfig::validate() const {
  if (enc_channels.size() < 2)
    throw ValidationError("ModelConfig: need at least 2 encoder blocks");
  if (n_identities < 1) throw ValidationError("ModelConfig: n_identities < 1");
  if (enc_kernel_t < 3 || enc_kernel_t % 2 == 0)
    throw ValidationError("ModelConfig: enc_kernel_t must be odd and >= 3");
  const int stages = static_cast<int>(enc_channels.size());
  const int w_div = enc_w_stride0 * (1 << (stages - 1));
  if (input_t % (1 << stages) != 0 || input_w % w_div != 0)
    throw ValidationError("ModelConfig: input shape must divide the stride plan");
  for (int c : enc_channels)
    if (c % gn_groups != 0)
      throw ValidationError("ModelConfig: channels must divide gn_groups");
  if (input_t / (1 << stages) < 2)
    throw ValidationError("ModelConfig: input_t too small for encoder depth");
}

GapModel::GapModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  build_arch();
  init_params(seed);
}

GapModel::~GapModel() = default;

GapModel::GapModel(const GapModel& other) : cfg_(other.cfg_), seed_(other.seed_) {
  build_arch();  // rebuilds the registry in the same deterministic order
  for (std::size_t i = 0; i < params_.size(); ++i)
    params_[i].value = other.params_[i].value;
}

int GapModel::feature_dim() const { return cfg_.enc_channels.back(); }

void GapModel::build_arch() {
  arch_ = std::make_unique<Arch>();
  params_.clear();

  auto add_param = [&](const std::string& name,
                       std::vector<std::size_t> shape) {
    params_.push_back({name, Tensor(std::move(shape))});
    return static_cast<int>(params_.size() - 1);
  };
  auto add_conv = [&](const std::string& name, int ic, int oc, int kh, int kw,
                      int sh, int sw, int ph, int pw) {
    ConvSpec s{ic, oc, kh, kw, sh, sw, ph, pw, 0, 0};
    s.wi = add_param(name + ".w", {static_cast<std::size_t>(oc),
                                   static_cast<std::size_t>(ic * kh * kw)});
    s.bi = add_param(name + ".b", {static_cast<std::size_t>(oc)});
    return s;
  };
  auto add_gn = [&](const std::string& name, int c, int groups) {
    GnSpec s{c, groups, 0, 0};
    s.gi = add_param(name + ".g", {static_cast<std::size_t>(c)});
    s.bi = add_param(name + ".b", {static_cast<std::size_t>(c)});
    return s;
  };
  auto add_dense = [&](const std::string& name, int in, int out) {
    DenseSpec s{in, out, 0, 0};
    s.wi = add_param(name + ".w", {static_cast<std::size_t>(out),
                                   static_cast<std::size_t>(in)});
    s.bi = add_param(name + ".b", {static_cast<std::size_t>(out)});
    return s;
  };

  int prev = 3;
  for (std::size_t b = 0; b < cfg_.enc_channels.size(); ++b) {
    const int c = cfg_.enc_channels[b];
    Arch::Stage st;
    const std::string base = "enc.block" + std::to_string(b);
    const int kt = cfg_.enc_kernel_t;
    const int sw = b == 0 ? cfg_.enc_w_stride0 : 2;
    st.conv = add_conv(base + ".conv", prev, c, kt, 3, 2, sw, kt / 2, 1);
    st.gn = add_gn(base + ".gn", c, cfg_.gn_groups);
    for (int r = 0; r < cfg_.enc_res_units; ++r) {
      Arch::ResUnit u;
      const std::string rb = base + ".res" + std::to_string(r);
      u.c1 = add_conv(rb + ".conv1", c, c, 3, 3, 1, 1, 1, 1);
      u.g1 = add_gn(rb + ".gn1", c, cfg_.gn_groups);
      u.c2 = add_conv(rb + ".conv2", c, c, 3, 3, 1, 1, 1, 1);
      u.g2 = add_gn(rb + ".gn2", c, cfg_.gn_groups);
      st.res.push_back(u);
    }
    arch_->stages.push_back(std::move(st));
    prev = c;
  }

  const int d = feature_dim();
  static const char* kGateNames[kNumTasks + 1] = {"hr", "rr", "spo2", "bvp",
                                                  "id"};
  for (int i = 0; i <= kNumTasks; ++i) {
    const std::string base = std::string("gate.") + kGateNames[i];
    arch_->gate_fc1[i] = add_dense(base + ".fc1", d, cfg_.gate_hidden);
    arch_->gate_fc2[i] = add_dense(base + ".fc2", cfg_.gate_hidden, d);
  }

  arch_->heads[kTaskHr] = add_dense("head.hr", d, 1);
  arch_->heads[kTaskRr] = add_dense("head.rr", d, 1);
  arch_->heads[kTaskSpo2] = add_dense("head.spo2", d, 1);

  const int stages = static_cast<int>(cfg_.enc_channels.size());
  arch_->l0 = cfg_.input_t / (1 << stages);
  arch_->up_steps = stages;  // x2 per step restores input_t
  arch_->bvp_in = add_conv("bvp.in", d, cfg_.bvp_channels, 1, 3, 1, 1, 0, 1);
  arch_->bvp_in_gn = add_gn("bvp.in_gn", cfg_.bvp_channels, cfg_.gn_groups);
  for (int u = 0; u < arch_->up_steps; ++u) {
    const std::string base = "bvp.up" + std::to_string(u);
    arch_->bvp_up.push_back(add_conv(base + ".conv", cfg_.bvp_channels,
                                     cfg_.bvp_channels, 1, 3, 1, 1, 0, 1));
    arch_->bvp_up_gn.push_back(
        add_gn(base + ".gn", cfg_.bvp_channels, cfg_.gn_groups));
  }
  arch_->bvp_out = add_conv("bvp.out", cfg_.bvp_channels, 1, 1, 3, 1, 1, 0, 1);

  arch_->id_fc1 = add_dense("id.fc1", d, cfg_.id_hidden);
  arch_->id_fc2 = add_dense("id.fc2", cfg_.id_hidden, cfg_.n_identities + 1);
}

void GapModel::init_params(std::uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0x6170u));
  for (auto& p : params_) {
    const auto& name = p.name;
    if (name.size() > 2 && name.substr(name.size() - 2) == ".w") {
      const std::size_t fan_in = p.value.dim(p.value.ndim() - 1);
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < p.value.size(); ++i)
        p.value[i] = rng.normal(0.0, std);
    } else if (name.size() > 2 && name.substr(name.size() - 2) == ".g") {
      p.value.fill(1.0);
    } else {
      p.value.zero();
    }
  }
  // Heads start near physiological midpoints so early losses stay sane.
  params_[arch_->heads[kTaskHr].bi].value[0] = 90.0;
  params_[arch_->heads[kTaskRr].bi].value[0] = 15.0;
  params_[arch_->heads[kTaskSpo2].bi].value[0] = 95.0;
}

ParamGrads GapModel::zero_grads() const {
  ParamGrads pg;
  pg.g.reserve(params_.size());
  for (const auto& p : params_) pg.g.emplace_back(p.value.shape());
  return pg;
}

void ParamGrads::add_scaled(const ParamGrads& other, double scale) {
  for (std::size_t i = 0; i < g.size(); ++i)
    kernels::axpy(g[i].size(), scale, other.g[i].data(), g[i].data());
}

std::uint64_t GapModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    h = fnv1a64(p.name.data(), p.name.size(), h);
    h = fnv1a64(p.value.data(), p.value.size() * sizeof(double), h);
  }
  return h;
}

std::vector<std::string> GapModel::trainable_parameters(
    gap::Mode mode, const std::vector<std::string>& freeze_prefixes) const {
  // Both regimes train every parameter (the identity head included: the
  // identity cross-entropy sits inside L_U in both). The freeze list is the
  // explicit routing override.
  (void)mode;
  std::vector<std::string> out;
  for (const auto& p : params_) {
    bool frozen = false;
    for (const auto& pre : freeze_prefixes)
      if (p.name.rfind(pre, 0) == 0) {
        frozen = true;
        break;
      }
    if (!frozen) out.push_back(p.name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward caches

struct SampleCacheImpl {
  gap::Mode mode = gap::Mode::kMssdg;
  Tensor x0;  // (3, T, W)
  struct StageCache {
    Tensor conv_out;   // pre-GN
    GnCache gn;
    Tensor pre_relu;   // post-affine GN output
    Tensor feat;       // post-ReLU (the exposed block feature)
    struct ResCache {
      Tensor in;
      Tensor c1_out;
      GnCache g1;
      Tensor pre_relu1;
      Tensor r1;
      Tensor c2_out;
      GnCache g2;
      Tensor pre_relu2;  // g2 affine out + skip
      Tensor out;
    };
    std::vector<ResCache> res;
  };
  std::vector<StageCache> stages;

  VectorXd z;  // pooled shared feature
  struct GateCache {
    VectorXd h1, ln_xhat, r1, a2, gate, z_task;
    double ln_inv = 0.0;
  };
  std::array<GateCache, kNumTasks + 1> gates;

  // Scalar heads: decoder-input LayerNorm caches.
  struct HeadCache {
    VectorXd v, xhat, u;
    double inv = 0.0;
  };
  std::array<HeadCache, 3> heads;

  // BVP decoder.
  Tensor pooled_map;   // (D, 1, L0): W-pooled last block feature
  Tensor d0;           // gated (+ fused) map pre-LN
  Tensor d0_ln;        // post-LN decoder input
  std::vector<VectorXd> d0_xhat;  // per time column
  std::vector<double> d0_inv;
  struct BvpLayer {
    Tensor in;        // layer input (C,1,L)
    Tensor conv_out;  // pre-GN
    GnCache gn;
    Tensor pre_relu;
    Tensor out;
  };
  BvpLayer bvp_in;
  std::vector<Tensor> up_in;  // inputs to each upsample (pre-upsample)
  std::vector<BvpLayer> bvp_up;
  Tensor bvp_out_in;

  VectorXd id_h, id_r;

  SampleOutput out;
};

namespace {

Tensor upsample2_forward(const Tensor& x) {
  const std::size_t c = x.dim(0), l = x.dim(2);
  Tensor y({c, 1, 2 * l});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xp = x.data() + ch * l;
    double* yp = y.data() + ch * 2 * l;
    for (std::size_t t = 0; t < l; ++t) {
      const double next = xp[std::min(t + 1, l - 1)];
      yp[2 * t] = xp[t];
      yp[2 * t + 1] = 0.5 * (xp[t] + next);
    }
  }
  return y;
}

Tensor upsample2_backward(const Tensor& dy, std::size_t l) {
  const std::size_t c = dy.dim(0);
  Tensor dx({c, 1, l});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* gp = dy.data() + ch * 2 * l;
    double* dp = dx.data() + ch * l;
    for (std::size_t t = 0; t < l; ++t) {
      double g = gp[2 * t] + 0.5 * gp[2 * t + 1];
      if (t > 0) g += 0.5 * gp[2 * t - 1];
      if (t == l - 1) g += 0.5 * gp[2 * t + 1];
      dp[t] = g;
    }
  }
  return dx;
}

void relu_tensor(const Tensor& x, Tensor* y) {
  *y = Tensor(x.shape());
  kernels::relu(x.size(), x.data(), y->data());
}

}  // namespace

SampleOutput GapModel::forward_sample(const Tensor& stmap, gap::Mode mode,
                                      SampleCache* cache) const {
  if (stmap.ndim() != 3 || stmap.dim(2) != 3)
    throw ValidationError("forward_sample: stmap must be (T, W, 3)");
  if (static_cast<int>(stmap.dim(0)) != cfg_.input_t ||
      static_cast<int>(stmap.dim(1)) != cfg_.input_w)
    throw ValidationError("forward_sample: stmap shape mismatch with config");

  auto impl = std::make_shared<SampleCacheImpl>();
  impl->mode = mode;

  const std::size_t t = stmap.dim(0), w = stmap.dim(1);
  impl->x0 = Tensor({3, t, w});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        impl->x0.at(c, i, j) = stmap.at(i, j, c);

  SampleOutput& out = impl->out;

  // Encoder.
  const Tensor* cur = &impl->x0;
  impl->stages.resize(arch_->stages.size());
  for (std::size_t b = 0; b < arch_->stages.size(); ++b) {
    auto& st = arch_->stages[b];
    auto& sc = impl->stages[b];
    sc.conv_out = conv_forward(*cur, st.conv, params_);
    sc.pre_relu = gn_forward(sc.conv_out, st.gn, params_, &sc.gn);
    relu_tensor(sc.pre_relu, &sc.feat);
    for (auto& unit : st.res) {
      SampleCacheImpl::StageCache::ResCache rc;
      rc.in = sc.feat;
      rc.c1_out = conv_forward(rc.in, unit.c1, params_);
      rc.pre_relu1 = gn_forward(rc.c1_out, unit.g1, params_, &rc.g1);
      relu_tensor(rc.pre_relu1, &rc.r1);
      rc.c2_out = conv_forward(rc.r1, unit.c2, params_);
      rc.pre_relu2 = gn_forward(rc.c2_out, unit.g2, params_, &rc.g2);
      for (std::size_t i = 0; i < rc.pre_relu2.size(); ++i)
        rc.pre_relu2[i] += rc.in[i];
      relu_tensor(rc.pre_relu2, &rc.out);
      sc.feat = rc.out;
      sc.res.push_back(std::move(rc));
    }
    out.block_feats.push_back(sc.feat);
    cur = &sc.feat;
  }

  // Pooling: z over (H, W); pooled_map over W only.
  const Tensor& top = *cur;
  const std::size_t d = top.dim(0), fh = top.dim(1), fw = top.dim(2);
  impl->z.resize(d);
  impl->pooled_map = Tensor({d, 1, fh});
  for (std::size_t c = 0; c < d; ++c) {
    double zsum = 0.0;
    for (std::size_t i = 0; i < fh; ++i) {
      const double* row = top.data() + (c * fh + i) * fw;
      const double s = kernels::reduce_sum(fw, row);
      impl->pooled_map.at(c, 0, i) = s / static_cast<double>(fw);
      zsum += s;
    }
    impl->z(c) = zsum / static_cast<double>(fh * fw);
  }
  out.z_shared = impl->z;

  // Gates.
  for (int gidx = 0; gidx <= kNumTasks; ++gidx) {
    auto& gc = impl->gates[gidx];
    gc.h1 = dense_forward(impl->z, arch_->gate_fc1[gidx], params_);
    VectorXd ln = ln_forward(gc.h1, &gc.ln_xhat, &gc.ln_inv);
    gc.r1 = ln.cwiseMax(0.0);
    gc.a2 = dense_forward(gc.r1, arch_->gate_fc2[gidx], params_);
    gc.gate.resize(gc.a2.size());
    for (Eigen::Index i = 0; i < gc.a2.size(); ++i) gc.gate(i) = sigmoid(gc.a2(i));
    gc.z_task = gc.gate.cwiseProduct(impl->z);
    if (gidx < kNumTasks)
      out.z_task[gidx] = gc.z_task;
    else
      out.z_p = gc.z_task;
  }

  // Scalar heads: u = LN(z_i) in MSSDG, LN(z_i + z_p) in TTPA.
  const bool fused = mode == gap::Mode::kTtpa;
  for (int hidx = 0; hidx < 3; ++hidx) {
    auto& hc = impl->heads[hidx];
    hc.v = impl->gates[hidx].z_task;
    if (fused) hc.v += impl->gates[kNumTasks].z_task;
    hc.u = ln_forward(hc.v, &hc.xhat, &hc.inv);
    const VectorXd y = dense_forward(hc.u, arch_->heads[hidx], params_);
    if (hidx == kTaskHr) out.hr = y(0);
    if (hidx == kTaskRr) out.rr = y(0);
    if (hidx == kTaskSpo2) out.spo2 = y(0);
  }

  // BVP decoder: channel-gated temporal map, LayerNorm per time column.
  const std::size_t l0 = fh;
  impl->d0 = Tensor({d, 1, l0});
  const VectorXd& bvp_gate = impl->gates[kTaskBvp].gate;
  const VectorXd& zp = impl->gates[kNumTasks].z_task;
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < l0; ++i) {
      double v = bvp_gate(c) * impl->pooled_map.at(c, 0, i);
      if (fused) v += zp(c);
      impl->d0.at(c, 0, i) = v;
    }
  impl->d0_ln = Tensor({d, 1, l0});
  impl->d0_xhat.resize(l0);
  impl->d0_inv.assign(l0, 0.0);
  for (std::size_t i = 0; i < l0; ++i) {
    VectorXd col(d);
    for (std::size_t c = 0; c < d; ++c) col(c) = impl->d0.at(c, 0, i);
    VectorXd xhat;
    double inv;
    const VectorXd u = ln_forward(col, &xhat, &inv);
    impl->d0_xhat[i] = xhat;
    impl->d0_inv[i] = inv;
    for (std::size_t c = 0; c < d; ++c) impl->d0_ln.at(c, 0, i) = u(c);
  }

  auto run_bvp_layer = [&](const Tensor& in, const ConvSpec& conv,
                           const GnSpec& gn, SampleCacheImpl::BvpLayer* lc) {
    lc->in = in;
    lc->conv_out = conv_forward(in, conv, params_);
    lc->pre_relu = gn_forward(lc->conv_out, gn, params_, &lc->gn);
    relu_tensor(lc->pre_relu, &lc->out);
  };

  run_bvp_layer(impl->d0_ln, arch_->bvp_in, arch_->bvp_in_gn, &impl->bvp_in);
  Tensor curt = impl->bvp_in.out;
  impl->bvp_up.resize(arch_->up_steps);
  impl->up_in.resize(arch_->up_steps);
  for (int u = 0; u < arch_->up_steps; ++u) {
    impl->up_in[u] = curt;
    Tensor upped = upsample2_forward(curt);
    run_bvp_layer(upped, arch_->bvp_up[u], arch_->bvp_up_gn[u],
                  &impl->bvp_up[u]);
    curt = impl->bvp_up[u].out;
  }
  impl->bvp_out_in = curt;
  Tensor bvp_map = conv_forward(curt, arch_->bvp_out, params_);
  out.bvp.resize(bvp_map.dim(2));
  for (std::size_t i = 0; i < bvp_map.dim(2); ++i) out.bvp(i) = bvp_map.at(0, 0, i);

  // Identity head on the gated identity feature.
  impl->id_h = dense_forward(zp, arch_->id_fc1, params_);
  impl->id_r = impl->id_h.cwiseMax(0.0);
  out.id_logits = dense_forward(impl->id_r, arch_->id_fc2, params_);

  if (cache) cache->impl = impl;
  return out;
}

void GapModel::backward_sample(const SampleCache& cache,
                               const SampleGradients& gout,
                               ParamGrads* pg) const {
  const auto& impl = *cache.impl;
  const bool fused = impl.mode == gap::Mode::kTtpa;
  const auto d = static_cast<std::size_t>(impl.z.size());
  const std::size_t l0 = impl.pooled_map.dim(2);

  VectorXd dz = VectorXd::Zero(d);
  std::array<VectorXd, kNumTasks + 1> dz_task;
  for (auto& v : dz_task) v = VectorXd::Zero(d);
  std::array<VectorXd, kNumTasks + 1> dgate_direct;
  for (auto& v : dgate_direct) v = VectorXd::Zero(d);
  Tensor dpooled({d, 1, l0});

  // External gradients on exposed features.
  for (int i = 0; i < kNumTasks; ++i)
    if (gout.dz_task[i].size() > 0) dz_task[i] += gout.dz_task[i];
  if (gout.dz_p.size() > 0) dz_task[kNumTasks] += gout.dz_p;

  // Identity head.
  if (gout.did_logits.size() > 0) {
    VectorXd dr;
    dense_backward(impl.id_r, gout.did_logits, arch_->id_fc2, params_, pg, &dr);
    VectorXd dh(dr.size());
    for (Eigen::Index i = 0; i < dr.size(); ++i)
      dh(i) = impl.id_h(i) > 0.0 ? dr(i) : 0.0;
    VectorXd dzp;
    dense_backward(impl.gates[kNumTasks].z_task, dh, arch_->id_fc1, params_, pg,
                   &dzp);
    dz_task[kNumTasks] += dzp;
  }

  // Scalar heads.
  const double dscalar[3] = {gout.dhr, gout.drr, gout.dspo2};
  for (int hidx = 0; hidx < 3; ++hidx) {
    if (dscalar[hidx] == 0.0) continue;
    const auto& hc = impl.heads[hidx];
    VectorXd dy(1);
    dy(0) = dscalar[hidx];
    VectorXd du;
    dense_backward(hc.u, dy, arch_->heads[hidx], params_, pg, &du);
    const VectorXd dv = ln_backward(du, hc.xhat, hc.inv);
    dz_task[hidx] += dv;
    if (fused) dz_task[kNumTasks] += dv;
  }

  // BVP decoder.
  if (gout.dbvp.size() > 0) {
    Tensor dmap({1, 1, static_cast<std::size_t>(gout.dbvp.size())});
    for (Eigen::Index i = 0; i < gout.dbvp.size(); ++i)
      dmap.at(0, 0, i) = gout.dbvp(i);

    Tensor dcur(impl.bvp_out_in.shape());
    conv_backward(impl.bvp_out_in, dmap, arch_->bvp_out, params_, pg, &dcur);

    auto bvp_layer_backward = [&](const SampleCacheImpl::BvpLayer& lc,
                                  const ConvSpec& conv, const GnSpec& gn,
                                  const Tensor& dout) {
      Tensor dpre(dout.shape());
      kernels::relu_backward(dout.size(), lc.pre_relu.data(), dout.data(),
                             dpre.data());
      Tensor dconv(lc.conv_out.shape());
      gn_backward(dpre, gn, lc.gn, params_, pg, &dconv);
      Tensor din(lc.in.shape());
      conv_backward(lc.in, dconv, conv, params_, pg, &din);
      return din;
    };

    for (int u = arch_->up_steps - 1; u >= 0; --u) {
      Tensor dup = bvp_layer_backward(impl.bvp_up[u], arch_->bvp_up[u],
                                      arch_->bvp_up_gn[u], dcur);
      dcur = upsample2_backward(dup, impl.up_in[u].dim(2));
    }
    Tensor dd0_ln = bvp_layer_backward(impl.bvp_in, arch_->bvp_in,
                                       arch_->bvp_in_gn, dcur);

    // Per-column LayerNorm, then the gate/map/(z_p) split of
    // d0 = gate_bvp .* pooled_map (+ z_p).
    const VectorXd& bvp_gate = impl.gates[kTaskBvp].gate;
    for (std::size_t i = 0; i < l0; ++i) {
      VectorXd dcol(d);
      for (std::size_t c = 0; c < d; ++c) dcol(c) = dd0_ln.at(c, 0, i);
      const VectorXd dv = ln_backward(dcol, impl.d0_xhat[i], impl.d0_inv[i]);
      for (std::size_t c = 0; c < d; ++c) {
        dpooled.at(c, 0, i) += dv(c) * bvp_gate(c);
        dgate_direct[kTaskBvp](c) += dv(c) * impl.pooled_map.at(c, 0, i);
        if (fused) dz_task[kNumTasks](c) += dv(c);
      }
    }
  }

  // Gate bodies: z_task = gate .* z plus any direct gate-output gradient.
  for (int gidx = 0; gidx <= kNumTasks; ++gidx) {
    const auto& gc = impl.gates[gidx];
    const bool has_task = dz_task[gidx].squaredNorm() > 0.0;
    const bool has_direct = dgate_direct[gidx].squaredNorm() > 0.0;
    if (!has_task && !has_direct) continue;

    VectorXd dgate = dgate_direct[gidx];
    if (has_task) {
      dgate += dz_task[gidx].cwiseProduct(impl.z);
      dz += dz_task[gidx].cwiseProduct(gc.gate);
    }
    VectorXd da2(dgate.size());
    for (Eigen::Index i = 0; i < dgate.size(); ++i)
      da2(i) = dgate(i) * gc.gate(i) * (1.0 - gc.gate(i));
    VectorXd dr1;
    dense_backward(gc.r1, da2, arch_->gate_fc2[gidx], params_, pg, &dr1);
    VectorXd dln(dr1.size());
    for (Eigen::Index i = 0; i < dr1.size(); ++i)
      dln(i) = gc.ln_xhat(i) > 0.0 ? dr1(i) : 0.0;
    const VectorXd dh1 = ln_backward(dln, gc.ln_xhat, gc.ln_inv);
    VectorXd dz_in;
    dense_backward(impl.z, dh1, arch_->gate_fc1[gidx], params_, pg, &dz_in);
    dz += dz_in;
  }

  // Pooling backward into the top feature map.
  const auto& top_stage = impl.stages.back();
  const Tensor& top = top_stage.feat;
  const std::size_t fh = top.dim(1), fw = top.dim(2);
  Tensor dtop(top.shape());
  const double inv_hw = 1.0 / static_cast<double>(fh * fw);
  const double inv_w = 1.0 / static_cast<double>(fw);
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < fh; ++i) {
      const double g = dz(c) * inv_hw + dpooled.at(c, 0, i) * inv_w;
      double* row = dtop.data() + (c * fh + i) * fw;
      for (std::size_t j = 0; j < fw; ++j) row[j] = g;
    }

  // Encoder backward, adding any external block-feature gradients.
  Tensor dfeat = std::move(dtop);
  for (int b = static_cast<int>(arch_->stages.size()) - 1; b >= 0; --b) {
    const auto& st = arch_->stages[b];
    const auto& sc = impl.stages[b];
    if (static_cast<int>(gout.dblock_feats.size()) > b &&
        !gout.dblock_feats[b].empty()) {
      const Tensor& ext = gout.dblock_feats[b];
      kernels::axpy(dfeat.size(), 1.0, ext.data(), dfeat.data());
    }

    for (int r = static_cast<int>(sc.res.size()) - 1; r >= 0; --r) {
      const auto& rc = sc.res[r];
      const auto& unit = st.res[r];
      Tensor dpre2(dfeat.shape());
      kernels::relu_backward(dfeat.size(), rc.pre_relu2.data(), dfeat.data(),
                             dpre2.data());
      Tensor dc2(rc.c2_out.shape());
      gn_backward(dpre2, unit.g2, rc.g2, params_, pg, &dc2);
      Tensor dr1(rc.r1.shape());
      conv_backward(rc.r1, dc2, unit.c2, params_, pg, &dr1);
      Tensor dpre1(dr1.shape());
      kernels::relu_backward(dr1.size(), rc.pre_relu1.data(), dr1.data(),
                             dpre1.data());
      Tensor dc1(rc.c1_out.shape());
      gn_backward(dpre1, unit.g1, rc.g1, params_, pg, &dc1);
      Tensor din(rc.in.shape());
      conv_backward(rc.in, dc1, unit.c1, params_, pg, &din);
      kernels::axpy(din.size(), 1.0, dpre2.data(), din.data());  // skip path
      dfeat = std::move(din);
    }

    Tensor dpre(dfeat.shape());
    kernels::relu_backward(dfeat.size(), sc.pre_relu.data(), dfeat.data(),
                           dpre.data());
    Tensor dconv(sc.conv_out.shape());
    gn_backward(dpre, st.gn, sc.gn, params_, pg, &dconv);
    const Tensor& input = b == 0 ? impl.x0 : impl.stages[b - 1].feat;
    if (b == 0) {
      conv_backward(input, dconv, st.conv, params_, pg, nullptr);
    } else {
      Tensor din(input.shape());
      conv_backward(input, dconv, st.conv, params_, pg, &din);
      dfeat = std::move(din);
    }
  }
}

namespace {

constexpr char kCkptMagic[9] = "GAPCKPT1";

json config_to_json(const ModelConfig& c) {
  return json{{"preset", c.preset},
              {"input_t", c.input_t},
              {"input_w", c.input_w},
              {"enc_channels", c.enc_channels},
              {"enc_res_units", c.enc_res_units},
              {"gn_groups", c.gn_groups},
              {"gate_hidden", c.gate_hidden},
              {"id_hidden", c.id_hidden},
              {"bvp_channels", c.bvp_channels},
              {"n_identities", c.n_identities}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.input_t = j.at("input_t").get<int>();
  c.input_w = j.at("input_w").get<int>();
  c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
  c.enc_res_units = j.at("enc_res_units").get<int>();
  c.gn_groups = j.at("gn_groups").get<int>();
  c.gate_hidden = j.at("gate_hidden").get<int>();
  c.id_hidden = j.at("id_hidden").get<int>();
  c.bvp_channels = j.at("bvp_channels").get<int>();
  c.n_identities = j.at("n_identities").get<int>();
  return c;
}

}  // namespace

void GapModel::save_checkpoint(const std::string& path,
                               std::uint64_t step) const {
  json tensors = json::array();
  for (const auto& p : params_)
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  const json header = {{"config", config_to_json(cfg_)},
                       {"seed", seed_},
                       {"step", step},
                       {"tensors", tensors}};
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("save_checkpoint: cannot open " + path);
  f.write(kCkptMagic, 8);
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : params_)
    f.write(reinterpret_cast<const char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  if (!f) throw ValidationError("save_checkpoint: write failed " + path);
}

GapModel::Loaded GapModel::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw ValidationError("load_checkpoint: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw ValidationError("load_checkpoint: truncated header " + path);
  const json header = json::parse(hs);

  Loaded out;
  out.step = header.at("step").get<std::uint64_t>();
  const ModelConfig cfg = config_from_json(header.at("config"));
  out.model = std::make_unique<GapModel>(cfg,
                                         header.at("seed").get<std::uint64_t>());

  const auto& tensors = header.at("tensors");
  if (tensors.size() != out.model->params_.size())
    throw ValidationError("load_checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < out.model->params_.size(); ++i) {
    auto& p = out.model->params_[i];
    if (tensors[i].at("name").get<std::string>() != p.name)
      throw ValidationError("load_checkpoint: tensor name mismatch at " +
                            p.name);
    f.read(reinterpret_cast<char*>(p.value.data()),
           static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!f) throw ValidationError("load_checkpoint: truncated data " + path);
  return out;
}

}  // namespace gap::model

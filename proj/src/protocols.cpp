#include "gap/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <thread>

#include <json.hpp>

#include "gap/kernels/kernels.hpp"
#include "gap/signal.hpp"

namespace gap::protocols {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(hw, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

std::string sample_name(const std::string& clip_id, std::size_t start) {
  return clip_id + ":" + std::to_string(start);
}

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
 public:
  Optimizer(std::string kind, double lr, const std::vector<model::Param>& params)
      : kind_(std::move(kind)), lr_(lr) {
    if (kind_ != "adam" && kind_ != "sgd")
      throw ValidationError("optimizer: unknown kind " + kind_);
    if (kind_ == "adam") {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (const auto& p : params) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
      }
    }
  }

  void step(std::vector<model::Param>& params, const model::ParamGrads& g,
            const std::vector<char>& trainable) {
    ++t_;
    if (kind_ == "sgd") {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        kernels::axpy(params[i].value.size(), -lr_, g.g[i].data(),
                      params[i].value.data());
      }
      return;
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!trainable[i]) continue;
      double* w = params[i].value.data();
      double* m = m_[i].data();
      double* v = v_[i].data();
      const double* gr = g.g[i].data();
      const std::size_t n = params[i].value.size();
      for (std::size_t j = 0; j < n; ++j) {
        m[j] = b1 * m[j] + (1.0 - b1) * gr[j];
        v[j] = b2 * v[j] + (1.0 - b2) * gr[j] * gr[j];
        w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      }
    }
  }

 private:
  std::string kind_;
  double lr_ = 0.0;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Dataset loading

void pseudo_labels(DatasetWindow* win, double fps) {
  auto& l = win->labels;
  if (!l.has_bvp || l.bvp.size() < 32) return;
  if (!l.has_hr) {
    try {
      const double f = signal::dominant_frequency(l.bvp, fps, signal::kHrBandLo,
                                                  signal::kHrBandHi);
      win->pseudo_hr = f * 60.0;
      win->has_pseudo_hr = true;
    } catch (const std::exception&) {
      win->has_pseudo_hr = false;
    }
  }
  if (!l.has_rr) {
    try {
      const auto env = signal::amplitude_envelope(l.bvp, fps);
      const double f = signal::dominant_frequency(env, fps, signal::kRrBandLo,
                                                  signal::kRrBandHi);
      win->pseudo_rr = f * 60.0;
      win->has_pseudo_rr = true;
    } catch (const std::exception&) {
      win->has_pseudo_rr = false;
    }
  }
}

LoadedDataset load_dataset(const std::string& root,
                           const std::vector<std::string>& domains,
                           stm1::FileAudit* audit, int window, int stride,
                           int model_rows) {
  LoadedDataset ds;
  ds.root = root;
  ds.manifest = stm1::read_manifest(root + "/manifest.json", audit);

  std::set<std::string> wanted(domains.begin(), domains.end());
  std::set<std::string> subjects;
  for (const auto& d : ds.manifest.domains) {
    if (!wanted.count(d.domain_id)) continue;
    for (const auto& s : d.subject_ids) subjects.insert(s);
  }
  ds.identity_vocab.assign(subjects.begin(), subjects.end());
  std::map<std::string, int> id_index;
  for (std::size_t i = 0; i < ds.identity_vocab.size(); ++i)
    id_index[ds.identity_vocab[i]] = static_cast<int>(i);

  for (const auto& clip : ds.manifest.clips) {
    if (!wanted.count(clip.domain_id)) continue;
    const std::string stem = root + "/" + clip.file;
    const std::string meta = stem.substr(0, stem.size() - 5) + ".json";

    stmap::STMap map;
    map.data = stm1::read_stm1(stem, audit);
    stm1::Sidecar sc = stm1::read_sidecar(meta, audit);
    map.fps = sc.fps;
    map.clip_id = clip.file.substr(clip.file.find('/') + 1);
    map.clip_id = map.clip_id.substr(0, map.clip_id.size() - 5);
    map.start_index = sc.start_index;

    const std::size_t clip_index = ds.clip_maps.size();
    bool warned = false;
    for (auto& w : stmap::window_stmap(map, window, stride, &warned)) {
      DatasetWindow dw;
      dw.clip_index = clip_index;
      dw.start = w.start_index - map.start_index;
      dw.input = stmap::resize_rows(w, model_rows).data;
      dw.subject_id = sc.subject_id;
      dw.domain_id = sc.domain_id;
      dw.sample_id = sample_name(map.clip_id, dw.start);
      dw.identity = id_index.count(sc.subject_id) ? id_index[sc.subject_id] : -1;

      dw.labels = sc.labels;
      if (sc.labels.has_bvp) {
        if (sc.labels.bvp.size() < dw.start + w.t())
          throw ValidationError("load_dataset: bvp label shorter than clip");
        dw.labels.bvp.assign(sc.labels.bvp.begin() + dw.start,
                             sc.labels.bvp.begin() + dw.start + w.t());
      }
      pseudo_labels(&dw, map.fps);
      ds.windows.push_back(std::move(dw));
    }
    ds.clip_maps.push_back(std::move(map));
    ds.clip_meta.push_back(std::move(sc));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Shared step machinery

StepEval compute_step(const model::GapModel& mdl,
                      const std::vector<const DatasetWindow*>& batch,
                      const std::vector<const stmap::STMap*>& maps,
                      gap::Mode mode, const losses::LossWeights& w,
                      const augment::AugmentConfig& aug_cfg, int ssm_window,
                      std::int64_t step, std::int64_t total_steps,
                      bool with_supervised, bool with_regularizers,
                      const std::vector<int>& id_targets, Rng& aug_rng,
                      model::ParamGrads* grads) {
  const std::size_t b = batch.size();
  const int rows = mdl.config().input_w;
  const int window = mdl.config().input_t;
  const bool want_grads = grads != nullptr;

  StepEval ev;
  ev.lambda = mode == gap::Mode::kMssdg
                  ? losses::lambda_ramp(step, total_steps)
                  : 1.0;

  // Augmented pairs (sequential draws keep the stream deterministic).
  std::vector<augment::AugmentedPair> pairs(b);
  for (std::size_t i = 0; i < b; ++i)
    pairs[i] = augment::make_pair(*maps[i], batch[i]->start, window,
                                  &batch[i]->labels, aug_cfg, aug_rng, rows);

  // Forward both branches in parallel.
  std::vector<model::SampleOutput> out_o(b), out_a(b);
  std::vector<model::SampleCache> cache_o(b), cache_a(b);
  const bool need_aug = with_regularizers;
  parallel_for(need_aug ? 2 * b : b, [&](std::size_t idx) {
    const std::size_t i = idx % b;
    if (idx < b)
      out_o[i] = mdl.forward_sample(pairs[i].xo.data, mode,
                                    want_grads ? &cache_o[i] : nullptr);
    else
      out_a[i] = mdl.forward_sample(pairs[i].xa.data, mode,
                                    want_grads ? &cache_a[i] : nullptr);
  });

  std::vector<model::SampleGradients> g_o(b), g_a(b);
  const std::size_t n_blocks = out_o[0].block_feats.size();
  if (want_grads && need_aug) {
    for (std::size_t i = 0; i < b; ++i) {
      g_o[i].dblock_feats.resize(n_blocks);
      g_a[i].dblock_feats.resize(n_blocks);
    }
  }

  const double t_len = mdl.config().input_t;

  // Supervised losses on the original branch.
  double supervised = 0.0;
  if (with_supervised) {
    for (int task = 0; task < 3; ++task) {
      VectorXd pred(b), truth(b), weight(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& l = batch[i]->labels;
        double p = 0, tr = 0, wt = 0;
        if (task == model::kTaskHr) {
          p = out_o[i].hr;
          if (l.has_hr) {
            tr = l.hr_bpm;
            wt = 1.0;
          } else if (batch[i]->has_pseudo_hr) {
            tr = batch[i]->pseudo_hr;
            wt = w.pseudo_weight;
          }
        } else if (task == model::kTaskRr) {
          p = out_o[i].rr;
          if (l.has_rr) {
            tr = l.rr_bpm;
            wt = 1.0;
          } else if (batch[i]->has_pseudo_rr) {
            tr = batch[i]->pseudo_rr;
            wt = w.pseudo_weight;
          }
        } else {
          p = out_o[i].spo2;
          if (l.has_spo2) {
            tr = l.spo2_pct;
            wt = 1.0;
          }
        }
        pred(i) = p;
        truth(i) = tr;
        weight(i) = wt;
      }
      VectorXd dpred;
      const double v =
          losses::l1_masked(pred, truth, weight, want_grads ? &dpred : nullptr);
      supervised += v;
      if (want_grads) {
        for (std::size_t i = 0; i < b; ++i) {
          if (task == model::kTaskHr) g_o[i].dhr += dpred(i);
          if (task == model::kTaskRr) g_o[i].drr += dpred(i);
          if (task == model::kTaskSpo2) g_o[i].dspo2 += dpred(i);
        }
      }
    }
    // BVP supervision (negative Pearson) over labeled rows.
    MatrixXd bvp_pred(b, static_cast<Eigen::Index>(t_len));
    MatrixXd bvp_true = MatrixXd::Zero(b, static_cast<Eigen::Index>(t_len));
    VectorXd bvp_w = VectorXd::Zero(b);
    for (std::size_t i = 0; i < b; ++i) {
      bvp_pred.row(i) = out_o[i].bvp.transpose();
      if (batch[i]->labels.has_bvp) {
        for (Eigen::Index t = 0; t < bvp_true.cols(); ++t)
          bvp_true(i, t) = batch[i]->labels.bvp[t];
        bvp_w(i) = 1.0;
      }
    }
    MatrixXd dbvp;
    const double v = losses::neg_pearson_batch(bvp_pred, bvp_true, bvp_w,
                                               want_grads ? &dbvp : nullptr);
    supervised += v;
    if (want_grads)
      for (std::size_t i = 0; i < b; ++i)
        if (bvp_w(i) > 0.0) {
          g_o[i].dbvp = dbvp.row(i).transpose();
        }
  }

  // Regularizers.
  double ssa_total = 0.0, sda_total = 0.0, lp = 0.0, fc = 0.0, pe = 0.0,
         tc = 0.0, tic = 0.0;
  if (with_regularizers) {
    const double reg_scale = ev.lambda;

    // Identity cross-entropy on the original branch.
    {
      MatrixXd logits(b, out_o[0].id_logits.size());
      for (std::size_t i = 0; i < b; ++i)
        logits.row(i) = out_o[i].id_logits.transpose();
      MatrixXd dlogits;
      lp = losses::cross_entropy(logits, id_targets,
                                 want_grads ? &dlogits : nullptr);
      if (want_grads)
        for (std::size_t i = 0; i < b; ++i)
          g_o[i].did_logits = reg_scale * w.p3 * dlogits.row(i).transpose();
    }

    // Frequency consistency across the pair.
    {
      for (int task = 0; task < 3; ++task) {
        VectorXd po(b), pa(b);
        for (std::size_t i = 0; i < b; ++i) {
          po(i) = task == model::kTaskHr
                      ? out_o[i].hr
                      : (task == model::kTaskRr ? out_o[i].rr : out_o[i].spo2);
          pa(i) = task == model::kTaskHr
                      ? out_a[i].hr
                      : (task == model::kTaskRr ? out_a[i].rr : out_a[i].spo2);
        }
        VectorXd dpo, dpa;
        fc += losses::fc_scalar_loss(po, pa, want_grads ? &dpo : nullptr,
                                     want_grads ? &dpa : nullptr);
        if (want_grads)
          for (std::size_t i = 0; i < b; ++i) {
            const double so = reg_scale * w.p4 * dpo(i);
            const double sa = reg_scale * w.p4 * dpa(i);
            if (task == model::kTaskHr) {
              g_o[i].dhr += so;
              g_a[i].dhr += sa;
            } else if (task == model::kTaskRr) {
              g_o[i].drr += so;
              g_a[i].drr += sa;
            } else {
              g_o[i].dspo2 += so;
              g_a[i].dspo2 += sa;
            }
          }
      }
      MatrixXd bo(b, static_cast<Eigen::Index>(t_len)),
          ba(b, static_cast<Eigen::Index>(t_len));
      for (std::size_t i = 0; i < b; ++i) {
        bo.row(i) = out_o[i].bvp.transpose();
        ba.row(i) = out_a[i].bvp.transpose();
      }
      MatrixXd dbo, dba;
      fc += losses::fc_bvp_loss(bo, ba, 30.0, want_grads ? &dbo : nullptr,
                                want_grads ? &dba : nullptr);
      if (want_grads)
        for (std::size_t i = 0; i < b; ++i) {
          if (g_o[i].dbvp.size() == 0) g_o[i].dbvp = VectorXd::Zero(bo.cols());
          if (g_a[i].dbvp.size() == 0) g_a[i].dbvp = VectorXd::Zero(bo.cols());
          g_o[i].dbvp += reg_scale * w.p4 * dbo.row(i).transpose();
          g_a[i].dbvp += reg_scale * w.p4 * dba.row(i).transpose();
        }

      // Time-domain term: consistency for MSSDG, inconsistency for TTPA.
      MatrixXd dto, dta;
      if (mode == gap::Mode::kMssdg) {
        tc = losses::tc_loss(bo, ba, ssm_window, want_grads ? &dto : nullptr,
                             want_grads ? &dta : nullptr);
        tic = 1.0 - tc;
      } else {
        tic = losses::tic_loss(bo, ba, ssm_window, want_grads ? &dto : nullptr,
                               want_grads ? &dta : nullptr);
        tc = 1.0 - tic;
      }
      if (want_grads) {
        const double pw = mode == gap::Mode::kMssdg ? w.p6 : w.p7;
        for (std::size_t i = 0; i < b; ++i) {
          g_o[i].dbvp += reg_scale * pw * dto.row(i).transpose();
          g_a[i].dbvp += reg_scale * pw * dta.row(i).transpose();
        }
      }
    }

    // Orthogonality penalty (MSSDG only; p5 sits in L_G).
    if (mode == gap::Mode::kMssdg) {
      std::vector<MatrixXd> z_tasks(model::kNumTasks);
      MatrixXd z_p(b, mdl.feature_dim());
      for (int task = 0; task < model::kNumTasks; ++task) {
        z_tasks[task].resize(b, mdl.feature_dim());
        for (std::size_t i = 0; i < b; ++i)
          z_tasks[task].row(i) = out_o[i].z_task[task].transpose();
      }
      for (std::size_t i = 0; i < b; ++i) z_p.row(i) = out_o[i].z_p.transpose();
      std::vector<MatrixXd> dzt;
      MatrixXd dzp;
      pe = losses::pe_loss(z_tasks, z_p, w.pi_floor,
                           want_grads ? &dzt : nullptr,
                           want_grads ? &dzp : nullptr, &ev.pe_raw);
      if (want_grads)
        for (std::size_t i = 0; i < b; ++i) {
          for (int task = 0; task < model::kNumTasks; ++task) {
            if (g_o[i].dz_task[task].size() == 0)
              g_o[i].dz_task[task] = VectorXd::Zero(mdl.feature_dim());
            g_o[i].dz_task[task] +=
                reg_scale * w.p5 * dzt[task].row(i).transpose();
          }
          if (g_o[i].dz_p.size() == 0)
            g_o[i].dz_p = VectorXd::Zero(mdl.feature_dim());
          g_o[i].dz_p += reg_scale * w.p5 * dzp.row(i).transpose();
        }
    }

    // Block alignment losses.
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
      std::vector<Tensor> fo(b), fa(b);
      for (std::size_t i = 0; i < b; ++i) {
        fo[i] = out_o[i].block_feats[blk];
        fa[i] = out_a[i].block_feats[blk];
      }
      auto fr = losses::flatten_block(fo, fa);
      MatrixXd dssa_o, dssa_a, dsda_o, dsda_a;
      ssa_total += losses::ssa_loss(fr.zo, fr.za,
                                    want_grads ? &dssa_o : nullptr,
                                    want_grads ? &dssa_a : nullptr);
      sda_total += losses::sda_loss(fr.zo, fr.za,
                                    want_grads ? &dsda_o : nullptr,
                                    want_grads ? &dsda_a : nullptr);
      if (want_grads) {
        MatrixXd dzo = reg_scale * (w.p1 * dssa_o + w.p2 * dsda_o);
        MatrixXd dza = reg_scale * (w.p1 * dssa_a + w.p2 * dsda_a);
        std::vector<Tensor> dfo, dfa;
        losses::flatten_block_backward(fr, dzo, dza, &dfo, &dfa);
        for (std::size_t i = 0; i < b; ++i) {
          g_o[i].dblock_feats[blk] = std::move(dfo[i]);
          g_a[i].dblock_feats[blk] = std::move(dfa[i]);
        }
      }
    }
  }

  ev.comps.ssa = ssa_total;
  ev.comps.sda = sda_total;
  ev.comps.lp = lp;
  ev.comps.fc = fc;
  if (mode == gap::Mode::kMssdg) {
    ev.comps.pe = pe;
    ev.comps.tc = tc;
    ev.comps.supervised = supervised;
  } else {
    ev.comps.tic = tic;
  }
  ev.composite =
      losses::composite(ev.comps, w, step, total_steps, mode, &ev.lambda);
  if (!std::isfinite(ev.composite)) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "step %lld: non-finite composite (ssa=%g sda=%g lp=%g fc=%g "
                  "pe=%g tc=%g tic=%g sup=%g)",
                  static_cast<long long>(step), ssa_total, sda_total, lp, fc,
                  pe, tc, tic, supervised);
    throw NumericError(buf);
  }

  // Backward, sample-sequential reduction for determinism.
  if (want_grads) {
    std::vector<model::ParamGrads> pg_o(b), pg_a(b);
    parallel_for(need_aug ? 2 * b : b, [&](std::size_t idx) {
      const std::size_t i = idx % b;
      if (idx < b) {
        pg_o[i] = mdl.zero_grads();
        mdl.backward_sample(cache_o[i], g_o[i], &pg_o[i]);
      } else {
        pg_a[i] = mdl.zero_grads();
        mdl.backward_sample(cache_a[i], g_a[i], &pg_a[i]);
      }
    });
    for (std::size_t i = 0; i < b; ++i) grads->add_scaled(pg_o[i], 1.0);
    if (need_aug)
      for (std::size_t i = 0; i < b; ++i) grads->add_scaled(pg_a[i], 1.0);
  }

  ev.out_o = std::move(out_o);
  return ev;
}

namespace {

double validation_mae(const model::GapModel& mdl,
                      const std::vector<const DatasetWindow*>& val) {
  if (val.empty()) return 0.0;
  std::vector<model::SampleOutput> outs(val.size());
  parallel_for(val.size(), [&](std::size_t i) {
    outs[i] = mdl.forward_sample(val[i]->input, gap::Mode::kMssdg, nullptr);
  });
  double mae[3] = {0, 0, 0};
  int n[3] = {0, 0, 0};
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto& l = val[i]->labels;
    if (l.has_hr) {
      mae[0] += std::abs(outs[i].hr - l.hr_bpm);
      ++n[0];
    }
    if (l.has_rr) {
      mae[1] += std::abs(outs[i].rr - l.rr_bpm);
      ++n[1];
    }
    if (l.has_spo2) {
      mae[2] += std::abs(outs[i].spo2 - l.spo2_pct);
      ++n[2];
    }
  }
  double total = 0.0;
  int tasks = 0;
  for (int t = 0; t < 3; ++t)
    if (n[t] > 0) {
      total += mae[t] / n[t];
      ++tasks;
    }
  return tasks > 0 ? total / tasks : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// MSSDG training

TrainResult train_mssdg(const std::string& dataset_root, const MssdgConfig& cfg,
                        const std::string& run_dir, stm1::FileAudit* audit) {
  if (cfg.source_domains.size() < 2)
    throw ValidationError("train_mssdg: need at least 2 source domains");
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);

  stm1::FileAudit local_audit;
  stm1::FileAudit* aud = audit ? audit : &local_audit;

  LoadedDataset ds = load_dataset(dataset_root, cfg.source_domains, aud);
  if (ds.windows.empty()) throw ValidationError("train_mssdg: empty dataset");

  // 9:1 split by clip so overlapping windows cannot straddle it.
  Rng rng(splitmix64(cfg.seed ^ 0x55d5ULL));
  std::vector<std::size_t> clip_order(ds.clip_maps.size());
  for (std::size_t i = 0; i < clip_order.size(); ++i) clip_order[i] = i;
  for (std::size_t i = clip_order.size(); i > 1; --i)
    std::swap(clip_order[i - 1],
              clip_order[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(cfg.val_fraction *
                                              static_cast<double>(
                                                  clip_order.size()))));
  std::set<std::size_t> val_clips(clip_order.begin(),
                                  clip_order.begin() + n_val);

  std::vector<const DatasetWindow*> train, val;
  for (const auto& w : ds.windows)
    (val_clips.count(w.clip_index) ? val : train).push_back(&w);
  if (train.empty() || val.empty())
    throw ValidationError("train_mssdg: split produced an empty partition");

  model::ModelConfig mc = cfg.model;
  mc.n_identities = static_cast<int>(ds.identity_vocab.size());
  model::GapModel mdl(mc, cfg.seed);

  std::vector<char> trainable(mdl.params().size(), 1);
  Optimizer opt(cfg.optimizer, cfg.lr, mdl.params());

  losses::LossWeights w = cfg.weights;

  TrainResult result;
  result.n_identities = mc.n_identities;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  result.best_checkpoint = run_dir + "/best.ckpt";
  result.final_checkpoint = run_dir + "/final.ckpt";

  Rng batch_rng(splitmix64(cfg.seed ^ 0xba7cULL));
  Rng aug_rng(splitmix64(cfg.seed ^ 0xa06aULL));

  for (std::int64_t step = 0; step < cfg.iterations; ++step) {
    std::vector<const DatasetWindow*> batch(cfg.batch_size);
    std::vector<const stmap::STMap*> maps(cfg.batch_size);
    std::vector<int> ids(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) {
      const auto pick = static_cast<std::size_t>(
          batch_rng.uniform_int(0, static_cast<std::int64_t>(train.size()) - 1));
      batch[i] = train[pick];
      maps[i] = &ds.clip_maps[batch[i]->clip_index];
      ids[i] = batch[i]->identity;
    }

    model::ParamGrads grads = mdl.zero_grads();
    StepEval ev = compute_step(mdl, batch, maps, gap::Mode::kMssdg, w, cfg.aug,
                           cfg.ssm_window, step, cfg.iterations,
                           /*with_supervised=*/true,
                           /*with_regularizers=*/cfg.regularizers, ids, aug_rng,
                           &grads);
    if (!cfg.regularizers) {
      // Supervised-only ablation: the regularizer slots read as exact zeros.
      ev.comps.ssa = ev.comps.sda = ev.comps.lp = ev.comps.fc = 0.0;
      ev.comps.pe = ev.comps.tc = 0.0;
      ev.composite = losses::composite(ev.comps, w, step, cfg.iterations,
                                       gap::Mode::kMssdg, &ev.lambda);
    }
    opt.step(mdl.params(), grads, trainable);

    StepLog log;
    log.step = step;
    log.lambda = ev.lambda;
    log.ssa = ev.comps.ssa.value_or(0.0);
    log.sda = ev.comps.sda.value_or(0.0);
    log.lp = ev.comps.lp.value_or(0.0);
    log.fc = ev.comps.fc.value_or(0.0);
    log.pe = ev.comps.pe.value_or(0.0);
    log.pe_raw = ev.pe_raw;
    log.tc = ev.comps.tc.value_or(0.0);
    log.supervised = ev.comps.supervised.value_or(0.0);
    log.composite = ev.composite;

    if ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.iterations) {
      const double vm = validation_mae(mdl, val);
      log.val_mae = vm;
      if (vm < result.best_val_mae) {
        result.best_val_mae = vm;
        mdl.save_checkpoint(result.best_checkpoint, step + 1);
      }
    }
    result.log.push_back(log);
  }

  mdl.save_checkpoint(result.final_checkpoint, cfg.iterations);
  if (!fs::exists(result.best_checkpoint))
    mdl.save_checkpoint(result.best_checkpoint, cfg.iterations);

  write_step_log_csv(run_dir + "/train_log.csv", result.log);
  {
    json audit_json = {{"accessed", aud->paths()}};
    std::ofstream f(run_dir + "/audit.json");
    f << audit_json.dump(2) << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// TTPA

TtpaSession::TtpaSession(const model::GapModel& base, std::string subject_id,
                         const TtpaConfig& cfg)
    : model_(std::make_unique<model::GapModel>(base)),
      subject_id_(std::move(subject_id)),
      cfg_(cfg),
      rng_(splitmix64(cfg.seed ^
                      fnv1a64(subject_id_.data(), subject_id_.size()))) {
  start_checksum_ = model_->checksum();
  const auto names = model_->trainable_parameters(gap::Mode::kTtpa, cfg_.freeze);
  std::set<std::string> keep(names.begin(), names.end());
  trainable_.assign(model_->params().size(), 0);
  for (std::size_t i = 0; i < model_->params().size(); ++i)
    trainable_[i] = keep.count(model_->params()[i].name) ? 1 : 0;
}

model::SampleOutput TtpaSession::adapt_and_predict(const DatasetWindow& win,
                                                   const stmap::STMap& clip_map) {
  if (seen_set_.count(win.sample_id))
    throw ValidationError("ttpa: repeated adaptation on sample " +
                          win.sample_id);
  seen_set_.insert(win.sample_id);
  seen_.push_back(win.sample_id);

  // One-pass step with the unknown-identity target N_p.
  const int unknown = model_->config().n_identities;
  std::vector<const DatasetWindow*> batch = {&win};
  std::vector<const stmap::STMap*> maps = {&clip_map};
  std::vector<int> ids = {unknown};

  model::ParamGrads grads = model_->zero_grads();
  compute_step(*model_, batch, maps, gap::Mode::kTtpa, cfg_.weights, cfg_.aug,
           cfg_.ssm_window, /*step=*/0, /*total=*/1,
           /*with_supervised=*/false, /*with_regularizers=*/true, ids, rng_,
           &grads);

  // Plain SGD, batch 1.
  for (std::size_t i = 0; i < model_->params().size(); ++i) {
    if (!trainable_[i]) continue;
    kernels::axpy(model_->params()[i].value.size(), -cfg_.lr, grads.g[i].data(),
                  model_->params()[i].value.data());
  }

  return model_->forward_sample(win.input, gap::Mode::kTtpa, nullptr);
}

TtpaResult adapt_ttpa(const std::string& dataset_root,
                      const std::string& base_checkpoint, const TtpaConfig& cfg,
                      const std::string& run_dir, stm1::FileAudit* audit) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  auto loaded = model::GapModel::load_checkpoint(base_checkpoint);

  LoadedDataset ds = load_dataset(dataset_root, {cfg.target_domain}, audit);
  if (ds.windows.empty()) throw ValidationError("adapt_ttpa: empty target domain");

  // Chronological per-subject streams.
  std::map<std::string, std::vector<const DatasetWindow*>> streams;
  for (const auto& w : ds.windows) streams[w.subject_id].push_back(&w);
  for (auto& [sid, stream] : streams)
    std::sort(stream.begin(), stream.end(),
              [](const DatasetWindow* a, const DatasetWindow* b) {
                if (a->clip_index != b->clip_index)
                  return a->clip_index < b->clip_index;
                return a->start < b->start;
              });

  TtpaResult result;
  for (const auto& [sid, stream] : streams) {
    TtpaSession session(*loaded.model, sid, cfg);
    TtpaSubjectLog log;
    log.subject_id = sid;
    log.start_checksum = session.start_checksum();

    for (const DatasetWindow* win : stream) {
      const auto out =
          session.adapt_and_predict(*win, ds.clip_maps[win->clip_index]);
      log.sample_order.push_back(win->sample_id);

      const auto& l = win->labels;
      auto push = [&](const std::string& task, double pred, double truth,
                      bool mask) {
        metrics::PredictionRow row;
        row.subject = sid;
        row.sample = win->sample_id;
        row.domain = win->domain_id;
        row.task = task;
        row.pred = pred;
        row.truth = truth;
        row.mask = mask;
        result.predictions.push_back(std::move(row));
      };
      push("hr", out.hr, l.hr_bpm, l.has_hr);
      push("rr", out.rr, l.rr_bpm, l.has_rr);
      push("spo2", out.spo2, l.spo2_pct, l.has_spo2);

      std::vector<double> pred_bvp(out.bvp.data(),
                                   out.bvp.data() + out.bvp.size());
      result.bvp_waveforms[win->sample_id] = {
          std::move(pred_bvp), l.has_bvp ? l.bvp : std::vector<double>{}};
    }
    result.logs.push_back(std::move(log));
  }

  metrics::write_predictions_csv(run_dir + "/predictions_adapted.csv",
                                 result.predictions);
  {
    json j = json::array();
    for (const auto& log : result.logs)
      j.push_back({{"subject", log.subject_id},
                   {"start_checksum", log.start_checksum},
                   {"samples", log.sample_order}});
    std::ofstream f(run_dir + "/adaptation_log.json");
    f << j.dump(2) << "\n";
  }
  return result;
}

EvalOutput evaluate_model(const model::GapModel& mdl, const LoadedDataset& ds,
                          gap::Mode mode) {
  EvalOutput out;
  std::vector<model::SampleOutput> outs(ds.windows.size());
  parallel_for(ds.windows.size(), [&](std::size_t i) {
    outs[i] = mdl.forward_sample(ds.windows[i].input, mode, nullptr);
  });
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    const auto& w = ds.windows[i];
    const auto& l = w.labels;
    auto push = [&](const std::string& task, double pred, double truth,
                    bool mask) {
      metrics::PredictionRow row;
      row.subject = w.subject_id;
      row.sample = w.sample_id;
      row.domain = w.domain_id;
      row.task = task;
      row.pred = pred;
      row.truth = truth;
      row.mask = mask;
      out.predictions.push_back(std::move(row));
    };
    push("hr", outs[i].hr, l.hr_bpm, l.has_hr);
    push("rr", outs[i].rr, l.rr_bpm, l.has_rr);
    push("spo2", outs[i].spo2, l.spo2_pct, l.has_spo2);
    std::vector<double> pred_bvp(outs[i].bvp.data(),
                                 outs[i].bvp.data() + outs[i].bvp.size());
    out.bvp_waveforms[w.sample_id] = {
        std::move(pred_bvp), l.has_bvp ? l.bvp : std::vector<double>{}};
  }
  return out;
}

void write_step_log_csv(const std::string& path,
                        const std::vector<StepLog>& log) {
  std::ofstream f(path);
  if (!f) throw ValidationError("write_step_log_csv: cannot open " + path);
  f << "step,lambda,ssa,sda,lp,fc,pe,pe_raw,tc,supervised,composite,val_mae\n";
  char buf[400];
  for (const auto& l : log) {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,",
                  static_cast<long long>(l.step), l.lambda, l.ssa, l.sda, l.lp,
                  l.fc, l.pe, l.pe_raw, l.tc, l.supervised, l.composite);
    f << buf;
    if (l.val_mae >= 0.0) {
      std::snprintf(buf, sizeof(buf), "%.9g", l.val_mae);
      f << buf;
    }
    f << '\n';
  }
}

}  // namespace gap::protocols

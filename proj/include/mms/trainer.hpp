// SPDX-License-Identifier: Apache-2.0
//
// Deterministic training loop for the three-branch masking objective:
// AdamW with decoupled weight decay, linear warm-up into cosine decay,
// per-sample mask seeds, CSV metrics and resumable binary state.
//
// Bitwise reproducibility is the design constraint throughout: mask seeds
// derive from (seed, step, sample), epoch shuffles from (seed, epoch), the
// batch reduction order is fixed, and metrics hold no wall-clock values
// (timings go to a separate sidecar file).

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mms/autodiff.hpp"
#include "mms/checkpoint.hpp"
#include "mms/errors.hpp"
#include "mms/masking.hpp"
#include "mms/model.hpp"
#include "mms/patches.hpp"
#include "mms/rng.hpp"
#include "mms/tensor.hpp"

namespace mms {

struct TrainConfig {
  std::string preset = "tiny-desk";
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  // Desk-scale defaults; paper_profile() switches to the full-scale values.
  long long warmup_steps = 200;
  long long total_steps = 0;  // derived from epochs when epochs > 0
  int epochs = 0;
  int batch_size = 32;
  std::uint64_t seed = 0;
  MultiMaskConfig masks;
  long long log_every = 1;
  long long checkpoint_every = 0;  // 0 = final state only
  std::string out_dir = ".";

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (warmup_steps < 0) throw ConfigError("train: warmup_steps < 0");
    if (total_steps > 0 && warmup_steps > total_steps)
      throw ConfigError("train: warmup_steps exceeds total_steps");
    if (epochs < 0) throw ConfigError("train: epochs < 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train: adam_eps must be > 0");
    if (base_lr < 0) throw ConfigError("train: base_lr < 0");
    if (log_every < 1) throw ConfigError("train: log_every must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every < 0");
  }
};

// Full-scale protocol: batch 512, 5000 warm-up steps, 3 epochs.
inline TrainConfig paper_profile() {
  TrainConfig cfg;
  cfg.preset = "vit-tiny";
  cfg.warmup_steps = 5000;
  cfg.batch_size = 512;
  cfg.epochs = 3;
  return cfg;
}

// Linear ramp 0 -> base_lr over warmup_steps, then cosine decay to 0 at
// total_steps. Continuous at the boundary; lr_at(warmup_steps) == base_lr
// exactly.
inline double lr_at(long long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw RangeError("lr_at: step " + std::to_string(step) +
                     " outside [0, " + std::to_string(cfg.total_steps) + "]");
  if (step <= cfg.warmup_steps)
    return cfg.warmup_steps == 0
               ? cfg.base_lr
               : cfg.base_lr * double(step) / double(cfg.warmup_steps);
  const double t = double(step - cfg.warmup_steps) /
                   double(cfg.total_steps - cfg.warmup_steps);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

struct OptState {
  long long step = 0;  // completed optimizer updates
  // First/second moments keyed like the ParamStore; allocated on first use.
  std::unordered_map<std::string, Tensor> m;
  std::unordered_map<std::string, Tensor> v;
};

// One AdamW update, in place. Decoupled decay multiplies decayed tensors by
// (1 - lr*wd) before the moment step; biases, norm affines, cls/mask tokens
// and positional tables are excluded (weight_decay_applies).
inline void adamw_step(ParamStore& store, const Gradients& grads,
                       OptState& opt, double lr, const TrainConfig& cfg) {
  const long long t = opt.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  std::vector<double> zero;
  for (const std::string& name : store.names()) {
    Tensor& p = store.at(name);
    const std::vector<double>* g;
    if (grads.contains(p)) {
      g = &grads.at(p);
    } else {
      zero.assign(p.size(), 0.0);
      g = &zero;
    }
    if (g->size() != p.size())
      throw ShapeError("adamw_step: gradient size mismatch for '" + name +
                       "'");
    auto mit = opt.m.find(name);
    if (mit == opt.m.end())
      mit = opt.m.emplace(name, Tensor::zeros(p.shape())).first;
    auto vit = opt.v.find(name);
    if (vit == opt.v.end())
      vit = opt.v.emplace(name, Tensor::zeros(p.shape())).first;
    if (!mit->second.same_shape(p) || !vit->second.same_shape(p))
      throw ShapeError("adamw_step: moment shape mismatch for '" + name +
                       "'");
    double* pd = p.mutable_data();
    double* md = mit->second.mutable_data();
    double* vd = vit->second.mutable_data();
    const double decay =
        weight_decay_applies(name) ? 1.0 - lr * cfg.weight_decay : 1.0;
    const double* gd = g->data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] = decay * pd[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  opt.step = t;
}

namespace detail {

// Mask generation with the budget-failure policy: a partial mask covering
// at least 80% of the requested budget is used as-is; anything smaller
// triggers a reseeded retry, and after kMaskRetries failures the last
// error propagates.
inline constexpr int kMaskRetries = 8;

template <typename Gen>
inline MaskSet robust_mask(const Gen& gen, double ratio, int num_patches,
                           std::uint64_t seed) {
  const double floor_count = 0.8 * ratio * double(num_patches);
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t s =
        attempt == 0 ? seed : sub_seed(seed, 1000 + std::uint64_t(attempt));
    try {
      return gen(s);
    } catch (const MaskBudgetError& e) {
      if (double(e.partial.count()) >= floor_count) return e.partial;
      if (attempt + 1 >= kMaskRetries) throw;
    }
  }
}

inline MaskTriple robust_triple(int grid_h, int grid_w,
                                const MultiMaskConfig& cfg,
                                std::uint64_t seed) {
  const int n = grid_h * grid_w;
  MaskTriple t;
  t.random = random_mask(grid_h, grid_w, cfg.random_ratio,
                         branch_seed(seed, MaskStrategy::random));
  t.block = robust_mask(
      [&](std::uint64_t s) { return block_mask(grid_h, grid_w, cfg.block, s); },
      cfg.block.ratio, n, branch_seed(seed, MaskStrategy::block));
  t.span = robust_mask(
      [&](std::uint64_t s) { return span_mask(grid_h, grid_w, cfg.span, s); },
      cfg.span.ratio, n, branch_seed(seed, MaskStrategy::span));
  return t;
}

}  // namespace detail

struct StepStats {
  long long step = 0;
  double lr = 0;
  double loss_random = 0;
  double loss_block = 0;
  double loss_span = 0;
  double loss_total = 0;
};

// One optimizer step on a batch. Masks are regenerated per (seed, step,
// sample), losses averaged over the batch in sample order, and the learning
// rate is sampled at step+1 so the first update is not the zero ramp start.
// mask_override substitutes fixed triples (one per sample) for the derived
// ones; the training loop never uses it.
inline StepStats train_step(MmsParams& m, OptState& opt,
                            const std::vector<PatchGrid>& batch,
                            long long step, const TrainConfig& cfg,
                            const std::vector<MaskTriple>* mask_override =
                                nullptr) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  if (cfg.total_steps <= 0)
    throw ConfigError("train_step: total_steps must be set");
  if (mask_override && mask_override->size() != batch.size())
    throw ConfigError("train_step: mask_override size mismatch");
  Tape tape;
  watch_params(m, tape);
  Tensor lr_acc, lb_acc, ls_acc;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const PatchGrid& g = batch[s];
    const MaskTriple triple =
        mask_override ? (*mask_override)[s]
                      : detail::robust_triple(
                            g.grid_h, g.grid_w, cfg.masks,
                            sub_seed(cfg.seed, kStreamMask,
                                     std::uint64_t(step), std::uint64_t(s)));
    MmsForwardResult r = mms_forward(m, g, triple, &tape);
    lr_acc = s == 0 ? r.loss_random : add(lr_acc, r.loss_random, &tape);
    lb_acc = s == 0 ? r.loss_block : add(lb_acc, r.loss_block, &tape);
    ls_acc = s == 0 ? r.loss_span : add(ls_acc, r.loss_span, &tape);
  }
  const double inv = 1.0 / double(batch.size());
  lr_acc = scale(lr_acc, inv, &tape);
  lb_acc = scale(lb_acc, inv, &tape);
  ls_acc = scale(ls_acc, inv, &tape);
  Tensor total = add(add(lr_acc, lb_acc, &tape), ls_acc, &tape);

  Gradients grads = tape.backward(total);
  const long long lr_step = std::min(step + 1, cfg.total_steps);
  StepStats st;
  st.step = step;
  st.lr = lr_at(lr_step, cfg);
  st.loss_random = lr_acc.at(0);
  st.loss_block = lb_acc.at(0);
  st.loss_span = ls_acc.at(0);
  st.loss_total = total.at(0);
  adamw_step(m.store, grads, opt, st.lr, cfg);
  return st;
}

inline void save_train_state(const MmsParams& m, const OptState& opt,
                             const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> entries;
  ModelPreset pr = m.preset;
  const std::vector<int*> fields = detail::preset_fields(pr);
  for (std::size_t i = 0; i < fields.size(); ++i)
    entries.emplace_back(detail::kMetaKeys[i],
                         Tensor::scalar(double(*fields[i])));
  for (const std::string& name : m.store.names())
    entries.emplace_back(name, m.store.at(name));
  entries.emplace_back("opt.step", Tensor::scalar(double(opt.step)));
  for (const std::string& name : m.store.names()) {
    const auto mit = opt.m.find(name);
    const auto vit = opt.v.find(name);
    if (mit == opt.m.end() || vit == opt.v.end())
      throw ContractViolation("save_train_state: missing moments for '" +
                              name + "'");
    entries.emplace_back("opt.m." + name, mit->second);
    entries.emplace_back("opt.v." + name, vit->second);
  }
  write_tensor_table(path, entries);
}

inline std::pair<MmsParams, OptState> load_train_state(
    const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> model_entries;
  OptState opt;
  bool saw_step = false;
  for (auto& [name, t] : read_tensor_table(path)) {
    if (name == "opt.step") {
      opt.step = (long long)(t.at(0));
      saw_step = true;
    } else if (name.rfind("opt.m.", 0) == 0) {
      opt.m.emplace(name.substr(6), std::move(t));
    } else if (name.rfind("opt.v.", 0) == 0) {
      opt.v.emplace(name.substr(6), std::move(t));
    } else {
      model_entries.emplace_back(std::move(name), std::move(t));
    }
  }
  if (!saw_step)
    throw ConfigError("train state '" + path + "' lacks opt.step");
  MmsParams m = params_from_entries(model_entries);
  for (const std::string& name : m.store.names())
    if (!opt.m.count(name) || !opt.v.count(name))
      throw ConfigError("train state '" + path + "' lacks moments for '" +
                        name + "'");
  return {std::move(m), std::move(opt)};
}

struct TrainLog {
  std::vector<StepStats> steps;  // logged rows, in order
  long long total_steps = 0;
  std::string metrics_path;
  std::string timing_path;
  std::string state_path;  // final training state
  std::string model_path;  // final params-only checkpoint
};

// Full training loop. Epochs shuffle the dataset deterministically from
// (seed, epoch); batches are consecutive chunks with a short final batch.
// Resuming from a saved state replays the step counter, so the continued
// loss trace is bitwise identical to an uninterrupted run.
inline TrainLog train_loop(TrainConfig cfg,
                           const std::vector<PatchGrid>& dataset,
                           const std::string& resume_path = "") {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train_loop: empty dataset");
  const long long n = (long long)(dataset.size());
  const long long spe = (n + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.epochs > 0) cfg.total_steps = cfg.epochs * spe;
  if (cfg.total_steps <= 0)
    throw ConfigError("train_loop: need epochs > 0 or total_steps > 0");
  if (cfg.warmup_steps > cfg.total_steps)
    throw ConfigError("train: warmup_steps exceeds total_steps");

  MmsParams m;
  OptState opt;
  if (resume_path.empty()) {
    m = init_params(cfg.preset, cfg.seed);
  } else {
    auto state = load_train_state(resume_path);
    m = std::move(state.first);
    opt = std::move(state.second);
    if (m.preset.name != cfg.preset)
      throw ConfigError("train_loop: state preset '" + m.preset.name +
                        "' does not match config preset '" + cfg.preset +
                        "'");
  }

  TrainLog log;
  log.total_steps = cfg.total_steps;
  log.metrics_path = cfg.out_dir + "/metrics.csv";
  log.timing_path = cfg.out_dir + "/timing.csv";
  log.state_path = cfg.out_dir + "/state-final.mms";
  log.model_path = cfg.out_dir + "/model-final.mms";

  std::ofstream metrics(log.metrics_path);
  if (!metrics)
    throw IoError("train_loop: cannot write '" + log.metrics_path + "'");
  metrics << "step,lr,loss_random,loss_block,loss_span,loss_total\n";
  std::ofstream timing(log.timing_path);
  if (!timing)
    throw IoError("train_loop: cannot write '" + log.timing_path + "'");
  timing << "step,seconds\n";

  std::vector<int> order(dataset.size());
  long long shuffled_epoch = -1;
  char row[256];
  for (long long step = opt.step; step < cfg.total_steps; ++step) {
    const long long epoch = step / spe;
    const long long pos = step % spe;
    if (epoch != shuffled_epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
      Rng rng(sub_seed(cfg.seed, kStreamShuffle, std::uint64_t(epoch)));
      rng.shuffle(order);
      shuffled_epoch = epoch;
    }
    std::vector<PatchGrid> batch;
    const long long lo = pos * cfg.batch_size;
    const long long hi = std::min(n, lo + cfg.batch_size);
    batch.reserve(std::size_t(hi - lo));
    for (long long i = lo; i < hi; ++i)
      batch.push_back(dataset[std::size_t(order[std::size_t(i)])]);

    const auto t0 = std::chrono::steady_clock::now();
    StepStats st = train_step(m, opt, batch, step, cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    if (step % cfg.log_every == 0 || step == cfg.total_steps - 1) {
      std::snprintf(row, sizeof(row),
                    "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", st.step, st.lr,
                    st.loss_random, st.loss_block, st.loss_span,
                    st.loss_total);
      metrics << row;
      timing << st.step << "," << secs << "\n";
      log.steps.push_back(st);
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.total_steps) {
      save_train_state(m, opt,
                       cfg.out_dir + "/state-" + std::to_string(step + 1) +
                           ".mms");
    }
  }
  metrics.flush();
  timing.flush();
  if (!metrics || !timing)
    throw IoError("train_loop: flushing logs under '" + cfg.out_dir +
                  "' failed");
  save_train_state(m, opt, log.state_path);
  save_checkpoint(m, log.model_path);
  return log;
}

}  // namespace mms

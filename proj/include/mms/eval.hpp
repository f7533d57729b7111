// SPDX-License-Identifier: Apache-2.0
//
// Evaluation harness: masked-region PSNR over frozen eval sets, character
// coverage statistics, and a frozen-encoder linear probe. Eval masks are
// built once from a seed and persisted so every checkpoint is scored on
// byte-identical inputs; reports carry the checkpoint fingerprint and the
// seed so each number stays traceable.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mms/checkpoint.hpp"
#include "mms/masking.hpp"
#include "mms/model.hpp"
#include "mms/patches.hpp"
#include "mms/textsynth.hpp"
#include "mms/trainer.hpp"

namespace mms {

// 10*log10(peak^2 / MSE) over all pixels and channels; identical images
// report +inf as the zero-MSE sentinel.
inline double psnr(const ImageBuf& a, const ImageBuf& b, double peak = 1.0) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw GeometryError("psnr: image dims differ");
  if (a.data.empty()) throw GeometryError("psnr: empty image");
  if (!(peak > 0)) throw RangeError("psnr: peak must be positive");
  double se = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / double(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Visible patches come from the original bitwise; masked patches take the
// model's normalized-space predictions mapped back through the original's
// per-patch statistics and clipped to [0,1].
inline ImageBuf compose_reconstruction(const PatchGrid& original,
                                       const Tensor& recon,
                                       const MaskSet& mask) {
  if (!original.consistent())
    throw GeometryError("compose_reconstruction: bad grid");
  const int n = original.num_patches();
  const int pd = original.patch_dim();
  if (recon.rank() != 2 || recon.dim(0) != n || recon.dim(1) != pd)
    throw GeometryError("compose_reconstruction: recon " + recon.shape_str() +
                        " does not match the grid");
  if (mask.grid_h != original.grid_h || mask.grid_w != original.grid_w)
    throw GeometryError("compose_reconstruction: mask grid mismatch");

  const PatchGrid stats = normalize_targets(original);
  PatchGrid composed = original;
  double* out = composed.patches.mutable_data();
  const double* pr = recon.data();
  for (int k : mask.masked) {
    const double mean = stats.per_patch_mean.at(k);
    const double sd = stats.per_patch_std.at(k);
    for (int i = 0; i < pd; ++i)
      out[std::size_t(k) * pd + i] =
          std::clamp(pr[std::size_t(k) * pd + i] * sd + mean, 0.0, 1.0);
  }
  return depatchify(composed);
}

// ---------------------------------------------------------------------------
// Frozen eval sets

struct EvalSet {
  std::string name;
  MaskStrategy strategy = MaskStrategy::random;
  double ratio = 0.0;
  std::vector<MaskSet> masks;  // one per image
};

// One fixed mask per (image, strategy): random 75%, block 50%, span 50%.
inline std::array<EvalSet, 3> build_eval_sets(int n_images, int grid_h,
                                              int grid_w,
                                              std::uint64_t seed) {
  if (n_images < 1)
    throw ConfigError("build_eval_sets: need at least one image");
  std::array<EvalSet, 3> sets;
  sets[0] = EvalSet{"random75", MaskStrategy::random, 0.75, {}};
  sets[1] = EvalSet{"block50", MaskStrategy::block, 0.50, {}};
  sets[2] = EvalSet{"span50", MaskStrategy::span, 0.50, {}};
  BlockConfig bc;
  bc.ratio = 0.50;
  SpanConfig sc;
  sc.ratio = 0.50;
  for (int i = 0; i < n_images; ++i) {
    const std::uint64_t k = std::uint64_t(i);
    sets[0].masks.push_back(random_mask(
        grid_h, grid_w, 0.75, sub_seed(seed, kStreamEval, kMaskTagRandom, k)));
    sets[1].masks.push_back(block_mask(
        grid_h, grid_w, bc, sub_seed(seed, kStreamEval, kMaskTagBlock, k)));
    sets[2].masks.push_back(span_mask(
        grid_h, grid_w, sc, sub_seed(seed, kStreamEval, kMaskTagSpan, k)));
  }
  return sets;
}

inline void save_eval_sets(const std::array<EvalSet, 3>& sets,
                           const std::string& path) {
  nlohmann::json j;
  j["sets"] = nlohmann::json::array();
  for (const EvalSet& s : sets) {
    nlohmann::json js;
    js["name"] = s.name;
    js["strategy"] = to_string(s.strategy);
    js["ratio"] = s.ratio;
    if (!s.masks.empty()) {
      js["grid_h"] = s.masks[0].grid_h;
      js["grid_w"] = s.masks[0].grid_w;
    }
    nlohmann::json masks = nlohmann::json::array();
    for (const MaskSet& m : s.masks) masks.push_back(m.masked);
    js["masks"] = masks;
    j["sets"].push_back(js);
  }
  std::ofstream out(path);
  if (!out) throw IoError("save_eval_sets: cannot write '" + path + "'");
  out << j.dump(2) << "\n";
  out.flush();
  if (!out) throw IoError("save_eval_sets: writing '" + path + "' failed");
}

inline std::array<EvalSet, 3> load_eval_sets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_eval_sets: cannot open '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("sets") || j["sets"].size() != 3)
    throw IoError("load_eval_sets: '" + path + "' is not an eval-set file");
  std::array<EvalSet, 3> sets;
  for (std::size_t si = 0; si < 3; ++si) {
    const nlohmann::json& js = j["sets"][si];
    EvalSet s;
    s.name = js.at("name").get<std::string>();
    s.strategy = mask_strategy_from(js.at("strategy").get<std::string>());
    s.ratio = js.at("ratio").get<double>();
    const int gh = js.value("grid_h", 0);
    const int gw = js.value("grid_w", 0);
    for (const auto& jm : js.at("masks")) {
      MaskSet m;
      m.grid_h = gh;
      m.grid_w = gw;
      m.strategy = s.strategy;
      m.target_ratio = s.ratio;
      m.masked = jm.get<std::vector<int>>();
      if (!std::is_sorted(m.masked.begin(), m.masked.end()) ||
          std::adjacent_find(m.masked.begin(), m.masked.end()) !=
              m.masked.end() ||
          (!m.masked.empty() &&
           (m.masked.front() < 0 || m.masked.back() >= gh * gw)))
        throw IoError("load_eval_sets: malformed mask in '" + path + "'");
      s.masks.push_back(std::move(m));
    }
    sets[si] = std::move(s);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Character coverage

struct CharCoverage {
  double fraction = 0.0;  // of the char's box pixels under masked patches
  bool fully_masked = false;
};

inline std::vector<CharCoverage> char_coverage(const MaskSet& mask,
                                               const SyntheticSample& sample,
                                               int patch_size) {
  if (patch_size < 1) throw GeometryError("char_coverage: bad patch size");
  if (mask.grid_h * patch_size != sample.image.height ||
      mask.grid_w * patch_size != sample.image.width)
    throw GeometryError("char_coverage: mask grid does not tile the image");
  std::vector<CharCoverage> out;
  out.reserve(sample.char_boxes.size());
  for (const CharBox& b : sample.char_boxes) {
    const long total = long(b.x1 - b.x0) * (b.y1 - b.y0);
    long covered = 0;
    for (int y = b.y0; y < b.y1; ++y) {
      const int pr = y / patch_size;
      for (int x = b.x0; x < b.x1; ++x)
        if (mask.contains(pr * mask.grid_w + x / patch_size)) ++covered;
    }
    CharCoverage cc;
    cc.fraction = total > 0 ? double(covered) / double(total) : 0.0;
    cc.fully_masked = covered == total && total > 0;
    out.push_back(cc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe on frozen encoder features

// Patch-column class targets: the character whose box overlaps the
// column's pixel range the widest (ties to the leftmost), blank when no
// box touches it. Classes: 36 charset entries + blank.
inline constexpr int kBlankClass = kCharsetSize;

inline std::vector<int> label_columns(const SyntheticSample& s,
                                      int patch_size, int grid_w) {
  std::vector<int> labels(std::size_t(grid_w), kBlankClass);
  for (int c = 0; c < grid_w; ++c) {
    const int lo = c * patch_size, hi = lo + patch_size;
    int best = -1, best_ov = 0;
    for (std::size_t j = 0; j < s.char_boxes.size(); ++j) {
      const CharBox& b = s.char_boxes[j];
      const int ov = std::min(b.x1, hi) - std::max(b.x0, lo);
      if (ov > best_ov) {
        best_ov = ov;
        best = int(j);
      }
    }
    if (best >= 0)
      labels[std::size_t(c)] =
          detail::charset_index(s.word[std::size_t(best)]);
  }
  return labels;
}

struct ProbeConfig {
  int epochs = 30;
  int batch_size = 256;  // samples per update (rows = batch * grid_w)
  double lr = 1e-2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1)
      throw ConfigError("probe: epochs and batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("probe: lr must be positive");
    if (weight_decay < 0) throw ConfigError("probe: negative weight decay");
  }
};

struct ProbeReport {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> per_column_accuracy;  // test set, one per grid column
  std::uint64_t encoder_hash_before = 0;
  std::uint64_t encoder_hash_after = 0;
  int classes = kBlankClass + 1;
};

namespace detail {

// Column-pooled encoder features from a full (unmasked) forward: column c
// is the mean of its grid_h patch tokens. dst is [grid_w, d] row-major.
inline void pooled_features(const MmsParams& m, const SyntheticSample& s,
                            double* dst) {
  const ModelPreset& pr = m.preset;
  const PatchGrid grid = patchify(s.image, pr.patch_size);
  MaskSet none;
  none.grid_h = grid.grid_h;
  none.grid_w = grid.grid_w;
  const EncodeResult enc = encode_visible(m, grid, none);
  const double* f = enc.features.data();
  const int d = pr.d_model, gh = grid.grid_h, gw = grid.grid_w;
  std::fill(dst, dst + std::size_t(gw) * d, 0.0);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      const double* tok = f + std::size_t(1 + r * gw + c) * d;
      double* row = dst + std::size_t(c) * d;
      for (int j = 0; j < d; ++j) row[j] += tok[j];
    }
  for (std::size_t i = 0; i < std::size_t(gw) * d; ++i) dst[i] /= gh;
}

struct ProbeData {
  std::vector<double> x;  // [n * grid_w, d]
  std::vector<int> y;     // [n * grid_w]
  int rows = 0;
};

inline ProbeData probe_features(const MmsParams& m,
                                const std::vector<SyntheticSample>& samples) {
  const int gw = m.preset.grid_w(), d = m.preset.d_model;
  ProbeData out;
  out.rows = int(samples.size()) * gw;
  out.x.resize(std::size_t(out.rows) * d);
  out.y.reserve(std::size_t(out.rows));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    pooled_features(m, samples[i], out.x.data() + i * std::size_t(gw) * d);
    const std::vector<int> lab = label_columns(samples[i], m.preset.patch_size, gw);
    out.y.insert(out.y.end(), lab.begin(), lab.end());
  }
  return out;
}

inline int argmax_row(const double* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace detail

// Train a linear head on frozen column-pooled encoder features; the
// encoder is never watched on the head's tape, and the contract is
// enforced: any gradient outside the head, or any change to the encoder
// fingerprint, raises ContractViolation.
inline ProbeReport probe_train_eval(const MmsParams& m,
                                    const std::vector<SyntheticSample>& train,
                                    const std::vector<SyntheticSample>& test,
                                    const ProbeConfig& pcfg) {
  pcfg.validate();
  if (train.empty() || test.empty())
    throw ConfigError("probe: empty train or test set");

  ProbeReport rep;
  rep.encoder_hash_before = hash_params(m.store);

  const int gw = m.preset.grid_w(), d = m.preset.d_model;
  const int classes = kBlankClass + 1;
  const detail::ProbeData tr = detail::probe_features(m, train);
  const detail::ProbeData te = detail::probe_features(m, test);

  ParamStore head;
  head.add("head.w", Tensor::trunc_gaussian({d, classes}, 0.0, 0.02,
                                            sub_seed(pcfg.seed, kStreamInit)));
  head.add("head.b", Tensor::zeros({classes}));

  TrainConfig tc;
  tc.base_lr = pcfg.lr;
  tc.weight_decay = pcfg.weight_decay;
  OptState opt;

  const int n_train = int(train.size());
  std::vector<int> order(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[std::size_t(i)] = i;

  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    Rng shuffle_rng(sub_seed(pcfg.seed, kStreamShuffle, std::uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    for (int b0 = 0; b0 < n_train; b0 += pcfg.batch_size) {
      const int bs = std::min(pcfg.batch_size, n_train - b0);
      const int rows = bs * gw;
      std::vector<double> xb(std::size_t(rows) * std::size_t(d));
      std::vector<int> yb(static_cast<std::size_t>(rows));
      for (int i = 0; i < bs; ++i) {
        const std::size_t src = std::size_t(order[std::size_t(b0 + i)]) * gw;
        std::copy_n(tr.x.data() + src * d, std::size_t(gw) * d,
                    xb.data() + std::size_t(i) * gw * d);
        std::copy_n(tr.y.data() + src, gw,
                    yb.data() + std::size_t(i) * gw);
      }

      Tape tape;
      for (const std::string& name : head.names())
        head.at(name) = tape.watch(head.at(name));
      const Tensor logits =
          add_row_bias(matmul(Tensor({rows, d}, std::move(xb)),
                              head.at("head.w"), &tape),
                       head.at("head.b"), &tape);
      const Tensor loss = softmax_xent_rows(logits, yb, &tape);
      const Gradients grads = tape.backward(loss);

      if (grads.size() != head.size())
        throw ContractViolation("probe: gradient outside the linear head");
      for (const std::string& name : head.names())
        if (!grads.contains(head.at(name)))
          throw ContractViolation("probe: missing head gradient");

      adamw_step(head, grads, opt, pcfg.lr, tc);
    }
  }

  const Tensor& w = head.at("head.w");
  const Tensor& bias = head.at("head.b");
  auto score = [&](const detail::ProbeData& data,
                   std::vector<double>* per_col) {
    std::vector<double> col_hit(std::size_t(gw), 0.0);
    long hits = 0;
    std::vector<double> logits(static_cast<std::size_t>(classes));
    for (int r = 0; r < data.rows; ++r) {
      const double* x = data.x.data() + std::size_t(r) * d;
      for (int j = 0; j < classes; ++j) {
        double z = bias.at(j);
        for (int k = 0; k < d; ++k) z += x[k] * w.at(k * classes + j);
        logits[std::size_t(j)] = z;
      }
      if (detail::argmax_row(logits.data(), classes) == data.y[std::size_t(r)]) {
        ++hits;
        col_hit[std::size_t(r % gw)] += 1.0;
      }
    }
    if (per_col) {
      const double per = double(data.rows) / gw;
      for (int c = 0; c < gw; ++c)
        (*per_col).push_back(col_hit[std::size_t(c)] / per);
    }
    return double(hits) / double(data.rows);
  };
  rep.train_accuracy = score(tr, nullptr);
  rep.test_accuracy = score(te, &rep.per_column_accuracy);

  rep.encoder_hash_after = hash_params(m.store);
  if (rep.encoder_hash_after != rep.encoder_hash_before)
    throw ContractViolation("probe: encoder parameters changed");
  return rep;
}

// ---------------------------------------------------------------------------
// Whole-checkpoint report

struct EvalReport {
  std::string preset;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_hash = 0;
  std::vector<std::string> set_names;
  std::map<std::string, double> psnr_mean;  // +inf possible on exact sets
  std::map<std::string, std::array<double, 10>> coverage_hist;
  std::map<std::string, double> fully_masked_fraction;
  std::map<std::string, double> probe_accuracy;  // optional: train/test

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["preset"] = preset;
    j["seed"] = seed;
    j["checkpoint_hash"] = checkpoint_hash;
    j["set_names"] = set_names;
    for (const auto& [k, v] : psnr_mean) j["psnr_mean"][k] = v;
    for (const auto& [k, v] : coverage_hist) j["coverage_hist"][k] = v;
    for (const auto& [k, v] : fully_masked_fraction)
      j["fully_masked_fraction"][k] = v;
    for (const auto& [k, v] : probe_accuracy) j["probe_accuracy"][k] = v;
    return j;
  }
};

// Score one checkpoint on frozen eval sets: per-set mean of per-image
// PSNR between the original and the composed reconstruction, plus
// character-coverage statistics of the masks themselves.
inline EvalReport evaluate_checkpoint(const MmsParams& m,
                                      const std::vector<SyntheticSample>& samples,
                                      const std::array<EvalSet, 3>& sets,
                                      std::uint64_t seed) {
  if (samples.empty()) throw ConfigError("evaluate_checkpoint: no samples");
  EvalReport rep;
  rep.preset = m.preset.name;
  rep.seed = seed;
  rep.checkpoint_hash = hash_params(m.store);
  for (const EvalSet& set : sets) {
    if (set.masks.size() != samples.size())
      throw ConfigError("evaluate_checkpoint: set '" + set.name + "' has " +
                        std::to_string(set.masks.size()) + " masks for " +
                        std::to_string(samples.size()) + " samples");
    rep.set_names.push_back(set.name);
    double psum = 0;
    std::array<double, 10> hist{};
    long chars = 0, full = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const PatchGrid grid = patchify(samples[i].image, m.preset.patch_size);
      const EncodeResult enc = encode_visible(m, grid, set.masks[i]);
      const Tensor recon = decode_with_mask_tokens(m, enc, set.masks[i]);
      const ImageBuf composed =
          compose_reconstruction(grid, recon, set.masks[i]);
      psum += psnr(samples[i].image, composed);
      for (const CharCoverage& cc :
           char_coverage(set.masks[i], samples[i], m.preset.patch_size)) {
        hist[std::size_t(std::min(9, int(cc.fraction * 10)))] += 1.0;
        ++chars;
        if (cc.fully_masked) ++full;
      }
    }
    rep.psnr_mean[set.name] = psum / double(samples.size());
    if (chars > 0)
      for (double& h : hist) h /= double(chars);
    rep.coverage_hist[set.name] = hist;
    rep.fully_masked_fraction[set.name] =
        chars > 0 ? double(full) / double(chars) : 0.0;
  }
  return rep;
}

// Cross-strategy table: one row per model, one column per eval set.
inline void write_psnr_csv(
    const std::string& path, const std::vector<std::string>& set_names,
    const std::vector<std::pair<std::string, std::map<std::string, double>>>&
        rows) {
  std::ofstream out(path);
  if (!out) throw IoError("write_psnr_csv: cannot write '" + path + "'");
  out << "model";
  for (const std::string& s : set_names) out << "," << s;
  out << "\n";
  char buf[64];
  for (const auto& [model, vals] : rows) {
    out << model;
    for (const std::string& s : set_names) {
      auto it = vals.find(s);
      if (it == vals.end())
        throw ConfigError("write_psnr_csv: row '" + model +
                          "' lacks column '" + s + "'");
      std::snprintf(buf, sizeof(buf), "%.9g", it->second);
      out << "," << buf;
    }
    out << "\n";
  }
  out.flush();
  if (!out) throw IoError("write_psnr_csv: writing '" + path + "' failed");
}

}  // namespace mms

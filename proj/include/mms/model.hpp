// SPDX-License-Identifier: Apache-2.0
//
// Shared-weight masked-autoencoder model for text images: a pre-norm ViT
// encoder that sees only visible patches, a lightweight decoder that fills
// masked slots with a learned mask token, per-branch reconstruction losses,
// and attention-map extraction.
//
// One parameter record serves all masking branches; gradients from every
// branch accumulate into the same tensors. Parameters live in a ParamStore
// keyed by stable names (the checkpoint key space).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mms/autodiff.hpp"
#include "mms/errors.hpp"
#include "mms/image.hpp"
#include "mms/masking.hpp"
#include "mms/patches.hpp"
#include "mms/rng.hpp"
#include "mms/tensor.hpp"

namespace mms {

struct ModelPreset {
  std::string name;
  int image_h = 32;
  int image_w = 128;
  int channels = 3;
  int patch_size = 4;
  int d_model = 0;
  int enc_depth = 0;
  int enc_heads = 0;
  int d_dec = 256;
  int dec_depth = 2;
  int dec_heads = 8;
  int mlp_ratio = 4;

  int grid_h() const { return image_h / patch_size; }
  int grid_w() const { return image_w / patch_size; }
  int num_patches() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
};

// "tiny-desk" is sized so that full gradient checks run in seconds on a
// laptop; "vit-tiny" matches the usual ViT-Tiny encoder dims.
inline const ModelPreset& preset(const std::string& name) {
  static const std::vector<ModelPreset> presets = [] {
    std::vector<ModelPreset> v;
    ModelPreset desk;
    desk.name = "tiny-desk";
    desk.d_model = 64;
    desk.enc_depth = 4;
    desk.enc_heads = 4;
    v.push_back(desk);
    ModelPreset tiny;
    tiny.name = "vit-tiny";
    tiny.d_model = 192;
    tiny.enc_depth = 12;
    tiny.enc_heads = 3;
    v.push_back(tiny);
    return v;
  }();
  for (const ModelPreset& p : presets)
    if (p.name == name) return p;
  throw ConfigError("unknown model preset '" + name +
                    "' (available: tiny-desk, vit-tiny)");
}

// Ordered name -> Tensor map. Iteration order is creation order, which
// fixes both the init stream layout and the checkpoint table order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name))
      throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(t));
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw IndexError("ParamStore: unknown parameter '" + name + "'");
    return values_[it->second];
  }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw IndexError("ParamStore: unknown parameter '" + name + "'");
    return values_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return values_.size(); }

  std::size_t total_elems() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct MmsParams {
  ModelPreset preset;
  ParamStore store;
};

// Init classes for each parameter tensor.
enum class ParamInit { weight, zero, one };

struct ParamSpecEntry {
  std::string name;
  std::vector<int> shape;
  ParamInit init;
};

// The complete parameter layout for a preset, in creation order. init_params
// fills from this list and checkpoint loading validates against it, so the
// two can never drift apart.
inline std::vector<ParamSpecEntry> param_layout(const ModelPreset& pr) {
  std::vector<ParamSpecEntry> out;
  auto w = [&out](std::string n, std::vector<int> s) {
    out.push_back({std::move(n), std::move(s), ParamInit::weight});
  };
  auto zero = [&out](std::string n, std::vector<int> s) {
    out.push_back({std::move(n), std::move(s), ParamInit::zero});
  };
  auto one = [&out](std::string n, std::vector<int> s) {
    out.push_back({std::move(n), std::move(s), ParamInit::one});
  };
  auto block = [&](const std::string& pre, int d, int r) {
    one(pre + ".ln1.g", {d});
    zero(pre + ".ln1.b", {d});
    w(pre + ".attn.wq", {d, d});
    zero(pre + ".attn.bq", {d});
    w(pre + ".attn.wk", {d, d});
    zero(pre + ".attn.bk", {d});
    w(pre + ".attn.wv", {d, d});
    zero(pre + ".attn.bv", {d});
    w(pre + ".attn.wo", {d, d});
    zero(pre + ".attn.bo", {d});
    one(pre + ".ln2.g", {d});
    zero(pre + ".ln2.b", {d});
    w(pre + ".mlp.w1", {d, r * d});
    zero(pre + ".mlp.b1", {r * d});
    w(pre + ".mlp.w2", {r * d, d});
    zero(pre + ".mlp.b2", {d});
  };

  const int n = pr.num_patches();
  w("patch_embed.w", {pr.patch_dim(), pr.d_model});
  zero("patch_embed.b", {pr.d_model});
  w("cls_token", {pr.d_model});
  w("pos_embed", {n + 1, pr.d_model});
  for (int i = 0; i < pr.enc_depth; ++i)
    block("enc." + std::to_string(i), pr.d_model, pr.mlp_ratio);
  w("dec_embed.w", {pr.d_model, pr.d_dec});
  zero("dec_embed.b", {pr.d_dec});
  w("mask_token", {pr.d_dec});
  w("dec_pos_embed", {n + 1, pr.d_dec});
  for (int i = 0; i < pr.dec_depth; ++i)
    block("dec." + std::to_string(i), pr.d_dec, pr.mlp_ratio);
  w("pred.w", {pr.d_dec, pr.patch_dim()});
  zero("pred.b", {pr.patch_dim()});
  return out;
}

// Projection matrices (name leaf starting with 'w') take weight decay;
// biases, norm affines, tokens and positional tables do not.
inline bool weight_decay_applies(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf =
      dot == std::string::npos ? name : name.substr(dot + 1);
  return !leaf.empty() && leaf[0] == 'w';
}

// Truncated-gaussian (std 0.02, clipped at 2 sigma) for weights, zeros for
// biases and norm betas, ones for norm gammas. One sequential stream drawn
// from sub_seed(seed, kStreamInit) fills the tensors in layout order, so a
// (preset, seed) pair pins every value.
inline MmsParams init_params(const std::string& preset_name,
                             std::uint64_t seed) {
  const ModelPreset& pr = preset(preset_name);
  if (pr.d_model % pr.enc_heads != 0 || pr.d_dec % pr.dec_heads != 0)
    throw ConfigError("init_params: head count must divide model dim");
  MmsParams m;
  m.preset = pr;
  Rng rng(sub_seed(seed, kStreamInit));
  for (const ParamSpecEntry& e : param_layout(pr)) {
    switch (e.init) {
      case ParamInit::zero:
        m.store.add(e.name, Tensor::zeros(e.shape));
        break;
      case ParamInit::one:
        m.store.add(e.name, Tensor::constant(e.shape, 1.0));
        break;
      case ParamInit::weight: {
        Tensor t = Tensor::zeros(e.shape);
        double* d = t.mutable_data();
        for (std::size_t i = 0; i < t.size(); ++i)
          d[i] = rng.trunc_gaussian(0.0, 0.02, 2.0);
        m.store.add(e.name, std::move(t));
        break;
      }
    }
  }
  return m;
}

// Re-register every parameter as a gradient leaf on a fresh tape. Tensors
// stamped by an older tape silently degrade to constants, so this must run
// once per training step before the forward pass.
inline void watch_params(MmsParams& m, Tape& tape) {
  for (const std::string& name : m.store.names())
    m.store.at(name) = tape.watch(m.store.at(name));
}

namespace detail {

// Multi-head self-attention over x [T, d]. Heads are column slices of the
// fused q/k/v projections; head h's output rows of wo are gathered so the
// per-head contributions sum to the usual packed projection. When attn_out
// is set it receives the post-softmax maps as one [heads, T, T] tensor
// (values only; not differentiated through).
inline Tensor mha(const ParamStore& ps, const std::string& pre, int heads,
                  const Tensor& x, Tape* tape, Tensor* attn_out) {
  const int t = x.dim(0);
  const int d = x.dim(1);
  const int hd = d / heads;
  const double sc = 1.0 / std::sqrt(double(hd));
  const Tensor& wq = ps.at(pre + ".wq");
  const Tensor& wk = ps.at(pre + ".wk");
  const Tensor& wv = ps.at(pre + ".wv");
  const Tensor& wo = ps.at(pre + ".wo");
  const Tensor& bq = ps.at(pre + ".bq");
  const Tensor& bk = ps.at(pre + ".bk");
  const Tensor& bv = ps.at(pre + ".bv");
  const Tensor& bo = ps.at(pre + ".bo");

  std::vector<double> maps;
  if (attn_out) maps.resize(std::size_t(heads) * t * t);
  Tensor sum;
  for (int h = 0; h < heads; ++h) {
    const int c0 = h * hd;
    const int c1 = c0 + hd;
    Tensor q = add_row_bias(matmul(x, slice_cols(wq, c0, c1, tape), tape),
                            slice_cols(bq, c0, c1, tape), tape);
    Tensor k = add_row_bias(matmul(x, slice_cols(wk, c0, c1, tape), tape),
                            slice_cols(bk, c0, c1, tape), tape);
    Tensor v = add_row_bias(matmul(x, slice_cols(wv, c0, c1, tape), tape),
                            slice_cols(bv, c0, c1, tape), tape);
    Tensor a = softmax_rows(scale(matmul(q, transpose(k, tape), tape), sc,
                                  tape),
                            tape);
    if (attn_out)
      std::copy(a.data(), a.data() + a.size(),
                maps.begin() + std::size_t(h) * t * t);
    std::vector<int> rows(static_cast<std::size_t>(hd));
    std::iota(rows.begin(), rows.end(), c0);
    Tensor head = matmul(matmul(a, v, tape), gather_rows(wo, rows, tape), tape);
    sum = h == 0 ? head : add(sum, head, tape);
  }
  if (attn_out) *attn_out = Tensor({heads, t, t}, std::move(maps));
  return add_row_bias(sum, bo, tape);
}

// One pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
inline Tensor transformer_block(const ParamStore& ps, const std::string& pre,
                                int heads, Tensor x, Tape* tape,
                                Tensor* attn_out) {
  Tensor h = layer_norm(x, ps.at(pre + ".ln1.g"), ps.at(pre + ".ln1.b"), 1e-5,
                        tape);
  x = add(x, mha(ps, pre + ".attn", heads, h, tape, attn_out), tape);
  Tensor m = layer_norm(x, ps.at(pre + ".ln2.g"), ps.at(pre + ".ln2.b"), 1e-5,
                        tape);
  m = add_row_bias(matmul(m, ps.at(pre + ".mlp.w1"), tape),
                   ps.at(pre + ".mlp.b1"), tape);
  m = gelu(m, tape);
  m = add_row_bias(matmul(m, ps.at(pre + ".mlp.w2"), tape),
                   ps.at(pre + ".mlp.b2"), tape);
  return add(x, m, tape);
}

}  // namespace detail

struct EncodeOptions {
  // Feed the visible patches in this order instead of ascending index.
  // Must be a permutation of the mask's visible set. Positional embeddings
  // follow the original indices either way.
  const std::vector<int>* visible_order = nullptr;
  // Keep attention maps from every encoder layer, not just the last.
  bool keep_all_attn = false;
};

struct EncodeResult {
  Tensor features;            // [V+1, d_model]; row 0 is CLS
  std::vector<Tensor> attn;   // per kept layer, [heads, V+1, V+1]
  std::vector<int> visible_idx;  // patch index of feature row i+1
};

// Encoder forward over visible patches only. Patch k keeps pos_embed row
// k+1 regardless of feed order; row 0 of pos_embed belongs to CLS.
inline EncodeResult encode_visible(const MmsParams& m, const PatchGrid& g,
                                   const MaskSet& mask, Tape* tape = nullptr,
                                   const EncodeOptions& opt = {}) {
  const ModelPreset& pr = m.preset;
  if (g.grid_h != mask.grid_h || g.grid_w != mask.grid_w)
    throw GeometryError("encode_visible: mask grid " +
                        std::to_string(mask.grid_h) + "x" +
                        std::to_string(mask.grid_w) + " vs patch grid " +
                        std::to_string(g.grid_h) + "x" +
                        std::to_string(g.grid_w));
  if (g.grid_h != pr.grid_h() || g.grid_w != pr.grid_w() ||
      g.patch_dim() != pr.patch_dim())
    throw GeometryError("encode_visible: grid does not match preset '" +
                        pr.name + "'");

  std::vector<int> vis = mask.visible();
  if (opt.visible_order) {
    std::vector<int> sorted = *opt.visible_order;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != vis)
      throw GeometryError(
          "encode_visible: visible_order is not a permutation of the "
          "visible set");
    vis = *opt.visible_order;
  }

  const ParamStore& ps = m.store;
  Tensor x = gather_rows(g.patches, vis, tape);
  x = add_row_bias(matmul(x, ps.at("patch_embed.w"), tape),
                   ps.at("patch_embed.b"), tape);
  std::vector<int> pos_rows(vis.size());
  for (std::size_t i = 0; i < vis.size(); ++i) pos_rows[i] = vis[i] + 1;
  x = add(x, gather_rows(ps.at("pos_embed"), pos_rows, tape), tape);

  Tensor cls = add(reshape(ps.at("cls_token"), {1, pr.d_model}, tape),
                   gather_rows(ps.at("pos_embed"), {0}, tape), tape);
  x = concat_rows(cls, x, tape);

  EncodeResult res;
  for (int l = 0; l < pr.enc_depth; ++l) {
    const bool keep = opt.keep_all_attn || l == pr.enc_depth - 1;
    Tensor attn;
    x = detail::transformer_block(ps, "enc." + std::to_string(l),
                                  pr.enc_heads, std::move(x), tape,
                                  keep ? &attn : nullptr);
    if (keep) res.attn.push_back(std::move(attn));
  }
  res.features = std::move(x);
  res.visible_idx = std::move(vis);
  return res;
}

namespace detail {

inline Tensor decode_impl(const MmsParams& m, const Tensor& features,
                          const std::vector<int>& visible_idx,
                          const MaskSet& mask, Tape* tape) {
  const ModelPreset& pr = m.preset;
  const ParamStore& ps = m.store;
  const int n = mask.num_patches();
  const int v = int(visible_idx.size());
  if (n != pr.num_patches())
    throw GeometryError("decode_with_mask_tokens: mask grid does not match "
                        "preset '" + pr.name + "'");
  if (features.rank() != 2 || features.dim(0) != v + 1 ||
      features.dim(1) != pr.d_model)
    throw GeometryError("decode_with_mask_tokens: features " +
                        features.shape_str() + " do not match " +
                        std::to_string(v) + " visible patches");

  Tensor y = add_row_bias(matmul(features, ps.at("dec_embed.w"), tape),
                          ps.at("dec_embed.b"), tape);
  // Visible tokens return to their original slots (CLS keeps slot 0);
  // masked slots receive the shared mask token via an indicator product.
  std::vector<int> slots(std::size_t(v) + 1);
  slots[0] = 0;
  for (int i = 0; i < v; ++i) slots[std::size_t(i) + 1] = visible_idx[i] + 1;
  Tensor full = scatter_rows(y, slots, n + 1, tape);
  std::vector<double> ind(std::size_t(n) + 1, 0.0);
  for (int k : mask.masked) ind[std::size_t(k) + 1] = 1.0;
  Tensor indicator(std::vector<int>{n + 1, 1}, std::move(ind));
  full = add(full,
             matmul(indicator, reshape(ps.at("mask_token"), {1, pr.d_dec},
                                       tape),
                    tape),
             tape);
  full = add(full, ps.at("dec_pos_embed"), tape);
  for (int l = 0; l < pr.dec_depth; ++l)
    full = detail::transformer_block(ps, "dec." + std::to_string(l),
                                     pr.dec_heads, std::move(full), tape,
                                     nullptr);
  Tensor out = add_row_bias(matmul(full, ps.at("pred.w"), tape),
                            ps.at("pred.b"), tape);
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 1);  // drop the CLS slot
  return gather_rows(out, rows, tape);
}

}  // namespace detail

// Decoder forward: project features to d_dec, rebuild the full-length
// sequence with mask tokens at masked slots, run the decoder blocks and
// predict all N patch vectors (loss selection happens later).
inline Tensor decode_with_mask_tokens(const MmsParams& m,
                                      const EncodeResult& enc,
                                      const MaskSet& mask,
                                      Tape* tape = nullptr) {
  return detail::decode_impl(m, enc.features, enc.visible_idx, mask, tape);
}

// Overload for features produced with the default ascending visible order.
inline Tensor decode_with_mask_tokens(const MmsParams& m,
                                      const Tensor& features,
                                      const MaskSet& mask,
                                      Tape* tape = nullptr) {
  return detail::decode_impl(m, features, mask.visible(), mask, tape);
}

// Mean over masked patches of the squared L2 distance between predicted
// and target patch vectors. The norm is summed over patch_dim and not
// re-divided by it; see the loss-convention note in the README.
inline Tensor branch_loss(const Tensor& recon, const Tensor& targets,
                          const MaskSet& mask, Tape* tape = nullptr) {
  if (mask.count() == 0)
    throw EmptyMaskError("branch_loss: mask selects no patches");
  if (recon.rank() != 2 || !recon.same_shape(targets))
    throw ShapeError("branch_loss: recon " + recon.shape_str() +
                     " vs targets " + targets.shape_str());
  if (recon.dim(0) != mask.num_patches())
    throw GeometryError("branch_loss: " + std::to_string(recon.dim(0)) +
                        " rows vs " + std::to_string(mask.num_patches()) +
                        " patches");
  Tensor d = sub(gather_rows(recon, mask.masked, tape),
                 gather_rows(targets, mask.masked, tape), tape);
  return scale(sum_all(mul(d, d, tape), tape), 1.0 / double(mask.count()),
               tape);
}

struct BranchOutput {
  Tensor recon_patches;            // [N, patch_dim]
  std::vector<Tensor> encoder_attn;  // per kept layer, [heads, V+1, V+1]
  std::vector<int> visible_idx;
};

struct MmsForwardResult {
  Tensor loss_random;  // scalars; tracked when a tape is supplied
  Tensor loss_block;
  Tensor loss_span;
  Tensor loss_total;
  BranchOutput random;
  BranchOutput block;
  BranchOutput span;
};

// Three branch forwards through the same parameters; the total loss is the
// unweighted sum, so gradients from every branch land in the shared
// tensors. Targets are the per-patch-normalized grid.
inline MmsForwardResult mms_forward(const MmsParams& m, const PatchGrid& g,
                                    const MaskTriple& masks,
                                    Tape* tape = nullptr,
                                    const EncodeOptions& opt = {}) {
  const PatchGrid norm = normalize_targets(g);
  auto run = [&](const MaskSet& mask, BranchOutput& out) {
    EncodeResult enc = encode_visible(m, g, mask, tape, opt);
    out.recon_patches = decode_with_mask_tokens(m, enc, mask, tape);
    out.encoder_attn = std::move(enc.attn);
    out.visible_idx = std::move(enc.visible_idx);
    return branch_loss(out.recon_patches, norm.patches, mask, tape);
  };
  MmsForwardResult r;
  r.loss_random = run(masks.random, r.random);
  r.loss_block = run(masks.block, r.block);
  r.loss_span = run(masks.span, r.span);
  r.loss_total =
      add(add(r.loss_random, r.loss_block, tape), r.loss_span, tape);
  return r;
}

struct AttnMap {
  // Heads-averaged final-layer attention from the query token to the N
  // patch tokens, before thresholding. The CLS column is excluded, so the
  // values are non-negative and sum to at most 1; the remainder is the
  // query's mass on CLS itself.
  std::vector<double> patch_attn;
  std::vector<char> kept;  // survives the mass threshold
  ImageBuf heatmap;        // image-sized; zero outside kept patches
  ImageBuf overlay;        // patch/char maps only; empty for the CLS map
};

namespace detail {

inline MaskSet empty_mask(const PatchGrid& g) {
  MaskSet ms;
  ms.grid_h = g.grid_h;
  ms.grid_w = g.grid_w;
  return ms;
}

inline std::vector<double> attn_row_over_patches(const Tensor& attn,
                                                 int row) {
  const int heads = attn.dim(0);
  const int t = attn.dim(1);
  std::vector<double> out(std::size_t(t) - 1, 0.0);
  const double* a = attn.data();
  for (int h = 0; h < heads; ++h)
    for (int j = 1; j < t; ++j)
      out[std::size_t(j) - 1] += a[(std::size_t(h) * t + row) * t + j];
  for (double& x : out) x /= double(heads);
  return out;
}

// Keep the smallest patch set holding at least a tau share of the total
// attention mass: sort descending and cut the running sum at tau. tau = 1
// therefore keeps every patch.
inline std::vector<char> mass_threshold(const std::vector<double>& w,
                                        double tau) {
  if (!(tau > 0.0) || tau > 1.0)
    throw RangeError("attention threshold tau must lie in (0, 1]");
  if (tau == 1.0) return std::vector<char>(w.size(), 1);
  double total = 0;
  for (double x : w) total += x;
  std::vector<int> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return w[std::size_t(a)] != w[std::size_t(b)]
               ? w[std::size_t(a)] > w[std::size_t(b)]
               : a < b;
  });
  std::vector<char> kept(w.size(), 0);
  double cum = 0;
  for (int k : order) {
    kept[std::size_t(k)] = 1;
    cum += w[std::size_t(k)];
    if (cum >= tau * total) break;
  }
  return kept;
}

// Patch weights -> image-sized single-channel map. Each patch paints its
// block with its weight relative to the largest one; dropped patches go
// black.
inline ImageBuf render_patch_map(const std::vector<double>& w,
                                 const std::vector<char>& kept, int grid_h,
                                 int grid_w, int patch) {
  double mx = 0;
  for (double x : w) mx = std::max(mx, x);
  if (mx <= 0) mx = 1;
  ImageBuf img = ImageBuf::make(grid_h * patch, grid_w * patch, 1);
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      const std::size_t k = std::size_t(gy) * grid_w + gx;
      const double val = kept[k] ? w[k] / mx : 0.0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          img.data[img.idx(gy * patch + py, gx * patch + px, 0)] = val;
    }
  return img;
}

// Fig.-style overlay: the original image scaled per patch by normalized
// attention, fading unattended regions to black.
inline ImageBuf render_overlay(const std::vector<double>& w,
                               const PatchGrid& g) {
  double mx = 0;
  for (double x : w) mx = std::max(mx, x);
  if (mx <= 0) mx = 1;
  ImageBuf img = depatchify(g);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::size_t k =
          std::size_t(y / g.patch_size) * g.grid_w + x / g.patch_size;
      const double a = w[k] / mx;
      for (int c = 0; c < img.channels; ++c)
        img.data[img.idx(y, x, c)] *= a;
    }
  return img;
}

inline AttnMap attention_for_row(const PatchGrid& g,
                                 const std::vector<double>& row, double tau,
                                 bool with_overlay) {
  AttnMap r;
  r.patch_attn = row;
  r.kept = mass_threshold(r.patch_attn, tau);
  r.heatmap = render_patch_map(r.patch_attn, r.kept, g.grid_h, g.grid_w,
                               g.patch_size);
  if (with_overlay) r.overlay = render_overlay(r.patch_attn, g);
  return r;
}

}  // namespace detail

// CLS -> patch attention of the final encoder layer on the unmasked image.
inline AttnMap attention_cls(const MmsParams& m, const PatchGrid& g,
                             double tau = 0.6) {
  EncodeResult enc = encode_visible(m, g, detail::empty_mask(g));
  return detail::attention_for_row(
      g, detail::attn_row_over_patches(enc.attn.back(), 0), tau, false);
}

// Attention row of one patch token, with the black-masking overlay.
inline AttnMap attention_patch(const MmsParams& m, const PatchGrid& g,
                               int patch_index, double tau = 0.6) {
  if (patch_index < 0 || patch_index >= g.num_patches())
    throw IndexError("attention_patch: index " + std::to_string(patch_index) +
                     " outside [0, " + std::to_string(g.num_patches()) + ")");
  EncodeResult enc = encode_visible(m, g, detail::empty_mask(g));
  return detail::attention_for_row(
      g, detail::attn_row_over_patches(enc.attn.back(), patch_index + 1), tau,
      true);
}

// Character-level attention: patches whose pixel block overlaps the binary
// character mask by more than 70% are selected and their attention rows
// averaged. The mask must match the image dims; channels are reduced by
// mean first.
inline AttnMap attention_char(const MmsParams& m, const PatchGrid& g,
                              const ImageBuf& char_mask, double tau = 0.6) {
  const int h = g.grid_h * g.patch_size;
  const int w = g.grid_w * g.patch_size;
  if (char_mask.height != h || char_mask.width != w)
    throw GeometryError("attention_char: mask " +
                        std::to_string(char_mask.height) + "x" +
                        std::to_string(char_mask.width) + " vs image " +
                        std::to_string(h) + "x" + std::to_string(w));
  const ImageBuf gray = to_gray(char_mask);
  const int area = g.patch_size * g.patch_size;
  std::vector<int> selected;
  for (int gy = 0; gy < g.grid_h; ++gy)
    for (int gx = 0; gx < g.grid_w; ++gx) {
      int inside = 0;
      for (int py = 0; py < g.patch_size; ++py)
        for (int px = 0; px < g.patch_size; ++px)
          if (gray.data[gray.idx(gy * g.patch_size + py,
                                 gx * g.patch_size + px, 0)] > 0.5)
            ++inside;
      if (double(inside) > 0.7 * double(area))
        selected.push_back(gy * g.grid_w + gx);
    }
  if (selected.empty())
    throw EmptySelectionError(
        "attention_char: no patch overlaps the mask by more than 70%");

  EncodeResult enc = encode_visible(m, g, detail::empty_mask(g));
  std::vector<double> row(std::size_t(g.num_patches()), 0.0);
  for (int k : selected) {
    const std::vector<double> r =
        detail::attn_row_over_patches(enc.attn.back(), k + 1);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += r[i];
  }
  for (double& x : row) x /= double(selected.size());
  return detail::attention_for_row(g, row, tau, true);
}

}  // namespace mms

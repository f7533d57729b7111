// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The three masking strategies. All generators are pure functions of
// (dims, config, seed); patch indices are row-major, k = gy * grid_w + gx.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mms/errors.hpp"
#include "mms/image.hpp"
#include "mms/rng.hpp"

namespace mms {

enum class MaskStrategy { random, block, span };

inline const char* to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::block: return "block";
    case MaskStrategy::span: return "span";
  }
  return "?";
}

inline MaskStrategy mask_strategy_from(const std::string& name) {
  if (name == "random") return MaskStrategy::random;
  if (name == "block") return MaskStrategy::block;
  if (name == "span") return MaskStrategy::span;
  throw ConfigError("unknown mask strategy '" + name + "'");
}

struct MaskSet {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> masked;  // sorted, unique
  MaskStrategy strategy = MaskStrategy::random;
  double target_ratio = 0.0;

  int num_patches() const { return grid_h * grid_w; }
  int count() const { return int(masked.size()); }

  bool contains(int k) const {
    return std::binary_search(masked.begin(), masked.end(), k);
  }

  std::vector<int> visible() const {
    std::vector<int> out;
    out.reserve(std::size_t(num_patches()) - masked.size());
    std::size_t j = 0;
    for (int k = 0; k < num_patches(); ++k) {
      if (j < masked.size() && masked[j] == k)
        ++j;
      else
        out.push_back(k);
    }
    return out;
  }

  bool well_formed() const {
    if (grid_h < 1 || grid_w < 1) return false;
    int prev = -1;
    for (int k : masked) {
      if (k <= prev || k >= num_patches()) return false;
      prev = k;
    }
    return true;
  }
};

// Thrown when a sampler runs out of attempts; carries what it had so the
// caller can decide whether the partial mask is usable.
struct MaskBudgetError : Error {
  MaskSet partial;
  MaskBudgetError(const std::string& msg, MaskSet got)
      : Error(msg), partial(std::move(got)) {}
};

struct SpanConfig {
  double ratio = 0.5;
  int max_span = 8;
  int max_attempts = 0;  // 0 means 10 * grid_w
};

struct BlockConfig {
  double ratio = 0.5;
  int min_block_patches = 4;
  double aspect_lo = 0.3;
  double aspect_hi = 3.33;
  int max_attempts = 0;  // 0 means 10 * N
};

struct BlockRect {
  int top = 0, left = 0, h = 0, w = 0;
};

namespace detail {

inline void check_grid(int gh, int gw) {
  if (gh < 1 || gw < 1) throw GeometryError("mask: grid dims must be >= 1");
}

inline std::vector<int> bitset_to_sorted(const std::vector<char>& m) {
  std::vector<int> out;
  for (int k = 0; k < int(m.size()); ++k)
    if (m[std::size_t(k)]) out.push_back(k);
  return out;
}

}  // namespace detail

// Exactly round(R*N) distinct indices, uniform without replacement
// (partial Fisher-Yates).
inline MaskSet random_mask(int grid_h, int grid_w, double ratio,
                           std::uint64_t seed) {
  detail::check_grid(grid_h, grid_w);
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw RangeError("random_mask: ratio outside [0,1]");
  const int n = grid_h * grid_w;
  const int k = int(std::llround(ratio * n));
  MaskSet out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.strategy = MaskStrategy::random;
  out.target_ratio = ratio;
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[std::size_t(i)] = i;
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    const int j = i + int(rng.below(std::uint64_t(n - i)));
    std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
  }
  out.masked.assign(idx.begin(), idx.begin() + k);
  std::sort(out.masked.begin(), out.masked.end());
  return out;
}

// Rectangles with random areas and aspect ratios, unioned until the budget
// R*N is met. Aspect (block height / block width) is sampled log-uniformly
// over cfg.aspect_range. Each sampled rectangle is appended to *block_log
// when given, so a run can be replayed and audited.
inline MaskSet block_mask(int grid_h, int grid_w, const BlockConfig& cfg,
                          std::uint64_t seed,
                          std::vector<BlockRect>* block_log = nullptr) {
  detail::check_grid(grid_h, grid_w);
  if (!(cfg.ratio > 0.0 && cfg.ratio <= 1.0))
    throw RangeError("block_mask: ratio outside (0,1]");
  if (cfg.min_block_patches < 1)
    throw ConfigError("block_mask: min_block_patches must be >= 1");
  if (!(cfg.aspect_lo > 0.0 && cfg.aspect_hi >= cfg.aspect_lo))
    throw ConfigError("block_mask: bad aspect range");
  const int n = grid_h * grid_w;
  const double target = cfg.ratio * n;
  const int max_attempts =
      cfg.max_attempts > 0 ? cfg.max_attempts : 10 * n;

  MaskSet out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.strategy = MaskStrategy::block;
  out.target_ratio = cfg.ratio;

  std::vector<char> m(std::size_t(n), 0);
  int covered = 0;
  Rng rng(seed);
  int attempts = 0;
  while (double(covered) < target) {
    if (attempts++ >= max_attempts) {
      out.masked = detail::bitset_to_sorted(m);
      throw MaskBudgetError("block_mask: attempts exhausted at " +
                                std::to_string(covered) + "/" +
                                std::to_string(int(std::ceil(target))),
                            std::move(out));
    }
    const int remaining = int(std::ceil(target - covered));
    const int hi = std::max(cfg.min_block_patches, remaining);
    const int area =
        cfg.min_block_patches +
        int(rng.below(std::uint64_t(hi - cfg.min_block_patches + 1)));
    const double aspect = std::exp(
        rng.uniform(std::log(cfg.aspect_lo), std::log(cfg.aspect_hi)));
    int bh = int(std::llround(std::sqrt(double(area) * aspect)));
    int bw = int(std::llround(std::sqrt(double(area) / aspect)));
    bh = std::clamp(bh, 1, grid_h);
    bw = std::clamp(bw, 1, grid_w);
    const int top = int(rng.below(std::uint64_t(grid_h - bh + 1)));
    const int left = int(rng.below(std::uint64_t(grid_w - bw + 1)));
    if (block_log) block_log->push_back(BlockRect{top, left, bh, bw});
    for (int y = top; y < top + bh; ++y)
      for (int x = left; x < left + bw; ++x) {
        char& cell = m[std::size_t(y * grid_w + x)];
        if (!cell) {
          cell = 1;
          ++covered;
        }
      }
  }
  out.masked = detail::bitset_to_sorted(m);
  return out;
}

// Union of the rectangles of a recorded block log; replays a block_mask run.
inline MaskSet apply_block_log(int grid_h, int grid_w,
                               const std::vector<BlockRect>& log,
                               double ratio) {
  detail::check_grid(grid_h, grid_w);
  MaskSet out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.strategy = MaskStrategy::block;
  out.target_ratio = ratio;
  std::vector<char> m(std::size_t(grid_h * grid_w), 0);
  for (const BlockRect& r : log) {
    if (r.top < 0 || r.left < 0 || r.h < 1 || r.w < 1 ||
        r.top + r.h > grid_h || r.left + r.w > grid_w)
      throw GeometryError("apply_block_log: rectangle outside grid");
    for (int y = r.top; y < r.top + r.h; ++y)
      for (int x = r.left; x < r.left + r.w; ++x)
        m[std::size_t(y * grid_w + x)] = 1;
  }
  out.masked = detail::bitset_to_sorted(m);
  return out;
}

// Full-height column runs with ratio-dependent spacing:
//   span length s ~ U[1, S], left column l ~ U[0, grid_w - s],
//   spacing k = s if R <= 0.4, 1 if R <= 0.7, else 0;
//   accept only if the k in-grid columns on each side hold no masked patch;
//   on accept mask all rows of columns l..l+s-1; stop once |M| > R*N.
// Spans may overlap columns that are already masked; the neighbor test
// keeps maximal runs at <= S columns whenever k >= 1.
inline MaskSet span_mask(int grid_h, int grid_w, const SpanConfig& cfg,
                         std::uint64_t seed) {
  detail::check_grid(grid_h, grid_w);
  if (!(cfg.ratio > 0.0 && cfg.ratio <= 1.0))
    throw RangeError("span_mask: ratio outside (0,1]");
  if (cfg.max_span < 1 || cfg.max_span > grid_w)
    throw ConfigError("span_mask: max_span outside [1, grid_w]");
  const int n = grid_h * grid_w;
  const double target = cfg.ratio * n;
  const int max_attempts =
      cfg.max_attempts > 0 ? cfg.max_attempts : 10 * grid_w;

  MaskSet out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.strategy = MaskStrategy::span;
  out.target_ratio = cfg.ratio;

  std::vector<char> col(std::size_t(grid_w), 0);
  int masked_cols = 0;
  Rng rng(seed);
  int attempts = 0;
  auto total = [&] { return masked_cols * grid_h; };
  while (double(total()) <= target) {
    if (attempts++ >= max_attempts) {
      std::vector<char> m(std::size_t(n), 0);
      for (int x = 0; x < grid_w; ++x)
        if (col[std::size_t(x)])
          for (int y = 0; y < grid_h; ++y) m[std::size_t(y * grid_w + x)] = 1;
      out.masked = detail::bitset_to_sorted(m);
      throw MaskBudgetError("span_mask: attempts exhausted at " +
                                std::to_string(total()) + "/" +
                                std::to_string(n),
                            std::move(out));
    }
    const int s = 1 + int(rng.below(std::uint64_t(cfg.max_span)));
    const int l = int(rng.below(std::uint64_t(grid_w - s + 1)));
    const int r = l + s - 1;
    const int k = cfg.ratio <= 0.4 ? s : (cfg.ratio <= 0.7 ? 1 : 0);
    bool ok = true;
    for (int x = std::max(0, l - k); x < l && ok; ++x)
      ok = !col[std::size_t(x)];
    for (int x = r + 1; x <= std::min(grid_w - 1, r + k) && ok; ++x)
      ok = !col[std::size_t(x)];
    if (!ok) continue;
    for (int x = l; x <= r; ++x) {
      if (!col[std::size_t(x)]) {
        col[std::size_t(x)] = 1;
        ++masked_cols;
      }
    }
  }
  std::vector<char> m(std::size_t(n), 0);
  for (int x = 0; x < grid_w; ++x)
    if (col[std::size_t(x)])
      for (int y = 0; y < grid_h; ++y) m[std::size_t(y * grid_w + x)] = 1;
  out.masked = detail::bitset_to_sorted(m);
  return out;
}

struct MultiMaskConfig {
  double random_ratio = 0.75;
  BlockConfig block;  // ratio 0.5
  SpanConfig span;    // ratio 0.5, S = 8
};

struct MaskTriple {
  MaskSet random;
  MaskSet block;
  MaskSet span;
};

// Branch tags for sub-seed derivation; fixed forever so any recorded seed
// reproduces its masks.
inline constexpr std::uint64_t kMaskTagRandom = 1;
inline constexpr std::uint64_t kMaskTagBlock = 2;
inline constexpr std::uint64_t kMaskTagSpan = 3;

inline std::uint64_t branch_seed(std::uint64_t seed, MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return sub_seed(seed, kMaskTagRandom);
    case MaskStrategy::block: return sub_seed(seed, kMaskTagBlock);
    case MaskStrategy::span: return sub_seed(seed, kMaskTagSpan);
  }
  throw ConfigError("branch_seed: bad strategy");
}

inline MaskTriple multi_mask(int grid_h, int grid_w,
                             const MultiMaskConfig& cfg, std::uint64_t seed) {
  MaskTriple t;
  t.random = random_mask(grid_h, grid_w, cfg.random_ratio,
                         branch_seed(seed, MaskStrategy::random));
  t.block = block_mask(grid_h, grid_w, cfg.block,
                       branch_seed(seed, MaskStrategy::block));
  t.span =
      span_mask(grid_h, grid_w, cfg.span, branch_seed(seed, MaskStrategy::span));
  return t;
}

// Binary stencil at pixel resolution: masked 0, visible 1.
inline ImageBuf mask_to_bitmap(const MaskSet& mask, int patch_size) {
  if (!mask.well_formed()) throw GeometryError("mask_to_bitmap: bad mask");
  if (patch_size < 1) throw GeometryError("mask_to_bitmap: patch_size");
  ImageBuf img = ImageBuf::make(mask.grid_h * patch_size,
                                mask.grid_w * patch_size, 1, 1.0);
  for (int k : mask.masked) {
    const int gy = k / mask.grid_w;
    const int gx = k % mask.grid_w;
    for (int py = 0; py < patch_size; ++py)
      for (int px = 0; px < patch_size; ++px)
        img.data[img.idx(gy * patch_size + py, gx * patch_size + px, 0)] = 0.0;
  }
  return img;
}

// Grey-out masked patches of an image; preview form of a masked input.
inline ImageBuf apply_mask(const ImageBuf& img, const MaskSet& mask,
                           int patch_size, double fill = 0.5) {
  if (!img.consistent()) throw GeometryError("apply_mask: bad image");
  if (img.height != mask.grid_h * patch_size ||
      img.width != mask.grid_w * patch_size)
    throw GeometryError("apply_mask: image does not match mask grid");
  ImageBuf out = img;
  for (int k : mask.masked) {
    const int gy = k / mask.grid_w;
    const int gx = k % mask.grid_w;
    for (int py = 0; py < patch_size; ++py)
      for (int px = 0; px < patch_size; ++px)
        for (int c = 0; c < img.channels; ++c)
          out.data[out.idx(gy * patch_size + py, gx * patch_size + px, c)] =
              fill;
  }
  return out;
}

}  // namespace mms

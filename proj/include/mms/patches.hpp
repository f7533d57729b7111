// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image <-> patch-sequence conversion and per-patch target normalization.
//
// Patch ordering is row-major over (grid row, grid col) and every module
// uses it: mask indices, model positions and reconstruction rows all refer
// to patch k = gy * grid_w + gx. Inside a patch, values are laid out
// (pixel row, pixel col, channel), i.e. channel-interleaved.

#include <cmath>
#include <vector>

#include "mms/errors.hpp"
#include "mms/image.hpp"
#include "mms/tensor.hpp"

namespace mms {

struct PatchGrid {
  int grid_h = 0;
  int grid_w = 0;
  int patch_size = 0;
  int channels = 0;
  Tensor patches;         // [N, patch_size^2 * channels]
  Tensor per_patch_mean;  // [N]; meaningful after normalize_targets
  Tensor per_patch_std;   // [N]

  int num_patches() const { return grid_h * grid_w; }
  int patch_dim() const { return patch_size * patch_size * channels; }

  bool consistent() const {
    return grid_h >= 1 && grid_w >= 1 && patch_size >= 1 &&
           (channels == 1 || channels == 3) && patches.rank() == 2 &&
           patches.dim(0) == num_patches() && patches.dim(1) == patch_dim();
  }
};

inline PatchGrid patchify(const ImageBuf& img, int patch_size) {
  if (!img.consistent()) throw GeometryError("patchify: inconsistent image");
  if (patch_size < 1) throw GeometryError("patchify: patch_size must be >= 1");
  if (img.height % patch_size != 0 || img.width % patch_size != 0)
    throw GeometryError("patchify: image dims not divisible by patch size");

  PatchGrid g;
  g.grid_h = img.height / patch_size;
  g.grid_w = img.width / patch_size;
  g.patch_size = patch_size;
  g.channels = img.channels;
  const int n = g.num_patches();
  const int pd = g.patch_dim();
  std::vector<double> out(std::size_t(n) * pd);
  for (int gy = 0; gy < g.grid_h; ++gy)
    for (int gx = 0; gx < g.grid_w; ++gx) {
      const int k = gy * g.grid_w + gx;
      double* dst = out.data() + std::size_t(k) * pd;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int c = 0; c < img.channels; ++c)
            dst[(py * patch_size + px) * img.channels + c] =
                img.data[img.idx(gy * patch_size + py, gx * patch_size + px,
                                 c)];
    }
  g.patches = Tensor({n, pd}, std::move(out));
  g.per_patch_mean = Tensor::zeros({n});
  g.per_patch_std = Tensor::zeros({n});
  return g;
}

inline ImageBuf depatchify(const PatchGrid& g) {
  if (!g.consistent()) throw GeometryError("depatchify: inconsistent grid");
  ImageBuf img = ImageBuf::make(g.grid_h * g.patch_size,
                                g.grid_w * g.patch_size, g.channels);
  const int pd = g.patch_dim();
  const double* src = g.patches.data();
  for (int gy = 0; gy < g.grid_h; ++gy)
    for (int gx = 0; gx < g.grid_w; ++gx) {
      const double* p = src + std::size_t(gy * g.grid_w + gx) * pd;
      for (int py = 0; py < g.patch_size; ++py)
        for (int px = 0; px < g.patch_size; ++px)
          for (int c = 0; c < g.channels; ++c)
            img.data[img.idx(gy * g.patch_size + py, gx * g.patch_size + px,
                             c)] = p[(py * g.patch_size + px) * g.channels + c];
    }
  return img;
}

// Shift/scale each patch row to mean 0, std 1. Std uses the population
// denominator; eps goes under the sqrt, so a constant patch maps to zeros
// instead of dividing by zero. Stats are stored for denormalize.
inline PatchGrid normalize_targets(const PatchGrid& g, double eps = 1e-6) {
  if (!g.consistent()) throw GeometryError("normalize_targets: bad grid");
  if (!(eps > 0)) throw RangeError("normalize_targets: eps must be > 0");
  const int n = g.num_patches();
  const int pd = g.patch_dim();
  PatchGrid out = g;
  std::vector<double> norm(std::size_t(n) * pd);
  std::vector<double> means(static_cast<std::size_t>(n));
  std::vector<double> stds(static_cast<std::size_t>(n));
  const double* src = g.patches.data();
  for (int k = 0; k < n; ++k) {
    const double* row = src + std::size_t(k) * pd;
    double dst_mean, dst_std;
    double* dst = norm.data() + std::size_t(k) * pd;
    bool flat = true;
    for (int i = 1; i < pd && flat; ++i) flat = row[i] == row[0];
    if (flat) {
      // exactly-constant patch: zero output without roundoff from the mean
      dst_mean = row[0];
      dst_std = std::sqrt(eps);
      for (int i = 0; i < pd; ++i) dst[i] = 0.0;
    } else {
      double mean = 0;
      for (int i = 0; i < pd; ++i) mean += row[i];
      mean /= pd;
      double var = 0;
      for (int i = 0; i < pd; ++i) var += (row[i] - mean) * (row[i] - mean);
      var /= pd;
      dst_mean = mean;
      dst_std = std::sqrt(var + eps);
      for (int i = 0; i < pd; ++i) dst[i] = (row[i] - mean) / dst_std;
    }
    means[std::size_t(k)] = dst_mean;
    stds[std::size_t(k)] = dst_std;
  }
  out.patches = Tensor({n, pd}, std::move(norm));
  out.per_patch_mean = Tensor({n}, std::move(means));
  out.per_patch_std = Tensor({n}, std::move(stds));
  return out;
}

// Inverse of normalize_targets using the stored stats.
inline PatchGrid denormalize(const PatchGrid& g) {
  if (!g.consistent()) throw GeometryError("denormalize: bad grid");
  const int n = g.num_patches();
  const int pd = g.patch_dim();
  if (int(g.per_patch_mean.size()) != n || int(g.per_patch_std.size()) != n)
    throw GeometryError("denormalize: missing per-patch stats");
  PatchGrid out = g;
  std::vector<double> raw(std::size_t(n) * pd);
  const double* src = g.patches.data();
  for (int k = 0; k < n; ++k) {
    const double m = g.per_patch_mean.at(k);
    const double s = g.per_patch_std.at(k);
    const double* row = src + std::size_t(k) * pd;
    double* dst = raw.data() + std::size_t(k) * pd;
    for (int i = 0; i < pd; ++i) dst[i] = row[i] * s + m;
  }
  out.patches = Tensor({n, pd}, std::move(raw));
  out.per_patch_mean = Tensor::zeros({n});
  out.per_patch_std = Tensor::zeros({n});
  return out;
}

}  // namespace mms

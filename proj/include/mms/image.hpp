// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Float images in [0,1] plus binary PPM/PGM I/O and bilinear resize.
//
// File I/O is bit-exact in the following sense: writing quantizes each
// value to round(v * 255) and reading maps byte b to b / 255.0, so
// write -> read -> write reproduces the first file byte for byte.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mms/errors.hpp"

namespace mms {

struct ImageBuf {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;  // row-major (y, x, channel)

  static ImageBuf make(int h, int w, int c, double fill = 0.0) {
    if (h < 1 || w < 1 || (c != 1 && c != 3))
      throw GeometryError("ImageBuf: bad dimensions");
    ImageBuf img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.data.assign(std::size_t(h) * w * c, fill);
    return img;
  }

  std::size_t idx(int y, int x, int c) const {
    return (std::size_t(y) * width + std::size_t(x)) * channels +
           std::size_t(c);
  }

  double at(int y, int x, int c) const {
    if (y < 0 || y >= height || x < 0 || x >= width || c < 0 || c >= channels)
      throw IndexError("ImageBuf::at");
    return data[idx(y, x, c)];
  }

  double& at(int y, int x, int c) {
    if (y < 0 || y >= height || x < 0 || x >= width || c < 0 || c >= channels)
      throw IndexError("ImageBuf::at");
    return data[idx(y, x, c)];
  }

  std::size_t size() const { return data.size(); }

  bool consistent() const {
    return (channels == 1 || channels == 3) && height >= 1 && width >= 1 &&
           data.size() == std::size_t(height) * width * channels;
  }
};

// Grayscale replicated to three channels; 3-channel input passes through.
inline ImageBuf to_rgb(const ImageBuf& img) {
  if (img.channels == 3) return img;
  ImageBuf out = ImageBuf::make(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = img.data[img.idx(y, x, 0)];
      for (int c = 0; c < 3; ++c) out.data[out.idx(y, x, c)] = v;
    }
  return out;
}

inline ImageBuf to_gray(const ImageBuf& img) {
  if (img.channels == 1) return img;
  ImageBuf out = ImageBuf::make(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0;
      for (int c = 0; c < 3; ++c) s += img.data[img.idx(y, x, c)];
      out.data[out.idx(y, x, 0)] = s / 3.0;
    }
  return out;
}

namespace detail {

inline int pnm_token(std::istream& in) {
  // skip whitespace and '#' comments, then parse a non-negative int
  int ch = in.get();
  for (;;) {
    while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') ch = in.get();
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
      continue;
    }
    break;
  }
  if (ch < '0' || ch > '9') throw IoError("pnm: malformed header");
  long v = 0;
  while (ch >= '0' && ch <= '9') {
    v = v * 10 + (ch - '0');
    if (v > 1 << 26) throw IoError("pnm: absurd header value");
    ch = in.get();
  }
  if (ch != ' ' && ch != '\t' && ch != '\r' && ch != '\n' && ch != EOF)
    throw IoError("pnm: malformed header");
  return int(v);
}

}  // namespace detail

inline ImageBuf read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw IoError(path + ": not a binary PGM/PPM");
  const int channels = (m1 == '6') ? 3 : 1;
  int w, h, maxval;
  try {
    w = detail::pnm_token(in);
    h = detail::pnm_token(in);
    maxval = detail::pnm_token(in);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  if (w < 1 || h < 1) throw IoError(path + ": degenerate dimensions");

  const std::size_t n = std::size_t(h) * w * channels;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n));
  if (std::size_t(in.gcount()) != n) throw IoError(path + ": truncated pixel data");

  ImageBuf img = ImageBuf::make(h, w, channels);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = raw[i] / 255.0;
  return img;
}

// P6 for 3 channels, P5 for 1.
inline void write_pnm(const ImageBuf& img, const std::string& path) {
  if (!img.consistent()) throw GeometryError("write_pnm: inconsistent image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double v = img.data[i];
    if (v < 0) v = 0;
    if (v > 1) v = 1;
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            std::streamsize(raw.size()));
  if (!out) throw IoError("short write to " + path);
}

// Bilinear resize, half-pixel centers (align_corners = false): output pixel
// (y, x) samples source position ((y+0.5)*h_in/h_out - 0.5, likewise for x),
// with edge clamping.
inline ImageBuf resize_bilinear(const ImageBuf& img, int out_h, int out_w) {
  if (!img.consistent()) throw GeometryError("resize_bilinear: bad image");
  if (out_h < 1 || out_w < 1)
    throw GeometryError("resize_bilinear: output dims must be >= 1");
  ImageBuf out = ImageBuf::make(out_h, out_w, img.channels);
  const double sy = double(img.height) / out_h;
  const double sx = double(img.width) / out_w;
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = int(std::floor(fy));
    const double wy = fy - y0;
    const int ya = clampi(y0, img.height - 1);
    const int yb = clampi(y0 + 1, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = int(std::floor(fx));
      const double wx = fx - x0;
      const int xa = clampi(x0, img.width - 1);
      const int xb = clampi(x0 + 1, img.width - 1);
      for (int c = 0; c < img.channels; ++c) {
        const double top = (1 - wx) * img.data[img.idx(ya, xa, c)] +
                           wx * img.data[img.idx(ya, xb, c)];
        const double bot = (1 - wx) * img.data[img.idx(yb, xa, c)] +
                           wx * img.data[img.idx(yb, xb, c)];
        out.data[out.idx(y, x, c)] = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace mms

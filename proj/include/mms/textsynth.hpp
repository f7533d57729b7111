// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic word-image generator. An embedded 5x7 bitmap
// font (A-Z, 0-9) is scaled 2-3x and placed left-to-right on a sampled
// background; every sample carries exact per-character pixel boxes and
// binary glyph masks, so coverage and attention analyses have ground
// truth. Reproducibility is the whole point: one seed pins the dataset.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mms/errors.hpp"
#include "mms/image.hpp"
#include "mms/rng.hpp"

namespace mms {

inline constexpr char kCharset[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
inline constexpr int kCharsetSize = 36;
inline constexpr int kGlyphW = 5;
inline constexpr int kGlyphH = 7;

namespace detail {

// Classic 5x7 dot-matrix glyphs; row strings use '#' for set pixels.
inline const char* const kFont[kCharsetSize][kGlyphH] = {
    {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"},  // A
    {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "},  // B
    {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "},  // C
    {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "},  // D
    {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"},  // E
    {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "},  // F
    {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"},  // G
    {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"},  // H
    {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},  // I
    {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "},  // J
    {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"},  // K
    {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"},  // L
    {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"},  // M
    {"#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"},  // N
    {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "},  // O
    {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "},  // P
    {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"},  // Q
    {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"},  // R
    {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "},  // S
    {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "},  // T
    {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "},  // U
    {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "},  // V
    {"#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "},  // W
    {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"},  // X
    {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "},  // Y
    {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"},  // Z
    {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},  // 0
    {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},  // 1
    {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"},  // 2
    {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "},  // 3
    {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "},  // 4
    {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},  // 5
    {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "},  // 6
    {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "},  // 7
    {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},  // 8
    {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},  // 9
};

inline int charset_index(char c) {
  const char* p = std::char_traits<char>::find(kCharset, kCharsetSize, c);
  if (!p)
    throw ConfigError(std::string("charset does not contain '") + c + "'");
  return int(p - kCharset);
}

}  // namespace detail

struct CharBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;  // half-open
  int y1 = 0;

  bool operator==(const CharBox&) const = default;
};

struct SyntheticSample {
  ImageBuf image;  // 32 x 128 x 3
  std::string word;
  std::vector<CharBox> char_boxes;      // left-to-right
  std::vector<ImageBuf> char_masks;     // image-sized binary, per char
  std::uint64_t seed = 0;
};

struct SynthConfig {
  int image_h = 32;
  int image_w = 128;
  int len_lo = 3;
  int len_hi = 10;
  double fg_lo = 0.0;   // per-channel foreground range
  double fg_hi = 0.35;
  double bg_lo = 0.65;  // per-channel background range
  double bg_hi = 1.0;
  double min_contrast = 0.2;  // |gray(fg) - gray(bg)| floor
  double noise_std = 0.02;
  bool make_masks = true;
  // Deterministic placement (scale 2, margins 2, gaps = scale, no vertical
  // jitter): column positions become reproducible across samples, which the
  // linear probe needs.
  bool fixed_layout = false;

  void validate() const {
    if (image_h < kGlyphH * 2 || image_w < kGlyphW * 2)
      throw ConfigError("synth: image too small for the font");
    if (len_lo < 1 || len_hi < len_lo)
      throw ConfigError("synth: bad word length range");
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(fg_lo) || !in01(fg_hi) || !in01(bg_lo) || !in01(bg_hi) ||
        fg_hi < fg_lo || bg_hi < bg_lo)
      throw ConfigError("synth: color ranges must lie in [0,1]");
    if (noise_std < 0) throw ConfigError("synth: negative noise_std");
    // the longest word must fit at the smallest scale
    if (min_word_width(len_hi, 2) > image_w)
      throw ConfigError("synth: length range exceeds image width capacity");
  }

  // margins 2+2, glyphs 5*scale, minimum gap = scale
  static int min_word_width(int len, int scale) {
    return 4 + len * kGlyphW * scale + (len - 1) * scale;
  }
};

// Stamp one glyph; the box follows from placement arithmetic alone:
// (x, y, x + 5*scale, y + 7*scale), half-open.
inline CharBox stamp_glyph(ImageBuf& img, char c, int y, int x, int scale,
                           const std::array<double, 3>& fg,
                           ImageBuf* mask = nullptr) {
  const int gi = detail::charset_index(c);
  const CharBox box{x, y, x + kGlyphW * scale, y + kGlyphH * scale};
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > img.width || box.y1 > img.height)
    throw LayoutError("glyph box leaves the image");
  for (int gy = 0; gy < kGlyphH; ++gy)
    for (int gx = 0; gx < kGlyphW; ++gx) {
      if (detail::kFont[gi][gy][gx] != '#') continue;
      for (int sy = 0; sy < scale; ++sy)
        for (int sx = 0; sx < scale; ++sx) {
          const int py = y + gy * scale + sy;
          const int px = x + gx * scale + sx;
          for (int ch = 0; ch < img.channels; ++ch)
            img.data[img.idx(py, px, ch)] = fg[std::size_t(ch)];
          if (mask) mask->data[mask->idx(py, px, 0)] = 1.0;
        }
    }
  return box;
}

// Render one word. All sampling comes from the given seed in a fixed draw
// order (scale, colors, vertical offset, margin, gaps, noise), so a
// (word, cfg, seed) triple is bitwise reproducible.
inline SyntheticSample render_word(const std::string& word,
                                   const SynthConfig& cfg,
                                   std::uint64_t seed) {
  cfg.validate();
  if (word.empty()) throw ConfigError("render_word: empty word");
  for (char c : word) detail::charset_index(c);

  Rng rng(seed);
  const int len = int(word.size());

  int scale;
  if (cfg.fixed_layout) {
    scale = 2;
    if (SynthConfig::min_word_width(len, scale) > cfg.image_w)
      throw LayoutError("render_word: '" + word + "' does not fit at scale " +
                        std::to_string(scale));
  } else {
    const bool fits2 = SynthConfig::min_word_width(len, 2) <= cfg.image_w;
    const bool fits3 = SynthConfig::min_word_width(len, 3) <= cfg.image_w &&
                       cfg.image_h >= kGlyphH * 3 + 2;
    if (!fits2 && !fits3)
      throw LayoutError("render_word: '" + word + "' does not fit");
    scale = fits3 ? (fits2 ? int(2 + rng.below(2)) : 3) : 2;
  }

  std::array<double, 3> bg{}, fg{};
  for (int i = 0; i < 3; ++i) bg[std::size_t(i)] = rng.uniform(cfg.bg_lo, cfg.bg_hi);
  auto gray = [](const std::array<double, 3>& c) {
    return (c[0] + c[1] + c[2]) / 3.0;
  };
  bool ok = false;
  for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
    for (int i = 0; i < 3; ++i)
      fg[std::size_t(i)] = rng.uniform(cfg.fg_lo, cfg.fg_hi);
    ok = std::abs(gray(fg) - gray(bg)) >= cfg.min_contrast;
  }
  if (!ok)
    throw ConfigError("render_word: color ranges cannot reach the contrast "
                      "floor");

  const int base_y = (cfg.image_h - kGlyphH * scale) / 2;
  int y0 = base_y;
  int x = 2;
  int slack = cfg.image_w - SynthConfig::min_word_width(len, scale);
  if (!cfg.fixed_layout) {
    const int jitter = std::min(2, base_y);
    y0 = base_y + int(rng.uniform_int(-jitter, jitter));
    const int lead = int(rng.below(std::uint64_t(slack / 2 + 1)));
    x += lead;
    slack -= lead;
  }

  SyntheticSample s;
  s.seed = seed;
  s.word = word;
  s.image = ImageBuf::make(cfg.image_h, cfg.image_w, 3);
  for (int py = 0; py < cfg.image_h; ++py)
    for (int px = 0; px < cfg.image_w; ++px)
      for (int ch = 0; ch < 3; ++ch)
        s.image.data[s.image.idx(py, px, ch)] = bg[std::size_t(ch)];

  for (int i = 0; i < len; ++i) {
    ImageBuf* mask = nullptr;
    if (cfg.make_masks) {
      s.char_masks.push_back(ImageBuf::make(cfg.image_h, cfg.image_w, 1));
      mask = &s.char_masks.back();
    }
    s.char_boxes.push_back(
        stamp_glyph(s.image, word[std::size_t(i)], y0, x, scale, fg, mask));
    x += kGlyphW * scale;
    if (i + 1 < len) {
      int gap = scale;
      if (!cfg.fixed_layout && slack > 0) {
        const int extra = int(rng.below(std::uint64_t(
            std::min(slack, scale) + 1)));
        gap += extra;
        slack -= extra;
      }
      x += gap;
    }
  }

  if (cfg.noise_std > 0)
    for (double& v : s.image.data)
      v = std::clamp(v + rng.gaussian(0.0, cfg.noise_std), 0.0, 1.0);
  return s;
}

// n samples with independent derived seeds: sample i draws its word from
// sub_seed(seed, kStreamSynth, 2i) and renders from
// sub_seed(seed, kStreamSynth, 2i+1).
inline std::vector<SyntheticSample> make_dataset(int n,
                                                 const SynthConfig& cfg,
                                                 std::uint64_t seed) {
  if (n < 1) throw ConfigError("make_dataset: n must be >= 1");
  cfg.validate();
  std::vector<SyntheticSample> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    Rng word_rng(sub_seed(seed, kStreamSynth, 2 * std::uint64_t(i)));
    const int len =
        int(word_rng.uniform_int(std::int64_t(cfg.len_lo),
                                 std::int64_t(cfg.len_hi)));
    std::string word;
    for (int k = 0; k < len; ++k)
      word.push_back(kCharset[word_rng.below(kCharsetSize)]);
    out.push_back(render_word(
        word, cfg, sub_seed(seed, kStreamSynth, 2 * std::uint64_t(i) + 1)));
  }
  return out;
}

// PPM files plus a JSON-lines manifest (index, word, seed, boxes) under
// dir. Returns the manifest path.
inline std::string write_dataset(const std::vector<SyntheticSample>& samples,
                                 const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string manifest_path = dir + "/manifest.jsonl";
  std::ofstream manifest(manifest_path);
  if (!manifest)
    throw IoError("write_dataset: cannot write '" + manifest_path + "'");
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample-%05zu.ppm", i);
    write_pnm(samples[i].image, dir + "/" + name);
    nlohmann::json row;
    row["index"] = i;
    row["file"] = name;
    row["word"] = samples[i].word;
    row["seed"] = samples[i].seed;
    nlohmann::json boxes = nlohmann::json::array();
    for (const CharBox& b : samples[i].char_boxes)
      boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    row["boxes"] = boxes;
    manifest << row.dump() << "\n";
  }
  manifest.flush();
  if (!manifest)
    throw IoError("write_dataset: writing '" + manifest_path + "' failed");
  return manifest_path;
}

struct DatasetEntry {
  std::string file;
  std::string word;
  std::uint64_t seed = 0;
  std::vector<CharBox> boxes;
  ImageBuf image;
};

// Read back a write_dataset directory (manifest + images).
inline std::vector<DatasetEntry> load_dataset(const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.jsonl";
  std::ifstream manifest(manifest_path);
  if (!manifest)
    throw IoError("load_dataset: cannot open '" + manifest_path + "'");
  std::vector<DatasetEntry> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded())
      throw IoError("load_dataset: bad manifest line in '" + manifest_path +
                    "'");
    DatasetEntry e;
    e.file = row.at("file").get<std::string>();
    e.word = row.at("word").get<std::string>();
    e.seed = row.at("seed").get<std::uint64_t>();
    for (const auto& b : row.at("boxes"))
      e.boxes.push_back(
          CharBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                  b.at(3).get<int>()});
    e.image = read_pnm(dir + "/" + e.file);
    out.push_back(std::move(e));
  }
  return out;
}

// Directory of PPM/PGM crops, resized to the model geometry. Files load in
// lexicographic order.
inline std::vector<ImageBuf> load_external(const std::string& dir,
                                           int target_h = 32,
                                           int target_w = 128) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IoError("load_external: '" + dir + "' is not a directory");
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<ImageBuf> out;
  out.reserve(paths.size());
  for (const std::string& p : paths)
    out.push_back(to_rgb(resize_bilinear(read_pnm(p), target_h, target_w)));
  return out;
}

}  // namespace mms

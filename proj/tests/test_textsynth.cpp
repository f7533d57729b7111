// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mms/textsynth.hpp"

using namespace mms;

namespace {

int glyph_pixels(char c) {
  const int gi = detail::charset_index(c);
  int n = 0;
  for (int y = 0; y < kGlyphH; ++y)
    for (int x = 0; x < kGlyphW; ++x)
      if (detail::kFont[gi][y][x] == '#') ++n;
  return n;
}

bool inside(const CharBox& b, int x, int y) {
  return x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
}

double gray_at(const ImageBuf& img, int y, int x) {
  double g = 0;
  for (int c = 0; c < img.channels; ++c) g += img.data[img.idx(y, x, c)];
  return g / img.channels;
}

}  // namespace

TEST_CASE("font table is well formed and unambiguous", "[textsynth]") {
  std::set<std::string> flat;
  for (int gi = 0; gi < kCharsetSize; ++gi) {
    std::string key;
    int set_pixels = 0;
    for (int y = 0; y < kGlyphH; ++y) {
      const char* row = detail::kFont[gi][y];
      REQUIRE(std::strlen(row) == std::size_t(kGlyphW));
      for (int x = 0; x < kGlyphW; ++x) {
        REQUIRE((row[x] == '#' || row[x] == ' '));
        if (row[x] == '#') ++set_pixels;
      }
      key += row;
    }
    REQUIRE(set_pixels >= 5);
    flat.insert(key);
  }
  REQUIRE(flat.size() == std::size_t(kCharsetSize));

  REQUIRE(detail::charset_index('A') == 0);
  REQUIRE(detail::charset_index('Z') == 25);
  REQUIRE(detail::charset_index('0') == 26);
  REQUIRE(detail::charset_index('9') == 35);
  REQUIRE_THROWS_AS(detail::charset_index('a'), ConfigError);
  REQUIRE_THROWS_AS(detail::charset_index('?'), ConfigError);
}

TEST_CASE("glyph placement arithmetic", "[textsynth]") {
  ImageBuf img = ImageBuf::make(32, 128, 3, 1.0);
  ImageBuf mask = ImageBuf::make(32, 128, 1);
  const CharBox box = stamp_glyph(img, 'A', 8, 10, 2, {0.0, 0.0, 0.0}, &mask);

  REQUIRE(box == CharBox{10, 8, 10 + 2 * 5, 8 + 2 * 7});
  REQUIRE(box == CharBox{10, 8, 20, 22});

  // every lit pixel sits inside the box, scaled pixel count matches
  double lit = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 128; ++x)
      if (mask.data[mask.idx(y, x, 0)] != 0.0) {
        lit += 1;
        REQUIRE(inside(box, x, y));
        REQUIRE(img.data[img.idx(y, x, 0)] == 0.0);
      } else {
        REQUIRE(img.data[img.idx(y, x, 0)] == 1.0);
      }
  REQUIRE(lit == 4 * glyph_pixels('A'));

  ImageBuf small = ImageBuf::make(16, 16, 3, 1.0);
  REQUIRE_THROWS_AS(stamp_glyph(small, 'W', 4, 8, 2, {0, 0, 0}),
                    LayoutError);
  REQUIRE_THROWS_AS(stamp_glyph(small, 'W', -1, 0, 2, {0, 0, 0}),
                    LayoutError);
}

TEST_CASE("render_word is bitwise deterministic in its seed", "[textsynth]") {
  SynthConfig cfg;
  const SyntheticSample a = render_word("HELLO", cfg, 42);
  const SyntheticSample b = render_word("HELLO", cfg, 42);
  REQUIRE(a.image.data == b.image.data);
  REQUIRE(a.char_boxes == b.char_boxes);
  REQUIRE(a.char_masks.size() == b.char_masks.size());
  for (std::size_t i = 0; i < a.char_masks.size(); ++i)
    REQUIRE(a.char_masks[i].data == b.char_masks[i].data);
  REQUIRE(a.seed == 42);

  const SyntheticSample c = render_word("HELLO", cfg, 43);
  REQUIRE(a.image.data != c.image.data);

  cfg.noise_std = 0.0;
  const SyntheticSample d = render_word("HELLO", cfg, 42);
  const SyntheticSample e = render_word("HELLO", cfg, 42);
  REQUIRE(d.image.data == e.image.data);
}

TEST_CASE("rendered samples satisfy the structural contract", "[textsynth]") {
  SynthConfig cfg;
  cfg.noise_std = 0.0;  // exact fg/bg readback

  const std::vector<std::string> words = {"CAT", "MMS", "Q7",
                                          "WXYZ09", "ABCDEFGHIJ"};
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    for (const std::string& word : words) {
      if (word.size() < std::size_t(cfg.len_lo)) continue;
      const SyntheticSample s = render_word(word, cfg, seed);
      REQUIRE(s.word == word);
      REQUIRE(s.char_boxes.size() == word.size());
      REQUIRE(s.char_masks.size() == word.size());

      const int scale = (s.char_boxes[0].y1 - s.char_boxes[0].y0) / kGlyphH;
      REQUIRE((scale == 2 || scale == 3));

      for (std::size_t i = 0; i < s.char_boxes.size(); ++i) {
        const CharBox& b = s.char_boxes[i];
        REQUIRE(b.x0 >= 0);
        REQUIRE(b.y0 >= 0);
        REQUIRE(b.x1 <= cfg.image_w);
        REQUIRE(b.y1 <= cfg.image_h);
        REQUIRE(b.x1 - b.x0 == kGlyphW * scale);
        REQUIRE(b.y1 - b.y0 == kGlyphH * scale);
        if (i > 0) REQUIRE(b.x0 >= s.char_boxes[i - 1].x1 + scale);

        // masks live strictly inside their own box
        const ImageBuf& m = s.char_masks[i];
        double lit = 0;
        for (int y = 0; y < cfg.image_h; ++y)
          for (int x = 0; x < cfg.image_w; ++x)
            if (m.data[m.idx(y, x, 0)] != 0.0) {
              lit += 1;
              REQUIRE(inside(b, x, y));
            }
        REQUIRE(lit ==
                double(scale * scale) * glyph_pixels(word[i]));
      }

      // zero noise: glyph pixels share one fg color, everything outside
      // every box shares one bg color, and the contrast floor holds
      const double fg = gray_at(
          s.image, s.char_boxes[0].y0,
          [&] {
            const ImageBuf& m = s.char_masks[0];
            for (int x = s.char_boxes[0].x0; x < s.char_boxes[0].x1; ++x)
              if (m.data[m.idx(s.char_boxes[0].y0, x, 0)] != 0.0) return x;
            return s.char_boxes[0].x0;
          }());
      const double bg = gray_at(s.image, 0, 0);
      REQUIRE(std::abs(fg - bg) >= cfg.min_contrast);

      for (int y = 0; y < cfg.image_h; ++y)
        for (int x = 0; x < cfg.image_w; ++x) {
          bool in_any = false;
          for (const CharBox& b : s.char_boxes) in_any |= inside(b, x, y);
          if (!in_any) REQUIRE(gray_at(s.image, y, x) == bg);
        }
    }
  }
}

TEST_CASE("layout and config failures are loud", "[textsynth]") {
  SynthConfig cfg;
  REQUIRE_THROWS_AS(render_word("ABCDEFGHIJK", cfg, 1), LayoutError);
  REQUIRE_THROWS_AS(render_word("", cfg, 1), ConfigError);
  REQUIRE_THROWS_AS(render_word("hello", cfg, 1), ConfigError);

  // ten characters only fit at scale 2
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const SyntheticSample s = render_word("ABCDEFGHIJ", cfg, seed);
    REQUIRE(s.char_boxes[0].y1 - s.char_boxes[0].y0 == 2 * kGlyphH);
    REQUIRE(s.char_boxes.back().x1 <= cfg.image_w);
  }

  SynthConfig bad = cfg;
  bad.len_hi = 12;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.fg_hi = 1.5;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.len_lo = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.noise_std = -0.1;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  SynthConfig flat = cfg;
  flat.fg_lo = flat.fg_hi = flat.bg_lo = flat.bg_hi = 0.5;
  REQUIRE_THROWS_AS(render_word("ABC", flat, 7), ConfigError);
}

TEST_CASE("fixed layout pins geometry while colors vary", "[textsynth]") {
  SynthConfig cfg;
  cfg.fixed_layout = true;

  const SyntheticSample a = render_word("MASK", cfg, 1);
  const SyntheticSample b = render_word("MASK", cfg, 999);
  REQUIRE(a.char_boxes == b.char_boxes);
  REQUIRE(a.image.data != b.image.data);

  const int y0 = (cfg.image_h - kGlyphH * 2) / 2;
  for (std::size_t i = 0; i < a.char_boxes.size(); ++i) {
    const CharBox& box = a.char_boxes[i];
    REQUIRE(box.y0 == y0);
    REQUIRE(box.x0 == 2 + int(i) * (kGlyphW * 2 + 2));
    REQUIRE(box.x1 - box.x0 == kGlyphW * 2);
  }

  REQUIRE_THROWS_AS(render_word("ABCDEFGHIJK", cfg, 1), LayoutError);
}

TEST_CASE("make_dataset derives independent per-sample seeds", "[textsynth]") {
  SynthConfig cfg;
  const std::vector<SyntheticSample> ds = make_dataset(16, cfg, 7);
  REQUIRE(ds.size() == 16);

  std::set<std::uint64_t> seeds;
  for (const SyntheticSample& s : ds) {
    REQUIRE(s.word.size() >= std::size_t(cfg.len_lo));
    REQUIRE(s.word.size() <= std::size_t(cfg.len_hi));
    seeds.insert(s.seed);
  }
  REQUIRE(seeds.size() == 16);

  const std::vector<SyntheticSample> again = make_dataset(16, cfg, 7);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    REQUIRE(ds[i].word == again[i].word);
    REQUIRE(ds[i].image.data == again[i].image.data);
  }

  // prefix property: the first k samples do not depend on n
  const std::vector<SyntheticSample> prefix = make_dataset(4, cfg, 7);
  for (std::size_t i = 0; i < prefix.size(); ++i)
    REQUIRE(prefix[i].image.data == ds[i].image.data);

  REQUIRE_THROWS_AS(make_dataset(0, cfg, 7), ConfigError);
}

TEST_CASE("dataset round trip through manifest and ppm", "[textsynth]") {
  namespace fs = std::filesystem;
  const std::string dir = "synth_ds";
  fs::remove_all(dir);

  SynthConfig cfg;
  const std::vector<SyntheticSample> ds = make_dataset(8, cfg, 3);
  const std::string manifest = write_dataset(ds, dir);
  REQUIRE(fs::exists(manifest));

  std::ifstream mf(manifest);
  std::string line;
  int lines = 0;
  while (std::getline(mf, line))
    if (!line.empty()) ++lines;
  REQUIRE(lines == 8);

  const std::vector<DatasetEntry> back = load_dataset(dir);
  REQUIRE(back.size() == 8);
  for (std::size_t i = 0; i < back.size(); ++i) {
    REQUIRE(back[i].word == ds[i].word);
    REQUIRE(back[i].seed == ds[i].seed);
    REQUIRE(back[i].boxes == ds[i].char_boxes);
    REQUIRE(back[i].image.height == 32);
    REQUIRE(back[i].image.width == 128);
    REQUIRE(back[i].image.channels == 3);
    // ppm quantizes to 8 bits; the loader must match to within half a step
    for (std::size_t k = 0; k < back[i].image.data.size(); ++k)
      REQUIRE(std::abs(back[i].image.data[k] - ds[i].image.data[k]) <=
              0.5 / 255.0 + 1e-12);
  }

  REQUIRE_THROWS_AS(load_dataset("no_such_dir"), IoError);
}

TEST_CASE("first letters are uniform across the charset", "[textsynth]") {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  const int n = 10000;
  const std::vector<SyntheticSample> ds = make_dataset(n, cfg, 2026);

  std::map<char, int> counts;
  for (const SyntheticSample& s : ds) counts[s.word[0]] += 1;
  REQUIRE(counts.size() == std::size_t(kCharsetSize));

  const double expected = double(n) / kCharsetSize;
  double chi2 = 0;
  for (const auto& [ch, obs] : counts) {
    const double d = obs - expected;
    chi2 += d * d / expected;
  }
  // chi-square critical value, 35 dof, alpha = 0.001
  REQUIRE(chi2 < 66.62);
}

TEST_CASE("load_external resizes mixed crops to model geometry",
          "[textsynth]") {
  namespace fs = std::filesystem;
  const std::string dir = "external_crops";
  fs::remove_all(dir);
  fs::create_directories(dir);

  write_pnm(ImageBuf::make(16, 64, 3, 0.25), dir + "/b.ppm");
  write_pnm(ImageBuf::make(48, 200, 3, 0.75), dir + "/a.ppm");
  write_pnm(ImageBuf::make(10, 10, 1, 0.5), dir + "/c.pgm");
  std::ofstream(dir + "/notes.txt") << "ignored\n";

  const std::vector<ImageBuf> crops = load_external(dir);
  REQUIRE(crops.size() == 3);
  for (const ImageBuf& img : crops) {
    REQUIRE(img.height == 32);
    REQUIRE(img.width == 128);
    REQUIRE(img.channels == 3);
  }
  // lexicographic order: a.ppm (0.75) before b.ppm (0.25)
  REQUIRE(crops[0].data[0] > 0.5);
  REQUIRE(crops[1].data[0] < 0.5);
  REQUIRE(crops[2].data[0] == Catch::Approx(0.5).margin(0.01));

  REQUIRE_THROWS_AS(load_external(dir + "/missing"), IoError);

  std::ofstream(dir + "/z.ppm") << "P6 trash";
  REQUIRE_THROWS_MATCHES(load_external(dir), IoError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("z.ppm")));
}

// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0

// mms command line tool: synth | mask | pretrain | eval | attn | probe.
// Every subcommand materializes its resolved configuration, input hashes,
// and timestamps into run_manifest.json under --out before doing any work,
// and all data outputs are byte-reproducible from (flags, seed, inputs).
// Exit codes: 0 success, 1 runtime failure, 2 flag/validation error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mms/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// flag/validation problems detected after CLI11 parsing; mapped to exit 2
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string version_line() {
  return std::string("mms ") + kToolVersion + " (checkpoint format " +
         std::string(mms::kCheckpointMagic, 4) + " v" +
         std::to_string(mms::kCheckpointVersion) + ")";
}

// Config files are plain `key = value` lines where each key names a long
// flag of the invoked subcommand ('_' and '-' interchangeable). Blank lines
// and lines starting with '#' or ';' are skipped.
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file not readable: '" + path + "'");
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    std::string key = eq == std::string::npos ? "" : trim(t.substr(0, eq));
    if (key.empty())
      throw UsageError(path + ":" + std::to_string(lineno) +
                       ": expected `key = value`");
    std::string val = trim(t.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
      val = val.substr(1, val.size() - 2);
    for (char& c : key)
      if (c == '_') c = '-';
    kv.emplace_back(std::move(key), std::move(val));
  }
  return kv;
}

// Splices config-file values into the raw args as --key=value right after
// the subcommand token, skipping keys given explicitly so flags always win.
// Unknown keys then fail parsing like any unknown flag would.
std::vector<std::string> splice_config(std::vector<std::string> args) {
  std::size_t sub = 0;
  while (sub < args.size() && !args[sub].empty() && args[sub][0] == '-') ++sub;
  if (sub >= args.size()) return args;

  std::string path;
  for (std::size_t i = sub + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty()) return args;

  const auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    for (std::size_t i = sub + 1; i < args.size(); ++i)
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> spliced;
  for (const auto& [key, val] : read_config_file(path))
    if (!given(key)) spliced.push_back("--" + key + "=" + val);
  args.insert(args.begin() + std::ptrdiff_t(sub) + 1, spliced.begin(),
              spliced.end());
  return args;
}

std::string iso_utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
  return buf;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mms::IoError("cannot open '" + path + "' for hashing");
  std::uint64_t h = mms::fnv1a64(nullptr, 0);
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = mms::fnv1a64(buf, std::size_t(in.gcount()), h);
  return h;
}

// Files hash by content. Directories hash their manifest when they have
// one, otherwise the sorted (name, size) listing.
std::uint64_t hash_input(const std::string& path) {
  if (fs::is_directory(path)) {
    const std::string manifest = path + "/manifest.jsonl";
    if (fs::exists(manifest)) return hash_file(manifest);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file())
        names.push_back(e.path().filename().string() + ":" +
                        std::to_string(fs::file_size(e.path())));
    std::sort(names.begin(), names.end());
    std::uint64_t h = mms::fnv1a64(nullptr, 0);
    for (const std::string& n : names) h = mms::fnv1a64(n.data(), n.size(), h);
    return h;
  }
  return hash_file(path);
}

class RunManifest {
 public:
  // Written (with a null finish time) before any work starts.
  void begin(const std::string& out_dir, const std::string& command,
             json config, const std::vector<std::string>& inputs) {
    fs::create_directories(out_dir);
    path_ = out_dir + "/run_manifest.json";
    j_["tool"] = "mms";
    j_["tool_version"] = kToolVersion;
    j_["checkpoint_format"] = std::string(mms::kCheckpointMagic, 4) + " v" +
                              std::to_string(mms::kCheckpointVersion);
    j_["command"] = command;
    j_["config"] = std::move(config);
    json hashes = json::object();
    for (const std::string& p : inputs) hashes[p] = hex64(hash_input(p));
    j_["input_hashes"] = hashes;
    j_["started_utc"] = iso_utc_now();
    j_["finished_utc"] = nullptr;
    write();
  }

  void finish() {
    j_["finished_utc"] = iso_utc_now();
    write();
  }

 private:
  void write() const {
    std::ofstream out(path_);
    if (!out) throw mms::IoError("cannot write '" + path_ + "'");
    out << j_.dump(2) << "\n";
  }

  json j_;
  std::string path_;
};

mms::ImageBuf demo_image() {
  mms::SynthConfig cfg;
  return mms::render_word("DEMO", cfg, 0).image;
}

// Accept any PPM/PGM and conform it to the model geometry.
mms::ImageBuf load_image_conformed(const std::string& path, int h, int w) {
  mms::ImageBuf img = mms::to_rgb(mms::read_pnm(path));
  if (img.height != h || img.width != w)
    img = mms::resize_bilinear(img, h, w);
  return img;
}

std::vector<mms::SyntheticSample> entries_to_samples(
    std::vector<mms::DatasetEntry> entries) {
  std::vector<mms::SyntheticSample> out;
  out.reserve(entries.size());
  for (mms::DatasetEntry& e : entries) {
    mms::SyntheticSample s;
    s.image = std::move(e.image);
    s.word = std::move(e.word);
    s.char_boxes = std::move(e.boxes);
    s.seed = e.seed;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string config;
  int n = 100;
  std::string out;
  std::uint64_t seed = 0;
  int len_lo = 3, len_hi = 10;
  double noise = 0.02;
  bool fixed_layout = false;
};

int run_synth(const SynthOpts& o) {
  mms::SynthConfig cfg;
  cfg.len_lo = o.len_lo;
  cfg.len_hi = o.len_hi;
  cfg.noise_std = o.noise;
  cfg.fixed_layout = o.fixed_layout;
  cfg.validate();

  RunManifest manifest;
  manifest.begin(o.out, "synth",
                 json{{"config_file", o.config},
                      {"n", o.n},
                      {"seed", o.seed},
                      {"len_lo", o.len_lo},
                      {"len_hi", o.len_hi},
                      {"noise", o.noise},
                      {"fixed_layout", o.fixed_layout},
                      {"out", o.out}},
                 {});
  const auto ds = mms::make_dataset(o.n, cfg, o.seed);
  mms::write_dataset(ds, o.out);
  manifest.finish();
  std::cout << "wrote " << ds.size() << " samples to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// mask

struct MaskOpts {
  std::string config;
  std::string image;
  bool demo = false;
  std::string strategy = "all";
  double ratio = 0.5;
  int span_max = 8;
  std::uint64_t seed = 0;
  std::string out;
};

int run_mask(const MaskOpts& o) {
  if (o.demo == !o.image.empty())
    throw UsageError("mask: pass exactly one of --image or --demo");

  const mms::ModelPreset pr = mms::preset("tiny-desk");
  const mms::ImageBuf img =
      o.demo ? demo_image()
             : load_image_conformed(o.image, pr.image_h, pr.image_w);
  const int gh = pr.grid_h(), gw = pr.grid_w(), p = pr.patch_size;

  RunManifest manifest;
  manifest.begin(o.out, "mask",
                 json{{"config_file", o.config},
                      {"image", o.demo ? "(demo)" : o.image},
                      {"strategy", o.strategy},
                      {"ratio", o.ratio},
                      {"span_max", o.span_max},
                      {"seed", o.seed},
                      {"out", o.out}},
                 o.demo ? std::vector<std::string>{}
                        : std::vector<std::string>{o.image});

  std::vector<std::pair<std::string, mms::MaskSet>> masks;
  const bool all = o.strategy == "all";
  if (all || o.strategy == "random")
    masks.emplace_back("random",
                       mms::random_mask(gh, gw, o.ratio,
                                        mms::branch_seed(o.seed,
                                                         mms::MaskStrategy::random)));
  if (all || o.strategy == "block") {
    mms::BlockConfig bc;
    bc.ratio = o.ratio;
    masks.emplace_back("block",
                       mms::block_mask(gh, gw, bc,
                                       mms::branch_seed(o.seed,
                                                        mms::MaskStrategy::block)));
  }
  if (all || o.strategy == "span") {
    mms::SpanConfig sc;
    sc.ratio = o.ratio;
    sc.max_span = o.span_max;
    masks.emplace_back("span",
                       mms::span_mask(gh, gw, sc,
                                      mms::branch_seed(o.seed,
                                                       mms::MaskStrategy::span)));
  }

  json jmask;
  jmask["grid_h"] = gh;
  jmask["grid_w"] = gw;
  jmask["patch_size"] = p;
  jmask["seed"] = o.seed;
  jmask["masks"] = json::object();
  mms::write_pnm(img, o.out + "/input.ppm");
  for (const auto& [name, mask] : masks) {
    mms::ImageBuf preview = img;
    for (int k : mask.masked) {
      const int r = k / gw, c = k % gw;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            preview.data[preview.idx(r * p + dy, c * p + dx, ch)] = 0.5;
    }
    mms::write_pnm(preview, o.out + "/preview-" + name + ".ppm");
    json jm;
    jm["count"] = mask.count();
    jm["ratio"] = o.ratio;
    jm["masked"] = mask.masked;
    jmask["masks"][name] = jm;
    std::cout << name << ": " << mask.count() << "/" << gh * gw
              << " patches masked\n";
  }
  std::ofstream mf(o.out + "/masks.json");
  if (!mf) throw mms::IoError("cannot write '" + o.out + "/masks.json'");
  mf << jmask.dump(2) << "\n";
  manifest.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOpts {
  std::string config;
  std::string data;
  std::string out;
  std::string preset = "tiny-desk";
  int epochs = 0;
  long long steps = 0;
  int batch = 32;
  double lr = 1e-3;
  long long warmup = 200;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::string resume;
  long long checkpoint_every = 0;
  long long log_every = 1;
};

int run_pretrain(const PretrainOpts& o) {
  mms::TrainConfig cfg;
  cfg.preset = o.preset;
  cfg.epochs = o.epochs;
  cfg.total_steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.base_lr = o.lr;
  cfg.warmup_steps = o.warmup;
  cfg.weight_decay = o.weight_decay;
  cfg.seed = o.seed;
  cfg.out_dir = o.out;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.log_every = o.log_every;

  std::vector<std::string> inputs{o.data};
  if (!o.resume.empty()) inputs.push_back(o.resume);
  RunManifest manifest;
  manifest.begin(o.out, "pretrain",
                 json{{"config_file", o.config},
                      {"data", o.data},
                      {"preset", o.preset},
                      {"epochs", o.epochs},
                      {"steps", o.steps},
                      {"batch", o.batch},
                      {"lr", o.lr},
                      {"warmup", o.warmup},
                      {"weight_decay", o.weight_decay},
                      {"seed", o.seed},
                      {"resume", o.resume},
                      {"checkpoint_every", o.checkpoint_every},
                      {"log_every", o.log_every},
                      {"out", o.out}},
                 inputs);

  if (o.epochs == 0 && o.steps == 0) {
    // boundary run: initial checkpoint plus an empty metrics body
    const mms::MmsParams m = mms::init_params(o.preset, o.seed);
    mms::save_checkpoint(m, o.out + "/model-final.mms");
    std::ofstream metrics(o.out + "/metrics.csv");
    if (!metrics)
      throw mms::IoError("cannot write '" + o.out + "/metrics.csv'");
    metrics << "step,lr,loss_random,loss_block,loss_span,loss_total\n";
    manifest.finish();
    std::cout << "0 steps requested; wrote initial checkpoint to " << o.out
              << "/model-final.mms\n";
    return 0;
  }

  const std::vector<mms::DatasetEntry> entries = mms::load_dataset(o.data);
  const mms::ModelPreset pr = mms::preset(o.preset);
  std::vector<mms::PatchGrid> grids;
  grids.reserve(entries.size());
  for (const mms::DatasetEntry& e : entries)
    grids.push_back(mms::patchify(e.image, pr.patch_size));

  const mms::TrainLog log = mms::train_loop(cfg, grids, o.resume);
  manifest.finish();
  std::cout << "trained " << log.total_steps << " steps; final loss "
            << log.steps.back().loss_total << "\nmodel: " << log.model_path
            << "\nstate: " << log.state_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string config;
  std::string ckpt;
  std::string data;
  std::uint64_t seed = 0;
  std::string out;
  int strips = 4;
};

int run_eval(const EvalOpts& o) {
  RunManifest manifest;
  manifest.begin(o.out, "eval",
                 json{{"config_file", o.config},
                      {"ckpt", o.ckpt},
                      {"data", o.data},
                      {"seed", o.seed},
                      {"strips", o.strips},
                      {"out", o.out}},
                 {o.ckpt, o.data});

  const mms::MmsParams m = mms::load_checkpoint(o.ckpt);
  const auto samples = entries_to_samples(mms::load_dataset(o.data));
  if (samples.empty()) throw mms::ConfigError("eval: dataset is empty");

  const int gh = m.preset.grid_h(), gw = m.preset.grid_w();
  const auto sets =
      mms::build_eval_sets(int(samples.size()), gh, gw, o.seed);
  mms::save_eval_sets(sets, o.out + "/eval_sets.json");

  const mms::EvalReport rep = mms::evaluate_checkpoint(m, samples, sets, o.seed);
  std::ofstream rf(o.out + "/report.json");
  if (!rf) throw mms::IoError("cannot write '" + o.out + "/report.json'");
  rf << rep.to_json().dump(2) << "\n";

  const std::string model_name = fs::path(o.ckpt).stem().string();
  mms::write_psnr_csv(o.out + "/psnr.csv", rep.set_names,
                      {{model_name, rep.psnr_mean}});

  // Fig-8-style strips: original next to the composed reconstruction for
  // the first few samples of each set.
  const int n_strips = std::min<int>(o.strips, int(samples.size()));
  for (const mms::EvalSet& set : sets)
    for (int i = 0; i < n_strips; ++i) {
      const mms::PatchGrid grid =
          mms::patchify(samples[std::size_t(i)].image, m.preset.patch_size);
      const mms::EncodeResult enc =
          mms::encode_visible(m, grid, set.masks[std::size_t(i)]);
      const mms::Tensor recon =
          mms::decode_with_mask_tokens(m, enc, set.masks[std::size_t(i)]);
      const mms::ImageBuf composed =
          mms::compose_reconstruction(grid, recon, set.masks[std::size_t(i)]);
      char name[64];
      std::snprintf(name, sizeof(name), "/recon-%s-%02d.ppm",
                    set.name.c_str(), i);
      mms::write_pnm(composed, o.out + name);
    }

  manifest.finish();
  std::cout << "psnr:";
  for (const std::string& s : rep.set_names)
    std::cout << " " << s << "=" << rep.psnr_mean.at(s);
  std::cout << "\nreport: " << o.out << "/report.json\n";
  return 0;
}

// ---------------------------------------------------------------------------
// attn

struct AttnOpts {
  std::string config;
  std::string ckpt;
  std::string image;
  bool demo = false;
  std::string mode = "cls";
  int patch_index = 0;
  std::string char_mask;
  double tau = 0.6;
  std::string out;
};

int run_attn(const AttnOpts& o) {
  if (o.demo == !o.image.empty())
    throw UsageError("attn: pass exactly one of --image or --demo");
  if (o.mode == "char" && o.char_mask.empty())
    throw UsageError("attn: --mode char requires --char-mask");

  std::vector<std::string> inputs{o.ckpt};
  if (!o.demo) inputs.push_back(o.image);
  if (!o.char_mask.empty()) inputs.push_back(o.char_mask);
  RunManifest manifest;
  manifest.begin(o.out, "attn",
                 json{{"config_file", o.config},
                      {"ckpt", o.ckpt},
                      {"image", o.demo ? "(demo)" : o.image},
                      {"mode", o.mode},
                      {"patch_index", o.patch_index},
                      {"char_mask", o.char_mask},
                      {"tau", o.tau},
                      {"out", o.out}},
                 inputs);

  const mms::MmsParams m = mms::load_checkpoint(o.ckpt);
  const mms::ImageBuf img =
      o.demo ? demo_image()
             : load_image_conformed(o.image, m.preset.image_h,
                                    m.preset.image_w);
  const mms::PatchGrid grid = mms::patchify(img, m.preset.patch_size);

  mms::AttnMap map;
  if (o.mode == "cls") {
    map = mms::attention_cls(m, grid, o.tau);
  } else if (o.mode == "patch") {
    map = mms::attention_patch(m, grid, o.patch_index, o.tau);
  } else {
    mms::ImageBuf cm = mms::read_pnm(o.char_mask);
    if (cm.height != img.height || cm.width != img.width)
      cm = mms::resize_bilinear(cm, img.height, img.width);
    map = mms::attention_char(m, grid, cm, o.tau);
  }

  mms::write_pnm(img, o.out + "/input.ppm");
  mms::write_pnm(map.heatmap, o.out + "/heatmap-" + o.mode + ".pgm");
  if (!map.overlay.data.empty())
    mms::write_pnm(map.overlay, o.out + "/overlay-" + o.mode + ".ppm");

  int kept = 0;
  for (char k : map.kept) kept += k != 0;
  json ja;
  ja["mode"] = o.mode;
  ja["tau"] = o.tau;
  ja["kept_count"] = kept;
  ja["patch_attn"] = map.patch_attn;
  std::vector<int> kept_idx;
  for (std::size_t i = 0; i < map.kept.size(); ++i)
    if (map.kept[i]) kept_idx.push_back(int(i));
  ja["kept"] = kept_idx;
  std::ofstream jf(o.out + "/attn.json");
  if (!jf) throw mms::IoError("cannot write '" + o.out + "/attn.json'");
  jf << ja.dump(2) << "\n";

  manifest.finish();
  std::cout << "kept " << kept << "/" << map.kept.size()
            << " patches at tau=" << o.tau << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeOpts {
  std::string config;
  std::string ckpt;
  bool scratch = false;
  std::string preset = "tiny-desk";
  std::string data;
  std::string test_data;
  int holdout = 0;
  int epochs = 30;
  int batch = 256;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::string out;
};

int run_probe(const ProbeOpts& o) {
  if (o.scratch == !o.ckpt.empty())
    throw UsageError("probe: pass exactly one of --ckpt or --scratch");

  std::vector<std::string> inputs{o.data};
  if (!o.ckpt.empty()) inputs.push_back(o.ckpt);
  if (!o.test_data.empty()) inputs.push_back(o.test_data);
  RunManifest manifest;
  manifest.begin(o.out, "probe",
                 json{{"config_file", o.config},
                      {"ckpt", o.scratch ? "(scratch)" : o.ckpt},
                      {"preset", o.preset},
                      {"data", o.data},
                      {"test_data", o.test_data},
                      {"holdout", o.holdout},
                      {"epochs", o.epochs},
                      {"batch", o.batch},
                      {"lr", o.lr},
                      {"seed", o.seed},
                      {"out", o.out}},
                 inputs);

  const mms::MmsParams m = o.scratch
                               ? mms::init_params(o.preset, o.seed)
                               : mms::load_checkpoint(o.ckpt);

  auto train = entries_to_samples(mms::load_dataset(o.data));
  std::vector<mms::SyntheticSample> test;
  if (!o.test_data.empty()) {
    test = entries_to_samples(mms::load_dataset(o.test_data));
  } else {
    const int n = int(train.size());
    const int h = o.holdout > 0 ? o.holdout : std::max(1, n / 5);
    if (h >= n)
      throw UsageError("probe: holdout leaves no training samples");
    test.assign(train.end() - h, train.end());
    train.resize(std::size_t(n - h));
  }

  mms::ProbeConfig pc;
  pc.epochs = o.epochs;
  pc.batch_size = o.batch;
  pc.lr = o.lr;
  pc.seed = o.seed;

  const mms::ProbeReport rep = mms::probe_train_eval(m, train, test, pc);

  json jr;
  jr["train_accuracy"] = rep.train_accuracy;
  jr["test_accuracy"] = rep.test_accuracy;
  jr["per_column_accuracy"] = rep.per_column_accuracy;
  jr["classes"] = rep.classes;
  jr["encoder_hash_before"] = hex64(rep.encoder_hash_before);
  jr["encoder_hash_after"] = hex64(rep.encoder_hash_after);
  jr["train_samples"] = train.size();
  jr["test_samples"] = test.size();
  std::ofstream jf(o.out + "/probe.json");
  if (!jf) throw mms::IoError("cannot write '" + o.out + "/probe.json'");
  jf << jr.dump(2) << "\n";

  manifest.finish();
  std::cout << "probe accuracy: train=" << rep.train_accuracy
            << " test=" << rep.test_accuracy << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-image-modeling lab for text images"};
  app.set_version_flag("--version", version_line());
  app.require_subcommand(1);

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "generate a word-image dataset");
  synth->add_option("--config", so.config,
                  "config file (key = value; flags win)");
  synth->add_option("--n", so.n, "sample count")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  synth->add_option("--out", so.out, "output directory")->required();
  synth->add_option("--seed", so.seed, "dataset seed")->capture_default_str();
  synth->add_option("--len-lo", so.len_lo, "min word length")
      ->capture_default_str();
  synth->add_option("--len-hi", so.len_hi, "max word length")
      ->capture_default_str();
  synth->add_option("--noise", so.noise, "gaussian pixel noise stddev")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  synth->add_flag("--fixed-layout", so.fixed_layout,
                  "deterministic glyph placement (for probing)");

  MaskOpts mo;
  CLI::App* mask = app.add_subcommand("mask", "render masking previews");
  mask->add_option("--config", mo.config,
                  "config file (key = value; flags win)");
  mask->add_option("--image", mo.image, "input PPM/PGM")
      ->check(CLI::ExistingFile);
  mask->add_flag("--demo", mo.demo, "use the built-in demo image");
  mask->add_option("--strategy", mo.strategy, "random|block|span|all")
      ->capture_default_str()
      ->check(CLI::IsMember({"random", "block", "span", "all"}));
  mask->add_option("--ratio", mo.ratio, "masking ratio")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  mask->add_option("--span-max", mo.span_max, "max span width (columns)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  mask->add_option("--seed", mo.seed, "mask seed")->capture_default_str();
  mask->add_option("--out", mo.out, "output directory")->required();

  PretrainOpts po;
  CLI::App* pretrain = app.add_subcommand("pretrain", "pre-train a model");
  pretrain->add_option("--config", po.config,
                  "config file (key = value; flags win)");
  pretrain->add_option("--data", po.data, "dataset directory (synth output)")
      ->required()
      ->check(CLI::ExistingDirectory);
  pretrain->add_option("--out", po.out, "output directory")->required();
  pretrain->add_option("--preset", po.preset, "model preset")
      ->capture_default_str()
      ->check(CLI::IsMember({"tiny-desk", "vit-tiny"}));
  pretrain->add_option("--epochs", po.epochs, "epochs (0 = use --steps)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  pretrain->add_option("--steps", po.steps, "total steps when --epochs 0")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  pretrain->add_option("--batch", po.batch, "batch size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  pretrain->add_option("--lr", po.lr, "base learning rate")
      ->capture_default_str();
  pretrain->add_option("--warmup", po.warmup, "warmup steps")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  pretrain->add_option("--weight-decay", po.weight_decay, "AdamW weight decay")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  pretrain->add_option("--seed", po.seed, "training seed")
      ->capture_default_str();
  pretrain->add_option("--resume", po.resume, "training state to resume from")
      ->check(CLI::ExistingFile);
  pretrain->add_option("--checkpoint-every", po.checkpoint_every,
                       "periodic state save interval (0 = off)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  pretrain->add_option("--log-every", po.log_every, "metrics row interval")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  EvalOpts eo;
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  eval->add_option("--config", eo.config,
                  "config file (key = value; flags win)");
  eval->add_option("--ckpt", eo.ckpt, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", eo.data, "dataset directory (synth output)")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--seed", eo.seed, "eval-set seed")->capture_default_str();
  eval->add_option("--out", eo.out, "output directory")->required();
  eval->add_option("--strips", eo.strips, "reconstruction strips per set")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);

  AttnOpts ao;
  CLI::App* attn = app.add_subcommand("attn", "dump attention maps");
  attn->add_option("--config", ao.config,
                  "config file (key = value; flags win)");
  attn->add_option("--ckpt", ao.ckpt, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  attn->add_option("--image", ao.image, "input PPM/PGM")
      ->check(CLI::ExistingFile);
  attn->add_flag("--demo", ao.demo, "use the built-in demo image");
  attn->add_option("--mode", ao.mode, "cls|patch|char")
      ->capture_default_str()
      ->check(CLI::IsMember({"cls", "patch", "char"}));
  attn->add_option("--patch-index", ao.patch_index, "query patch for --mode patch")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  attn->add_option("--char-mask", ao.char_mask,
                   "binary char mask image for --mode char")
      ->check(CLI::ExistingFile);
  attn->add_option("--tau", ao.tau, "attention mass threshold")
      ->capture_default_str();
  attn->add_option("--out", ao.out, "output directory")->required();

  ProbeOpts pro;
  CLI::App* probe = app.add_subcommand("probe", "linear-probe a frozen encoder");
  probe->add_option("--config", pro.config,
                  "config file (key = value; flags win)");
  probe->add_option("--ckpt", pro.ckpt, "checkpoint file")
      ->check(CLI::ExistingFile);
  probe->add_flag("--scratch", pro.scratch, "random-init encoder baseline");
  probe->add_option("--preset", pro.preset, "preset for --scratch")
      ->capture_default_str()
      ->check(CLI::IsMember({"tiny-desk", "vit-tiny"}));
  probe->add_option("--data", pro.data, "train dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  probe->add_option("--test-data", pro.test_data, "held-out dataset directory")
      ->check(CLI::ExistingDirectory);
  probe->add_option("--holdout", pro.holdout,
                    "tail samples held out when --test-data is absent "
                    "(0 = n/5)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  probe->add_option("--epochs", pro.epochs, "head training epochs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  probe->add_option("--batch", pro.batch, "samples per head update")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  probe->add_option("--lr", pro.lr, "head learning rate")
      ->capture_default_str();
  probe->add_option("--seed", pro.seed, "probe seed")->capture_default_str();
  probe->add_option("--out", pro.out, "output directory")->required();

  try {
    std::vector<std::string> args = splice_config({argv + 1, argv + argc});
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(synth)) return run_synth(so);
    if (app.got_subcommand(mask)) return run_mask(mo);
    if (app.got_subcommand(pretrain)) return run_pretrain(po);
    if (app.got_subcommand(eval)) return run_eval(eo);
    if (app.got_subcommand(attn)) return run_attn(ao);
    if (app.got_subcommand(probe)) return run_probe(pro);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

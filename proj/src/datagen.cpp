// SPDX-License-Identifier: Apache-2.0
#include "cudkit/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cudkit/colorlab.hpp"
#include "cudkit/png_io.hpp"
#include "cudkit/rng.hpp"

namespace cudkit::datagen {

namespace {

namespace fs = std::filesystem;

struct Color {
  double h, s, v;       // HSV as drawn
  colorlab::Rgb rgb;    // quantized sRGB actually painted
};

Color make_color(double h, double s, double v) {
  colorlab::Rgb rgb = colorlab::hsv_to_rgb_pixel(h, s, v);
  return {h, s, v, {quantize8(rgb.r), quantize8(rgb.g), quantize8(rgb.b)}};
}

double lightness(const colorlab::Rgb& c) {
  return colorlab::lab_lightness_pixel(c.r, c.g, c.b);
}

double sim_lightness(const colorlab::Rgb& c, CvdKind kind) {
  colorlab::Rgb s = colorlab::simulate_cvd_pixel(c.r, c.g, c.b, kind);
  return lightness(s);
}

double gap_normal(const Color& a, const Color& b) {
  return std::abs(lightness(a.rgb) - lightness(b.rgb));
}

double gap_sim(const Color& a, const Color& b, CvdKind kind) {
  return std::abs(sim_lightness(a.rgb, kind) - sim_lightness(b.rgb, kind));
}

// Blocky 5x7 glyph bitmaps; hard-edged shapes keep region means exact.
constexpr const char* kGlyphs[] = {
    "#####"
    "#...."
    "####."
    "....#"
    "....#"
    "#...#"
    ".###.",  // 5
    ".###."
    "#...#"
    "....#"
    "..##."
    "....#"
    "#...#"
    ".###.",  // 3
    "#####"
    "#...."
    "#...."
    "####."
    "#...."
    "#...."
    "#####",  // E
};

std::vector<int> shape_pixels(Rng& rng, int height, int width) {
  std::vector<int> fg;
  int kind = static_cast<int>(rng.below(3));
  if (kind == 0) {  // rectangle
    int rw = static_cast<int>(width * rng.uniform(0.3, 0.6));
    int rh = static_cast<int>(height * rng.uniform(0.3, 0.6));
    int x0 = static_cast<int>(rng.below(static_cast<uint64_t>(width - rw)));
    int y0 = static_cast<int>(rng.below(static_cast<uint64_t>(height - rh)));
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) fg.push_back(y * width + x);
  } else if (kind == 1) {  // disc
    double r = std::min(height, width) * rng.uniform(0.18, 0.32);
    double cx = rng.uniform(r + 1, width - r - 1);
    double cy = rng.uniform(r + 1, height - r - 1);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) fg.push_back(y * width + x);
  } else {  // glyph
    const char* glyph = kGlyphs[rng.below(std::size(kGlyphs))];
    int cell = std::max(1, std::min(height / 9, width / 7));
    int gw = 5 * cell, gh = 7 * cell;
    int x0 = static_cast<int>(rng.below(static_cast<uint64_t>(width - gw)));
    int y0 = static_cast<int>(rng.below(static_cast<uint64_t>(height - gh)));
    for (int gy = 0; gy < 7; ++gy)
      for (int gx = 0; gx < 5; ++gx) {
        if (glyph[gy * 5 + gx] != '#') continue;
        for (int dy = 0; dy < cell; ++dy)
          for (int dx = 0; dx < cell; ++dx)
            fg.push_back((y0 + gy * cell + dy) * width + (x0 + gx * cell + dx));
      }
  }
  return fg;
}

SamplePair assemble(const GenConfig& cfg, uint64_t seed, Rng& rng, const Color& bg,
                    const Color& fg, const Color& bg_tgt, const Color& fg_tgt, bool cud) {
  SamplePair sp;
  sp.meta.seed = seed;
  sp.meta.kind = cfg.kind;
  sp.meta.cud = cud;
  sp.foreground = shape_pixels(rng, cfg.height, cfg.width);
  std::vector<uint8_t> is_fg(static_cast<size_t>(cfg.height) * cfg.width, 0);
  for (int p : sp.foreground) is_fg[p] = 1;
  for (size_t p = 0; p < is_fg.size(); ++p)
    if (!is_fg[p]) sp.background.push_back(static_cast<int>(p));

  auto paint = [&](const Color& back, const Color& fore) {
    RgbImage img(cfg.height, cfg.width);
    for (size_t p = 0; p < is_fg.size(); ++p) {
      const colorlab::Rgb& c = is_fg[p] ? fore.rgb : back.rgb;
      img.data[p * 3] = c.r;
      img.data[p * 3 + 1] = c.g;
      img.data[p * 3 + 2] = c.b;
    }
    return img;
  };
  sp.input = paint(bg, fg);
  sp.target = paint(bg_tgt, fg_tgt);
  sp.meta.gap_normal = gap_normal(bg, fg);
  sp.meta.gap_cvd_input = gap_sim(bg, fg, cfg.kind);
  sp.meta.gap_cvd_target = gap_sim(bg_tgt, fg_tgt, cfg.kind);
  return sp;
}

/// Solve for the V that puts the color's normal-vision L at `want` (L is
/// monotone in V for fixed H,S). Returns false if unreachable at V=1.
bool solve_v_for_lightness(double h, double s, double want, double& v_out) {
  if (lightness(make_color(h, s, 1.0).rgb) < want) return false;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 50; ++it) {
    double mid = 0.5 * (lo + hi);
    if (lightness(make_color(h, s, mid).rgb) < want)
      lo = mid;
    else
      hi = mid;
  }
  v_out = hi;
  return true;
}

}  // namespace

SamplePair gen_pair(uint64_t seed, const GenConfig& cfg) {
  if (cfg.height < 16 || cfg.width < 16)
    throw GenError("gen_pair: size below the 16x16 minimum");
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x1234567);
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    // Red/brown family vs green family; the green side is placed just above
    // the red side in normal-vision L, which is where the simulated gap
    // collapses for protan/deutan vision.
    double h_red = rng.uniform(0.0, 20.0 / 360.0);
    double s_red = rng.uniform(0.8, 1.0);
    double v_red = rng.uniform(0.75, 1.0);
    double h_grn = rng.uniform(95.0 / 360.0, 140.0 / 360.0);
    double s_grn = rng.uniform(0.8, 1.0);
    Color red = make_color(h_red, s_red, v_red);
    double want = lightness(red.rgb) + cfg.normal_gap_min + rng.uniform(0.2, 1.2);
    double v_grn;
    if (!solve_v_for_lightness(h_grn, s_grn, want, v_grn)) continue;
    Color grn = make_color(h_grn, s_grn, v_grn);

    if (gap_normal(red, grn) < cfg.normal_gap_min) continue;
    if (gap_sim(red, grn, cfg.kind) >= cfg.confusable_gap_max) continue;

    bool green_is_fg = rng.below(2) == 0;
    Color bg = green_is_fg ? red : grn;
    Color fg = green_is_fg ? grn : red;

    // Re-separate the pair in simulated vision by scaling S/V of one region.
    const double need = cfg.target_gap_min + cfg.target_margin;
    static constexpr double kVScales[] = {1.12, 1.25, 1.4,  1.6,  1.8, 2.0,
                                          0.88, 0.76, 0.64, 0.52, 0.42, 0.34};
    static constexpr double kSScales[] = {1.0, 0.85, 0.7, 1.15, 1.3};
    for (bool modify_fg : {true, false}) {
      const Color& fixed = modify_fg ? bg : fg;
      const Color& moving = modify_fg ? fg : bg;
      for (double ss : kSScales) {
        for (double vs : kVScales) {
          Color cand = make_color(moving.h, std::min(1.0, moving.s * ss),
                                  std::min(1.0, moving.v * vs));
          if (gap_sim(cand, fixed, cfg.kind) < need) continue;
          Color bg_tgt = modify_fg ? bg : cand;
          Color fg_tgt = modify_fg ? cand : fg;
          return assemble(cfg, seed, rng, bg, fg, bg_tgt, fg_tgt, false);
        }
      }
    }
  }
  throw GenError("gen_pair: rejection budget exhausted (no colors satisfied "
                 "normal gap >= " + std::to_string(cfg.normal_gap_min) +
                 ", simulated gap < " + std::to_string(cfg.confusable_gap_max) +
                 ", target gap >= " +
                 std::to_string(cfg.target_gap_min + cfg.target_margin) + ")");
}

SamplePair gen_cud_pair(uint64_t seed, const GenConfig& cfg) {
  if (cfg.height < 16 || cfg.width < 16)
    throw GenError("gen_cud_pair: size below the 16x16 minimum");
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x7654321);
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Color a = make_color(rng.uniform(0.0, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0));
    Color b = make_color(rng.uniform(0.0, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0));
    if (gap_normal(a, b) < cfg.normal_gap_min) continue;
    if (gap_sim(a, b, cfg.kind) < cfg.target_gap_min) continue;
    SamplePair sp = assemble(cfg, seed, rng, a, b, a, b, true);
    sp.meta.gap_cvd_target = sp.meta.gap_cvd_input;
    return sp;
  }
  throw GenError("gen_cud_pair: rejection budget exhausted (no colors satisfied "
                 "simulated gap >= " + std::to_string(cfg.target_gap_min) + ")");
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifestName = "manifest.tsv";
constexpr const char* kMagic = "cudkit-dataset";

std::string sample_id(size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", index);
  return buf;
}

}  // namespace

DatasetManifest write_dataset(const std::vector<SamplePair>& pairs,
                              const std::vector<std::string>& splits, const std::string& dir) {
  if (pairs.size() != splits.size())
    throw GenError("write_dataset: pairs and splits length mismatch");
  fs::create_directories(dir);
  DatasetManifest mf;
  std::ofstream out(fs::path(dir) / kManifestName);
  if (!out) throw GenError("write_dataset: cannot open manifest in " + dir);
  out << kMagic << '\t' << mf.version << '\n';
  out << "id\tseed\tkind\tsplit\tcud\tinput\ttarget\tmask\tgap_normal\tgap_cvd_input\t"
         "gap_cvd_target\n";
  out.precision(10);
  for (size_t i = 0; i < pairs.size(); ++i) {
    const SamplePair& sp = pairs[i];
    ManifestEntry e;
    e.id = sample_id(i);
    e.seed = sp.meta.seed;
    e.kind = sp.meta.kind;
    e.split = splits[i];
    e.cud = sp.meta.cud;
    e.input_file = e.id + "_input.png";
    e.target_file = e.id + "_target.png";
    e.mask_file = e.id + "_mask.png";
    e.gap_normal = sp.meta.gap_normal;
    e.gap_cvd_input = sp.meta.gap_cvd_input;
    e.gap_cvd_target = sp.meta.gap_cvd_target;

    io::write_png(sp.input, (fs::path(dir) / e.input_file).string());
    io::write_png(sp.target, (fs::path(dir) / e.target_file).string());
    RgbImage mask(sp.input.height, sp.input.width);
    for (int p : sp.foreground)
      for (int c = 0; c < 3; ++c) mask.data[static_cast<size_t>(p) * 3 + c] = 1.0;
    io::write_png(mask, (fs::path(dir) / e.mask_file).string());

    out << e.id << '\t' << e.seed << '\t' << to_string(e.kind) << '\t' << e.split << '\t'
        << (e.cud ? 1 : 0) << '\t' << e.input_file << '\t' << e.target_file << '\t'
        << e.mask_file << '\t' << e.gap_normal << '\t' << e.gap_cvd_input << '\t'
        << e.gap_cvd_target << '\n';
    mf.entries.push_back(std::move(e));
  }
  if (!out) throw GenError("write_dataset: manifest write failed in " + dir);
  return mf;
}

DatasetManifest read_manifest(const std::string& dir) {
  fs::path path = fs::path(dir) / kManifestName;
  std::ifstream in(path);
  if (!in) throw GenError("read_manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw GenError("read_manifest: empty manifest " + path.string());
  {
    std::istringstream hdr(line);
    std::string magic;
    int version = -1;
    hdr >> magic >> version;
    if (magic != kMagic) throw GenError("read_manifest: bad magic in " + path.string());
    if (version != 1)
      throw GenError("read_manifest: unsupported manifest version " + std::to_string(version));
  }
  std::getline(in, line);  // column header
  DatasetManifest mf;
  std::set<uint64_t> seeds;
  size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string kind_s;
    int cud = 0;
    if (!(ls >> e.id >> e.seed >> kind_s >> e.split >> cud >> e.input_file >> e.target_file >>
          e.mask_file >> e.gap_normal >> e.gap_cvd_input >> e.gap_cvd_target))
      throw GenError("read_manifest: malformed entry at line " + std::to_string(lineno) + " of " +
                     path.string());
    e.kind = cvd_kind_from_string(kind_s);
    e.cud = cud != 0;
    if (!seeds.insert(e.seed).second)
      throw GenError("read_manifest: duplicate seed " + std::to_string(e.seed) + " at entry " +
                     e.id);
    mf.entries.push_back(std::move(e));
  }
  return mf;
}

std::vector<SamplePair> read_dataset(const std::string& dir, const std::string& split) {
  DatasetManifest mf = read_manifest(dir);
  std::vector<SamplePair> pairs;
  for (const ManifestEntry& e : mf.entries) {
    if (!split.empty() && e.split != split) continue;
    SamplePair sp;
    try {
      sp.input = io::read_png((fs::path(dir) / e.input_file).string());
      sp.target = io::read_png((fs::path(dir) / e.target_file).string());
      RgbImage mask = io::read_png((fs::path(dir) / e.mask_file).string());
      if (!mask.same_shape(sp.input) || !sp.target.same_shape(sp.input))
        throw GenError("image dimensions disagree");
      for (size_t p = 0; p < mask.pixels(); ++p) {
        if (mask.data[p * 3] > 0.5)
          sp.foreground.push_back(static_cast<int>(p));
        else
          sp.background.push_back(static_cast<int>(p));
      }
    } catch (const std::exception& ex) {
      throw GenError("read_dataset: entry " + e.id + ": " + ex.what());
    }
    sp.meta.seed = e.seed;
    sp.meta.kind = e.kind;
    sp.meta.cud = e.cud;
    sp.meta.gap_normal = e.gap_normal;
    sp.meta.gap_cvd_input = e.gap_cvd_input;
    sp.meta.gap_cvd_target = e.gap_cvd_target;
    pairs.push_back(std::move(sp));
  }
  return pairs;
}

}  // namespace cudkit::datagen

#include "freeflow/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "freeflow/parallel.hpp"
#include "freeflow/rng.hpp"

namespace freeflow {

namespace {

// Seed-stream tags for the independent parts of a render.
constexpr std::uint64_t kTagNoise = 10;
constexpr std::uint64_t kTagJitter = 11;
constexpr std::uint64_t kTagBulge = 12;
constexpr std::uint64_t kTagCross = 13;
constexpr std::uint64_t kTagBackground = 14;
constexpr std::uint64_t kTagLocation = 15;

constexpr std::uint8_t kRoadRgb[3] = {52, 52, 56};
constexpr std::uint8_t kCrossRgb[3] = {96, 96, 100};

constexpr double kBase[5] = {70.0, 60.0, 50.0, 40.0, 30.0};
constexpr double kMult[3] = {1.00, 0.85, 0.70};
constexpr int kLimitOffsets[5] = {-10, -5, 0, 5, 10};

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

int nearest_multiple_of_5(double x) { return 5 * round_half_up(x / 5.0); }

}  // namespace

void SynthSegmentParams::validate() const {
  if (functional_class < 1 || functional_class > 5) {
    throw DomainError("functional_class must be in 1..5");
  }
  if (area_type < 0 || area_type > 2) throw DomainError("area_type must be in 0..2");
  if (!(curvature >= 0.0 && curvature <= 1.0)) {
    throw DomainError("curvature must lie in [0, 1]");
  }
  if (intersections < 0 || intersections > 4) {
    throw DomainError("intersections must be in 0..4");
  }
  bool ok = false;
  for (int v : kLimitOffsets) ok = ok || v == limit_offset_mph;
  if (!ok) throw DomainError("limit_offset_mph must be one of -10, -5, 0, +5, +10");
}

void SynthConfig::validate() const {
  if (n_segments < 1) throw DomainError("n_segments must be at least 1");
  if (county_grid < 2) throw DomainError("county_grid must be at least 2");
  if (!(noise_mph_sd >= 0.0)) throw DomainError("noise_mph_sd must be nonnegative");
  if (chip_px < 16) throw DomainError("chip_px must be at least 16");
}

int oracle_posted_limit(const SynthSegmentParams& params) {
  params.validate();
  double natural = kBase[params.functional_class - 1] * kMult[params.area_type];
  int limit = nearest_multiple_of_5(natural) + params.limit_offset_mph;
  return std::clamp(limit, 15, 70);
}

int oracle_freeflow(const SynthSegmentParams& params, double noise_sd) {
  params.validate();
  if (noise_sd < 0.0) throw DomainError("noise_sd must be nonnegative");
  double natural = kBase[params.functional_class - 1] * kMult[params.area_type];
  double limit = oracle_posted_limit(params);
  double speed = std::min(natural - 20.0 * params.curvature - 4.0 * params.intersections,
                          limit + 7.0);
  if (noise_sd > 0.0) {
    Rng rng(derive_seed(params.render_seed, kTagNoise));
    speed += noise_sd * rng.normal();
  }
  return std::clamp(round_half_up(speed), 5, 79);
}

namespace {

void fill_background(Image8& img, const SynthSegmentParams& params, double s) {
  const int h = img.height;
  const int w = img.width;
  const std::uint64_t bg_seed = derive_seed(params.render_seed, kTagBackground);

  auto speckle = [&](int r, int c, int range) {
    std::uint64_t hash = mix64(bg_seed ^ (static_cast<std::uint64_t>(r) * 0x1f123bb5ull +
                                          static_cast<std::uint64_t>(c)));
    return static_cast<int>(hash % (2 * range + 1)) - range;
  };

  if (params.area_type == 0) {
    // Rural: green speckle.
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        int n = speckle(r, c, 14);
        img.set(r, c, static_cast<std::uint8_t>(std::clamp(88 + n, 0, 255)),
                static_cast<std::uint8_t>(std::clamp(138 + n, 0, 255)),
                static_cast<std::uint8_t>(std::clamp(80 + n, 0, 255)));
      }
    }
    return;
  }

  if (params.area_type == 1) {
    // Suburban: sparse gray blocks on pale green.
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        int n = speckle(r, c, 6);
        img.set(r, c, static_cast<std::uint8_t>(std::clamp(148 + n, 0, 255)),
                static_cast<std::uint8_t>(std::clamp(168 + n, 0, 255)),
                static_cast<std::uint8_t>(std::clamp(136 + n, 0, 255)));
      }
    }
    Rng rng(derive_seed(bg_seed, 1));
    int blocks = static_cast<int>(rng.uniform_int(10, 16));
    for (int b = 0; b < blocks; ++b) {
      int bw = std::max(4, static_cast<int>(std::lround(rng.uniform(10.0, 30.0) * s)));
      int bh = std::max(4, static_cast<int>(std::lround(rng.uniform(10.0, 30.0) * s)));
      int r0 = static_cast<int>(rng.uniform_int(0, std::max(0, h - bh)));
      int c0 = static_cast<int>(rng.uniform_int(0, std::max(0, w - bw)));
      int shade = 158 + static_cast<int>(mix64(bg_seed ^ (b + 77)) % 17);
      for (int r = r0; r < std::min(h, r0 + bh); ++r) {
        for (int c = c0; c < std::min(w, c0 + bw); ++c) {
          img.set(r, c, static_cast<std::uint8_t>(shade),
                  static_cast<std::uint8_t>(shade),
                  static_cast<std::uint8_t>(std::clamp(shade + 4, 0, 255)));
        }
      }
    }
    return;
  }

  // Urban: dense grid of building blocks separated by background streets.
  const int pitch = std::max(8, static_cast<int>(std::lround(34.0 * s)));
  const int street = std::max(1, static_cast<int>(std::lround(4.0 * s)));
  Rng rng(derive_seed(bg_seed, 2));
  int off_r = static_cast<int>(rng.uniform_int(0, pitch - 1));
  int off_c = static_cast<int>(rng.uniform_int(0, pitch - 1));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int pr = (r + off_r) % pitch;
      int pc = (c + off_c) % pitch;
      if (pr < street || pc < street) {
        img.set(r, c, 120, 120, 124);  // background street
      } else {
        std::uint64_t cell = mix64(bg_seed ^ (static_cast<std::uint64_t>((r + off_r) / pitch) *
                                                  0x9e3779b9ull +
                                              static_cast<std::uint64_t>((c + off_c) / pitch)));
        int shade = 146 + static_cast<int>(cell % 21);
        img.set(r, c, static_cast<std::uint8_t>(shade),
                static_cast<std::uint8_t>(shade),
                static_cast<std::uint8_t>(std::clamp(shade + 5, 0, 255)));
      }
    }
  }
}

void draw_main_road(Image8& img, const SynthSegmentParams& params, double s) {
  const int h = img.height;
  const int w = img.width;

  Rng jitter_rng(derive_seed(params.render_seed, kTagJitter));
  int jitter = static_cast<int>(jitter_rng.uniform_int(-2, 2));
  int width224 = 4 + 2 * (5 - params.functional_class) + jitter;
  int width_px = std::max(1, static_cast<int>(std::lround(width224 * s)));

  Rng bulge_rng(derive_seed(params.render_seed, kTagBulge));
  int side = bulge_rng.uniform_int(0, 1) == 0 ? -1 : 1;

  const double cx = (w - 1) / 2.0;
  const double yc = (h - 1) / 2.0;
  const double half_chord = (h - 1) / 2.0;
  const double sagitta = params.curvature * 60.0 * s;

  for (int r = 0; r < h; ++r) {
    double x = cx;
    if (sagitta > 1e-9) {
      double radius = (sagitta * sagitta + half_chord * half_chord) / (2.0 * sagitta);
      double dy = r - yc;
      x = cx + side * (std::sqrt(radius * radius - dy * dy) - (radius - sagitta));
    }
    int c0 = static_cast<int>(std::lround(x - width_px / 2.0));
    for (int c = std::max(0, c0); c < std::min(w, c0 + width_px); ++c) {
      img.set(r, c, kRoadRgb[0], kRoadRgb[1], kRoadRgb[2]);
    }
  }
}

void draw_cross_streets(Image8& img, const SynthSegmentParams& params, double s) {
  if (params.intersections == 0) return;
  const int h = img.height;
  const int w = img.width;
  const int band = std::max(2, static_cast<int>(std::lround(6.0 * s)));
  const int min_gap = std::max(10, static_cast<int>(std::lround(18.0 * s)));

  Rng rng(derive_seed(params.render_seed, kTagCross));
  std::vector<int> centers;
  int attempts = 0;
  while (static_cast<int>(centers.size()) < params.intersections && attempts < 10000) {
    ++attempts;
    int y = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(0.12 * h),
                                             static_cast<std::int64_t>(0.88 * h)));
    bool ok = true;
    for (int existing : centers) ok = ok && std::abs(existing - y) >= min_gap;
    if (ok) centers.push_back(y);
  }
  for (int yc : centers) {
    for (int r = std::max(0, yc - band / 2); r < std::min(h, yc - band / 2 + band); ++r) {
      for (int c = 0; c < w; ++c) {
        img.set(r, c, kCrossRgb[0], kCrossRgb[1], kCrossRgb[2]);
      }
    }
  }
}

}  // namespace

void main_road_color(std::uint8_t rgb[3]) {
  rgb[0] = kRoadRgb[0];
  rgb[1] = kRoadRgb[1];
  rgb[2] = kRoadRgb[2];
}

Image8 render_segment(const SynthSegmentParams& params, int out_px) {
  params.validate();
  if (out_px < 16) throw DomainError("render_segment: out_px must be at least 16");
  const double s = out_px / 224.0;
  Image8 img(out_px, out_px);
  fill_background(img, params, s);
  draw_main_road(img, params, s);
  draw_cross_streets(img, params, s);
  return img;
}

std::uint64_t segment_seed(std::uint64_t master_seed, std::uint64_t index) {
  return master_seed * 1000003ull + index;
}

SynthSegmentParams sample_params(const SynthConfig& config, std::uint64_t index) {
  Rng rng(segment_seed(config.master_seed, index));
  SynthSegmentParams p;
  p.functional_class = static_cast<int>(rng.uniform_int(1, 5));
  p.area_type = static_cast<int>(rng.uniform_int(0, 2));
  p.curvature = rng.uniform();
  p.intersections = static_cast<int>(rng.uniform_int(0, 4));
  p.limit_offset_mph = kLimitOffsets[rng.uniform_int(0, 4)];
  p.render_seed = segment_seed(config.master_seed, index);
  return p;
}

DatasetManifest generate_dataset(const SynthConfig& config,
                                 const std::filesystem::path& out_dir,
                                 int threads) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "chips", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "chips")) {
    throw IoError("cannot create output directory " + (out_dir / "chips").string());
  }

  const int n = config.n_segments;
  const int g = config.county_grid;
  const double cell_m = 1000.0;

  DatasetManifest manifest;
  manifest.rows.resize(static_cast<std::size_t>(n));

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i, int) {
    SynthSegmentParams params = sample_params(config, i);
    Rng rng(derive_seed(segment_seed(config.master_seed, i), kTagLocation));
    int gx = static_cast<int>(rng.uniform_int(0, g - 1));
    int gy = static_cast<int>(rng.uniform_int(0, g - 1));
    double x = (gx + rng.uniform()) * cell_m;
    double y = (gy + rng.uniform()) * cell_m;
    double length = rng.uniform(80.0, 350.0);

    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "seg_%06llu",
                  static_cast<unsigned long long>(i));
    char countybuf[32];
    std::snprintf(countybuf, sizeof(countybuf), "c%d_%d", gx, gy);

    RoadSegment seg;
    seg.id = idbuf;
    seg.county = countybuf;
    seg.geometry = {{x, y}, {x, y + length}};  // travel due north
    seg.metadata.area_type = params.area_type;
    seg.metadata.functional_class = params.functional_class;
    seg.metadata.posted_limit_mph = oracle_posted_limit(params);
    seg.freeflow_mph = oracle_freeflow(params, config.noise_mph_sd);
    seg.chip_path = std::string("chips/") + idbuf + ".png";

    Image8 chip = render_segment(params, config.chip_px);
    write_png(chip, out_dir / *seg.chip_path);

    manifest.rows[i].segment = std::move(seg);
  });

  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace freeflow

#pragma once

#include <cstdint>
#include <filesystem>

#include "freeflow/image.hpp"
#include "freeflow/manifest.hpp"

namespace freeflow {

/// Generative parameters of one synthetic segment. Curvature and intersection
/// count show up only in the imagery; the limit offset shows up only in the
/// metadata (through the posted limit). Area type and functional class show
/// up in both.
struct SynthSegmentParams {
  int functional_class = 1;   // 1..5
  int area_type = 0;          // 0..2
  double curvature = 0.0;     // [0, 1]
  int intersections = 0;      // 0..4
  int limit_offset_mph = 0;   // {-10, -5, 0, +5, +10}
  std::uint64_t render_seed = 0;

  void validate() const;
};

struct SynthConfig {
  int n_segments = 6500;
  int county_grid = 8;        // g x g counties over the synthetic plane
  double noise_mph_sd = 0.0;
  std::uint64_t master_seed = 42;
  int chip_px = 224;

  void validate() const;
};

/// Posted limit implied by the generative rule: the nearest multiple of 5 to
/// base(f) * mult(a), shifted by the limit offset and clamped to [15, 70].
int oracle_posted_limit(const SynthSegmentParams& params);

/// Ground-truth free-flow speed:
///   ff = clamp(round(min(base(f) * mult(a) - 20c - 4n, L + 7) + eta), 5, 79)
/// with base = (70, 60, 50, 40, 30) for f = 1..5, mult = (1.00, 0.85, 0.70)
/// for a = 0..2, and eta ~ N(0, noise_sd) seeded by render_seed (zero when
/// noise_sd is zero).
int oracle_freeflow(const SynthSegmentParams& params, double noise_sd = 0.0);

/// Deterministic overhead rendering of a segment: area-type background, the
/// main road bottom-to-top as a circular arc whose sagitta is proportional to
/// curvature, width coded by functional class with seeded +/-2 px jitter, and
/// `intersections` perpendicular cross streets. The posted limit is not drawn.
Image8 render_segment(const SynthSegmentParams& params, int out_px);

/// Exact RGB of the main road, for geometry checks on rendered chips.
void main_road_color(std::uint8_t rgb[3]);

/// Derivation rule for per-segment seeds: seed_i = master_seed * 1000003 + i.
std::uint64_t segment_seed(std::uint64_t master_seed, std::uint64_t index);

/// Sample the generative parameters for segment `index` (pure).
SynthSegmentParams sample_params(const SynthConfig& config, std::uint64_t index);

/// Generate chips and a manifest under out_dir. Chips land in out_dir/chips,
/// the manifest in out_dir/manifest.jsonl with chip paths relative to out_dir.
DatasetManifest generate_dataset(const SynthConfig& config,
                                 const std::filesystem::path& out_dir,
                                 int threads = 0);

}  // namespace freeflow

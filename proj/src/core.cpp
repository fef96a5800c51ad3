#include "freeflow/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "freeflow/rng.hpp"

namespace freeflow {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

void RoadMetadata::validate() const {
  if (area_type < 0 || area_type > 2) {
    throw DomainError("area_type must be 0 (rural), 1 (suburban) or 2 (urban), got " +
                      std::to_string(area_type));
  }
  if (functional_class < 1 || functional_class > 5) {
    throw DomainError("functional_class must be in 1..5, got " +
                      std::to_string(functional_class));
  }
  if (posted_limit_mph < 5 || posted_limit_mph > 90) {
    throw DomainError("posted_limit_mph must be in [5, 90], got " +
                      std::to_string(posted_limit_mph));
  }
}

void RoadSegment::validate() const {
  if (id.empty()) throw DomainError("segment id must be nonempty");
  if (geometry.size() < 2) {
    throw DomainError("segment " + id + ": geometry needs at least 2 points");
  }
  if (geometry[0].x == geometry[1].x && geometry[0].y == geometry[1].y) {
    throw DomainError("segment " + id + ": first two geometry points coincide");
  }
  if (county.empty()) throw DomainError("segment " + id + ": county must be nonempty");
  if (freeflow_mph < 0) {
    throw DomainError("segment " + id + ": freeflow_mph must be >= 0");
  }
  metadata.validate();
}

SpeedClassMap::SpeedClassMap(std::vector<int> speeds) : speeds_(std::move(speeds)) {
  if (speeds_.empty()) throw DomainError("class map needs at least one speed");
  for (std::size_t i = 1; i < speeds_.size(); ++i) {
    if (speeds_[i] <= speeds_[i - 1]) {
      throw DomainError("class map speeds must be strictly increasing");
    }
  }
}

int SpeedClassMap::speed_to_class(int mph) const {
  auto it = std::lower_bound(speeds_.begin(), speeds_.end(), mph);
  if (it == speeds_.end() || *it != mph) {
    throw DomainError("speed " + std::to_string(mph) + " mph is not in the class map");
  }
  return static_cast<int>(it - speeds_.begin());
}

int SpeedClassMap::class_to_speed(int cls) const {
  if (cls < 0 || cls >= k()) {
    throw DomainError("class index " + std::to_string(cls) + " out of range [0, " +
                      std::to_string(k()) + ")");
  }
  return speeds_[static_cast<std::size_t>(cls)];
}

bool SpeedClassMap::contains(int mph) const {
  return std::binary_search(speeds_.begin(), speeds_.end(), mph);
}

int round_speed(double raw_mph) {
  if (raw_mph < 0.0) {
    throw DomainError("round_speed: speed must be nonnegative, got " +
                      std::to_string(raw_mph));
  }
  // Half-up: floor(x + 0.5).
  return static_cast<int>(std::floor(raw_mph + 0.5));
}

SpeedClassMap build_class_map(const std::vector<int>& labels_mph) {
  if (labels_mph.empty()) {
    throw DomainError("build_class_map: label list must be nonempty");
  }
  std::vector<int> speeds = labels_mph;
  std::sort(speeds.begin(), speeds.end());
  speeds.erase(std::unique(speeds.begin(), speeds.end()), speeds.end());
  return SpeedClassMap(std::move(speeds));
}

SplitAssignment county_split(const std::vector<RoadSegment>& segments,
                             double test_fraction_target,
                             double val_fraction_of_train,
                             std::uint64_t seed) {
  if (segments.empty()) throw DomainError("county_split: no segments");
  if (!(test_fraction_target > 0.0 && test_fraction_target < 1.0)) {
    throw DomainError("county_split: test_fraction_target must be in (0, 1)");
  }
  if (!(val_fraction_of_train >= 0.0 && val_fraction_of_train < 1.0)) {
    throw DomainError("county_split: val_fraction_of_train must be in [0, 1)");
  }

  // County -> segment ids, counties in sorted order for a canonical base order.
  std::map<std::string, std::vector<std::string>> by_county;
  for (const auto& seg : segments) {
    by_county[seg.county].push_back(seg.id);
  }
  if (by_county.size() < 2) {
    throw DomainError("county_split: need at least 2 distinct counties for a "
                      "location-disjoint split, got " +
                      std::to_string(by_county.size()));
  }

  std::vector<std::string> counties;
  counties.reserve(by_county.size());
  for (const auto& [name, ids] : by_county) counties.push_back(name);
  Rng county_rng(derive_seed(seed, 1));
  county_rng.shuffle(counties);

  SplitAssignment split;
  std::size_t total = segments.size();
  std::size_t test_count = 0;
  std::size_t county_idx = 0;
  while (county_idx < counties.size() &&
         static_cast<double>(test_count) / static_cast<double>(total) <
             test_fraction_target) {
    const auto& name = counties[county_idx++];
    split.test_counties.insert(name);
    for (const auto& id : by_county[name]) split.test.insert(id);
    test_count += by_county[name].size();
  }

  // The remaining segments form the training pool, in input order.
  std::vector<std::string> pool;
  pool.reserve(total - test_count);
  for (const auto& seg : segments) {
    if (!split.test_counties.contains(seg.county)) pool.push_back(seg.id);
  }

  auto val_size = static_cast<std::size_t>(
      std::llround(val_fraction_of_train * static_cast<double>(pool.size())));
  Rng val_rng(derive_seed(seed, 2));
  val_rng.shuffle(pool);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i < val_size) {
      split.val.insert(pool[i]);
    } else {
      split.train.insert(pool[i]);
    }
  }
  return split;
}

}  // namespace freeflow

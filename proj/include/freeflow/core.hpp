#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "freeflow/errors.hpp"

namespace freeflow {

std::uint64_t fnv1a64(std::string_view s);

/// 16-char lowercase hex rendering, used for fingerprints.
std::string hex16(std::uint64_t v);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Coarse road attributes: the three integer features fed to the model.
struct RoadMetadata {
  int area_type = 0;         // 0=rural, 1=suburban, 2=urban
  int functional_class = 1;  // 1..5, 1 = highest class
  int posted_limit_mph = 25;

  void validate() const;
};

/// One roadway unit with its ground-truth free-flow label.
struct RoadSegment {
  std::string id;
  std::vector<Point> geometry;  // meters, local projected frame; >= 2 points
  std::string county;
  RoadMetadata metadata;
  int freeflow_mph = 0;
  std::optional<std::string> chip_path;

  void validate() const;
};

/// Bijection between the K discrete integer speeds and class indices.
class SpeedClassMap {
public:
  SpeedClassMap() = default;
  /// `speeds` must be strictly increasing and nonempty.
  explicit SpeedClassMap(std::vector<int> speeds);

  int k() const { return static_cast<int>(speeds_.size()); }
  const std::vector<int>& speeds() const { return speeds_; }

  /// Class index for a speed present in the map; DomainError otherwise.
  int speed_to_class(int mph) const;
  int class_to_speed(int cls) const;
  bool contains(int mph) const;

private:
  std::vector<int> speeds_;
};

struct SplitAssignment {
  std::set<std::string> train;
  std::set<std::string> val;
  std::set<std::string> test;
  std::set<std::string> test_counties;
};

/// Nearest integer, halves round up. Negative input is a DomainError.
int round_speed(double raw_mph);

/// Sorted, deduplicated class map over the given labels. Empty input is a
/// DomainError.
SpeedClassMap build_class_map(const std::vector<int>& labels_mph);

/// County-disjoint split. Whole counties are assigned to the test side in
/// seeded random order until the test segment share first reaches
/// `test_fraction_target`; validation is a seeded uniform sample of
/// round(val_fraction_of_train * pool size) segments from the remainder.
SplitAssignment county_split(const std::vector<RoadSegment>& segments,
                             double test_fraction_target,
                             double val_fraction_of_train,
                             std::uint64_t seed);

}  // namespace freeflow

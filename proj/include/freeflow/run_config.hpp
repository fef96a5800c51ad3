#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "freeflow/errors.hpp"

namespace freeflow {

/// Flat key=value run configuration (a TOML subset: comments, blank lines,
/// dotted bare keys, quoted strings, numbers, booleans — no sections or
/// arrays). Keys are checked against the fixed schema; unknown or duplicate
/// keys are errors, and `seed` must always be present.
class RunConfig {
public:
  /// Parse a file; `overrides` are extra "key=value" entries applied on top.
  static RunConfig load(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});
  /// Parse in-memory text (used by tests and the override path).
  static RunConfig parse(const std::string& text,
                         const std::vector<std::string>& overrides = {});

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Every schema key with its resolved value (defaults filled in), rendered
  /// as a parseable document. A run is reproducible from this text alone.
  std::string render_resolved() const;
  void write_resolved(const std::filesystem::path& path) const;

  /// The full key schema with defaults, as key -> default-value text.
  /// Keys without defaults (seed) map to an empty string.
  static const std::map<std::string, std::string>& schema();

private:
  std::map<std::string, std::string> values_;
};

}  // namespace freeflow

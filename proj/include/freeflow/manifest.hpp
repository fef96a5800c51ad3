#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "freeflow/core.hpp"

namespace freeflow {

enum class Split { train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);

/// One manifest row: a segment plus its optional split assignment.
struct ManifestRow {
  RoadSegment segment;
  std::optional<Split> split;
};

/// JSONL dataset listing. One segment per line, UTF-8, LF line endings.
struct DatasetManifest {
  std::vector<ManifestRow> rows;

  std::vector<RoadSegment> segments() const;
  std::vector<const ManifestRow*> rows_in_split(Split s) const;

  const ManifestRow* find(const std::string& id) const;

  /// Apply a split assignment to the rows; every row id must be covered.
  void assign(const SplitAssignment& split);

  /// FNV-1a over sorted "id:split" entries. Two manifests agree on the split
  /// boundary iff the fingerprints match.
  std::string split_fingerprint() const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

}  // namespace freeflow

#include "freeflow/manifest.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace freeflow {

using ordered_json = nlohmann::ordered_json;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DomainError("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<RoadSegment> DatasetManifest::segments() const {
  std::vector<RoadSegment> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.segment);
  return out;
}

std::vector<const ManifestRow*> DatasetManifest::rows_in_split(Split s) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows) {
    if (r.split && *r.split == s) out.push_back(&r);
  }
  return out;
}

const ManifestRow* DatasetManifest::find(const std::string& id) const {
  for (const auto& r : rows) {
    if (r.segment.id == id) return &r;
  }
  return nullptr;
}

void DatasetManifest::assign(const SplitAssignment& split) {
  for (auto& r : rows) {
    const auto& id = r.segment.id;
    if (split.train.contains(id)) {
      r.split = Split::train;
    } else if (split.val.contains(id)) {
      r.split = Split::val;
    } else if (split.test.contains(id)) {
      r.split = Split::test;
    } else {
      throw DomainError("split assignment does not cover segment " + id);
    }
  }
}

std::string DatasetManifest::split_fingerprint() const {
  std::vector<std::string> entries;
  entries.reserve(rows.size());
  for (const auto& r : rows) {
    entries.push_back(r.segment.id + ":" + (r.split ? split_name(*r.split) : "-"));
  }
  std::sort(entries.begin(), entries.end());
  std::string joined;
  for (const auto& e : entries) {
    joined += e;
    joined += '\n';
  }
  return hex16(fnv1a64(joined));
}

static ManifestRow parse_row(const ordered_json& j, std::size_t line_no) {
  auto ctx = [line_no](const std::string& what) {
    return "manifest line " + std::to_string(line_no) + ": " + what;
  };
  ManifestRow row;
  try {
    row.segment.id = j.at("id").get<std::string>();
    row.segment.county = j.at("county").get<std::string>();
    for (const auto& pt : j.at("geometry")) {
      if (!pt.is_array() || pt.size() != 2) {
        throw DomainError(ctx("geometry entries must be [x, y] pairs"));
      }
      row.segment.geometry.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    row.segment.metadata.area_type = j.at("area_type").get<int>();
    row.segment.metadata.functional_class = j.at("functional_class").get<int>();
    row.segment.metadata.posted_limit_mph = j.at("posted_limit_mph").get<int>();
    row.segment.freeflow_mph = j.at("freeflow_mph").get<int>();
    if (j.contains("chip_path") && !j.at("chip_path").is_null()) {
      row.segment.chip_path = j.at("chip_path").get<std::string>();
    }
    if (j.contains("split") && !j.at("split").is_null()) {
      row.split = parse_split(j.at("split").get<std::string>());
    }
  } catch (const ordered_json::exception& e) {
    throw DomainError(ctx(e.what()));
  }
  try {
    row.segment.validate();
  } catch (const DomainError& e) {
    throw DomainError(ctx(e.what()));
  }
  return row;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const ordered_json::parse_error& e) {
      throw DomainError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    manifest.rows.push_back(parse_row(j, line_no));
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : manifest.rows) {
    ordered_json j;
    j["id"] = r.segment.id;
    j["county"] = r.segment.county;
    auto geom = ordered_json::array();
    for (const auto& p : r.segment.geometry) {
      geom.push_back(ordered_json::array({p.x, p.y}));
    }
    j["geometry"] = std::move(geom);
    j["area_type"] = r.segment.metadata.area_type;
    j["functional_class"] = r.segment.metadata.functional_class;
    j["posted_limit_mph"] = r.segment.metadata.posted_limit_mph;
    j["freeflow_mph"] = r.segment.freeflow_mph;
    if (r.segment.chip_path) j["chip_path"] = *r.segment.chip_path;
    if (r.split) j["split"] = split_name(*r.split);
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

}  // namespace freeflow

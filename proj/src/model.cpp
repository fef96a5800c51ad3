#include "freeflow/model.hpp"

#include <algorithm>
#include <cmath>

namespace freeflow {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::combined: return "combined";
    case Variant::imagery_only: return "imagery_only";
    case Variant::features_only: return "features_only";
  }
  return "combined";
}

Variant parse_variant(const std::string& name) {
  if (name == "combined") return Variant::combined;
  if (name == "imagery_only") return Variant::imagery_only;
  if (name == "features_only") return Variant::features_only;
  throw DomainError("unknown model variant '" + name +
                    "' (expected combined, imagery_only or features_only)");
}

void ModelConfig::validate() const {
  if (backbone_dim < 4 || backbone_dim % 4 != 0) {
    throw DomainError("backbone_dim must be a positive multiple of 4, got " +
                      std::to_string(backbone_dim));
  }
  if (hidden_dim < 1) throw DomainError("hidden_dim must be >= 1");
  if (num_classes < 1) {
    throw DomainError("num_classes must be >= 1 (build the class map first)");
  }
  if (uses_imagery()) {
    if (input_px < 8 || input_px % 8 != 0) {
      throw DomainError(
          "input_px must be a positive multiple of 8 (three pooling stages), "
          "got " + std::to_string(input_px));
    }
  } else if (input_px < 1) {
    throw DomainError("input_px must be >= 1");
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(variant);
  j["backbone_dim"] = backbone_dim;
  j["hidden_dim"] = hidden_dim;
  j["num_classes"] = num_classes;
  j["input_px"] = input_px;
  j["freeze_backbone"] = freeze_backbone;
  j["raw_metadata"] = raw_metadata;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.backbone_dim = j.at("backbone_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.input_px = j.at("input_px").get<int>();
  c.freeze_backbone = j.at("freeze_backbone").get<bool>();
  c.raw_metadata = j.at("raw_metadata").get<bool>();
  c.validate();
  return c;
}

std::string ModelConfig::fingerprint() const {
  return hex16(fnv1a64(to_json().dump()));
}

MetadataStats MetadataStats::compute(const std::vector<RoadMetadata>& train_meta) {
  if (train_meta.empty()) {
    throw DomainError("metadata stats need at least one training segment");
  }
  MetadataStats s;
  auto values = [](const RoadMetadata& m) {
    return std::array<double, 3>{static_cast<double>(m.area_type),
                                 static_cast<double>(m.functional_class),
                                 static_cast<double>(m.posted_limit_mph)};
  };
  s.min_vals = s.max_vals = values(train_meta.front());
  for (const auto& m : train_meta) {
    auto v = values(m);
    for (int i = 0; i < 3; ++i) {
      s.min_vals[i] = std::min(s.min_vals[i], v[i]);
      s.max_vals[i] = std::max(s.max_vals[i], v[i]);
    }
  }
  return s;
}

void MetadataStats::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(min_vals[i] <= max_vals[i])) {
      throw DomainError("metadata stats: min > max for feature " +
                        std::to_string(i));
    }
  }
}

std::array<double, 3> normalize_metadata(const RoadMetadata& meta,
                                         const MetadataStats& stats) {
  stats.validate();
  const std::array<double, 3> raw{static_cast<double>(meta.area_type),
                                  static_cast<double>(meta.functional_class),
                                  static_cast<double>(meta.posted_limit_mph)};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const double lo = stats.min_vals[i];
    const double hi = stats.max_vals[i];
    if (lo == hi) {
      out[i] = 0.0;
    } else {
      out[i] = std::clamp((raw[i] - lo) / (hi - lo), 0.0, 1.0);
    }
  }
  return out;
}

std::array<double, 3> metadata_input(const ModelConfig& config,
                                     const RoadMetadata& meta,
                                     const MetadataStats& stats) {
  if (config.raw_metadata) {
    return {static_cast<double>(meta.area_type),
            static_cast<double>(meta.functional_class),
            static_cast<double>(meta.posted_limit_mph)};
  }
  return normalize_metadata(meta, stats);
}

}  // namespace freeflow

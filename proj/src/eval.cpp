#include "freeflow/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "freeflow/image.hpp"
#include "freeflow/parallel.hpp"

namespace freeflow {

using ordered_json = nlohmann::ordered_json;

Decoder parse_decoder(const std::string& name) {
  if (name == "argmax") return Decoder::argmax;
  if (name == "expected_value") return Decoder::expected_value;
  throw DomainError("unknown decoder '" + name +
                    "' (expected argmax or expected_value)");
}

namespace {

int run_model(const CheckpointData& ckpt, const float* image,
              const RoadMetadata& meta, Decoder decoder, ForwardCache& cache) {
  auto m = metadata_input(ckpt.config, meta, ckpt.stats);
  std::array<float, 3> mf{static_cast<float>(m[0]), static_cast<float>(m[1]),
                          static_cast<float>(m[2])};
  model_forward(ckpt.params, image, mf, cache);
  return decoder == Decoder::argmax ? decode_argmax(cache.probs, ckpt.class_map)
                                    : decode_expected(cache.probs, ckpt.class_map);
}

void chip_to_unit(const Image8& img, std::vector<float>& out) {
  out.resize(img.pixels.size());
  const float inv = 1.0f / 255.0f;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out[i] = static_cast<float>(img.pixels[i]) * inv;
  }
}

void check_chip_shape(const Image8& img, int input_px, const std::string& id) {
  if (img.width != input_px || img.height != input_px) {
    throw DomainError("segment " + id + ": chip is " +
                      std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", model wants " +
                      std::to_string(input_px));
  }
}

}  // namespace

int predict_segment(const CheckpointData& ckpt, const Image8* chip,
                    const RoadMetadata& meta, Decoder decoder) {
  ForwardCache cache;
  if (!ckpt.config.uses_imagery()) {
    return run_model(ckpt, nullptr, meta, decoder, cache);
  }
  if (chip == nullptr) {
    throw DomainError("predict: this model variant needs a chip");
  }
  check_chip_shape(*chip, ckpt.config.input_px, "(direct)");
  std::vector<float> unit;
  chip_to_unit(*chip, unit);
  return run_model(ckpt, unit.data(), meta, decoder, cache);
}

PredictOutcome predict_split(const CheckpointData& ckpt,
                             const DatasetManifest& manifest,
                             const std::filesystem::path& chip_root, Split split,
                             Decoder decoder, int threads) {
  auto rows = manifest.rows_in_split(split);
  const bool need_chips = ckpt.config.uses_imagery();
  const int workers = resolve_threads(threads, rows.size());
  std::vector<ForwardCache> caches(static_cast<std::size_t>(workers));
  std::vector<std::vector<float>> bufs(static_cast<std::size_t>(workers));
  std::vector<std::optional<PredictionRecord>> slots(rows.size());
  std::vector<std::optional<std::string>> errors(rows.size());

  parallel_for(rows.size(), threads, [&](std::size_t i, int w) {
    const auto& seg = rows[i]->segment;
    try {
      const float* img = nullptr;
      if (need_chips) {
        if (!seg.chip_path) throw DomainError("no chip_path in manifest");
        Image8 chip = read_png(chip_root / *seg.chip_path);
        check_chip_shape(chip, ckpt.config.input_px, seg.id);
        chip_to_unit(chip, bufs[w]);
        img = bufs[w].data();
      }
      PredictionRecord rec;
      rec.id = seg.id;
      rec.predicted_mph = run_model(ckpt, img, seg.metadata, decoder, caches[w]);
      rec.true_mph = seg.freeflow_mph;
      rec.posted_limit_mph = seg.metadata.posted_limit_mph;
      rec.variant = variant_name(ckpt.config.variant);
      slots[i] = std::move(rec);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  PredictOutcome out;
  out.records.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (slots[i]) {
      out.records.push_back(std::move(*slots[i]));
    } else {
      out.failures.push_back({rows[i]->segment.id,
                              errors[i] ? *errors[i] : "unknown error"});
    }
  }
  return out;
}

double within_k_accuracy(const std::vector<PredictionRecord>& records, int k) {
  if (records.empty()) {
    throw DomainError("within_k_accuracy: no records");
  }
  if (k < 0) throw DomainError("within_k_accuracy: k must be >= 0");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (std::abs(r.predicted_mph - r.true_mph) <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

std::vector<DiscrepancyRecord> discrepancy_report(
    const std::vector<PredictionRecord>& records, int threshold) {
  std::vector<DiscrepancyRecord> out;
  for (const auto& r : records) {
    const int delta = r.predicted_mph - r.posted_limit_mph;
    if (std::abs(delta) > threshold) {
      out.push_back({r.id, r.predicted_mph, r.posted_limit_mph, delta});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const DiscrepancyRecord& a, const DiscrepancyRecord& b) {
                     return std::abs(a.delta) > std::abs(b.delta);
                   });
  return out;
}

std::vector<VariantRow> compare_variants(
    const DatasetManifest& manifest, const std::filesystem::path& chip_root,
    const std::vector<const CheckpointData*>& checkpoints, Decoder decoder,
    int threads) {
  if (checkpoints.empty()) {
    throw DomainError("compare_variants: no checkpoints given");
  }
  const auto& first = *checkpoints.front();
  for (const auto* c : checkpoints) {
    if (c->class_map.speeds() != first.class_map.speeds()) {
      throw DomainError("compare_variants: checkpoints disagree on the class map");
    }
    if (c->dataset_fingerprint != first.dataset_fingerprint) {
      throw DomainError(
          "compare_variants: checkpoints were trained on different splits");
    }
  }
  if (manifest.split_fingerprint() != first.dataset_fingerprint) {
    throw DomainError(
        "compare_variants: manifest split does not match the checkpoints");
  }
  std::vector<VariantRow> rows;
  for (const auto* c : checkpoints) {
    PredictOutcome outcome =
        predict_split(*c, manifest, chip_root, Split::test, decoder, threads);
    if (!outcome.failures.empty()) {
      throw DomainError("compare_variants: " +
                        std::to_string(outcome.failures.size()) +
                        " segments failed to predict (first: " +
                        outcome.failures.front().id + ": " +
                        outcome.failures.front().reason + ")");
    }
    VariantRow row;
    row.variant = variant_name(c->config.variant);
    row.within5 = within_k_accuracy(outcome.records, 5);
    row.n = outcome.records.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::map<int, std::size_t> label_histogram(const DatasetManifest& manifest,
                                           const std::string& field) {
  std::map<int, std::size_t> hist;
  for (const auto& row : manifest.rows) {
    const auto& seg = row.segment;
    int value = 0;
    if (field == "freeflow_mph") {
      value = seg.freeflow_mph;
    } else if (field == "posted_limit_mph") {
      value = seg.metadata.posted_limit_mph;
    } else if (field == "functional_class") {
      value = seg.metadata.functional_class;
    } else if (field == "area_type") {
      value = seg.metadata.area_type;
    } else {
      throw DomainError("unknown histogram field '" + field +
                        "' (expected freeflow_mph, posted_limit_mph, "
                        "functional_class or area_type)");
    }
    ++hist[value];
  }
  return hist;
}

void write_predictions_csv(const std::vector<PredictionRecord>& records,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,predicted_mph,true_mph,posted_limit_mph\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.predicted_mph << ',' << r.true_mph << ','
        << r.posted_limit_mph << '\n';
  }
  if (!out) throw IoError("short write on " + path.string());
}

void write_comparison_csv(const std::vector<VariantRow>& rows,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,within5,n\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%zu", r.variant.c_str(), r.within5,
                  r.n);
    out << buf << '\n';
  }
  if (!out) throw IoError("short write on " + path.string());
}

void write_histogram_csv(const std::map<int, std::size_t>& hist,
                         const std::string& field,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << field << ",count\n";
  for (const auto& [value, count] : hist) {
    out << value << ',' << count << '\n';
  }
  if (!out) throw IoError("short write on " + path.string());
}

void write_discrepancies_geojson(const std::vector<DiscrepancyRecord>& records,
                                 const DatasetManifest& manifest,
                                 const std::filesystem::path& path) {
  ordered_json features = ordered_json::array();
  for (const auto& r : records) {
    const ManifestRow* row = manifest.find(r.id);
    if (row == nullptr) {
      throw DomainError("discrepancy for unknown segment " + r.id);
    }
    const Point& start = row->segment.geometry.front();
    ordered_json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"},
                     {"coordinates", {start.x, start.y}}};
    f["properties"] = {{"id", r.id},
                       {"predicted_mph", r.predicted_mph},
                       {"posted_limit_mph", r.posted_limit_mph},
                       {"delta", r.delta}};
    features.push_back(std::move(f));
  }
  ordered_json root;
  root["type"] = "FeatureCollection";
  root["features"] = std::move(features);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << root.dump(2) << '\n';
  if (!out) throw IoError("short write on " + path.string());
}

}  // namespace freeflow

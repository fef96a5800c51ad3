#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "freeflow/image.hpp"
#include "freeflow/manifest.hpp"
#include "freeflow/train.hpp"

// Prediction, the within-5 metric, variant comparison tables and posted-limit
// discrepancy reports.
namespace freeflow {

enum class Decoder { argmax, expected_value };

Decoder parse_decoder(const std::string& name);

struct PredictionRecord {
  std::string id;
  int predicted_mph = 0;
  int true_mph = 0;
  int posted_limit_mph = 0;
  std::string variant;
};

struct DiscrepancyRecord {
  std::string id;
  int predicted_mph = 0;
  int posted_limit_mph = 0;
  int delta = 0;  // predicted - posted
};

struct PredictFailure {
  std::string id;
  std::string reason;
};

struct PredictOutcome {
  std::vector<PredictionRecord> records;  // manifest order, failures dropped
  std::vector<PredictFailure> failures;
};

/// One segment through the checkpointed model. `chip` may be null for
/// features_only checkpoints.
int predict_segment(const CheckpointData& ckpt, const Image8* chip,
                    const RoadMetadata& meta, Decoder decoder = Decoder::argmax);

/// Every segment of a split. Chip read or shape problems are collected as
/// per-segment failures; the rest of the batch continues.
PredictOutcome predict_split(const CheckpointData& ckpt,
                             const DatasetManifest& manifest,
                             const std::filesystem::path& chip_root, Split split,
                             Decoder decoder = Decoder::argmax, int threads = 0);

/// Fraction of records with |predicted - true| <= k. Empty input is an error.
double within_k_accuracy(const std::vector<PredictionRecord>& records, int k = 5);

/// Records whose |predicted - posted| strictly exceeds the threshold, stably
/// sorted by |delta| descending.
std::vector<DiscrepancyRecord> discrepancy_report(
    const std::vector<PredictionRecord>& records, int threshold = 10);

struct VariantRow {
  std::string variant;
  double within5 = 0.0;
  std::size_t n = 0;
};

/// Test-split within-5 accuracy for each checkpoint. All checkpoints must
/// share one class map and one split fingerprint, which must also match the
/// manifest.
std::vector<VariantRow> compare_variants(
    const DatasetManifest& manifest, const std::filesystem::path& chip_root,
    const std::vector<const CheckpointData*>& checkpoints,
    Decoder decoder = Decoder::argmax, int threads = 0);

/// Integer-binned counts of one metadata/label field across the manifest.
/// field is one of freeflow_mph, posted_limit_mph, functional_class,
/// area_type.
std::map<int, std::size_t> label_histogram(const DatasetManifest& manifest,
                                           const std::string& field);

void write_predictions_csv(const std::vector<PredictionRecord>& records,
                           const std::filesystem::path& path);
void write_comparison_csv(const std::vector<VariantRow>& rows,
                          const std::filesystem::path& path);
void write_histogram_csv(const std::map<int, std::size_t>& hist,
                         const std::string& field,
                         const std::filesystem::path& path);

/// GeoJSON FeatureCollection: one Point per flagged segment at the start of
/// its geometry, properties mirroring DiscrepancyRecord.
void write_discrepancies_geojson(const std::vector<DiscrepancyRecord>& records,
                                 const DatasetManifest& manifest,
                                 const std::filesystem::path& path);

}  // namespace freeflow

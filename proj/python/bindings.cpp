#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <optional>

#include "freeflow/chipper.hpp"
#include "freeflow/eval.hpp"
#include "freeflow/manifest.hpp"
#include "freeflow/model.hpp"
#include "freeflow/synthgen.hpp"
#include "freeflow/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace freeflow;

namespace {

SynthSegmentParams make_params(int functional_class, int area_type,
                               double curvature, int intersections,
                               int limit_offset_mph, std::uint64_t render_seed) {
  SynthSegmentParams p;
  p.functional_class = functional_class;
  p.area_type = area_type;
  p.curvature = curvature;
  p.intersections = intersections;
  p.limit_offset_mph = limit_offset_mph;
  p.render_seed = render_seed;
  p.validate();
  return p;
}

RoadMetadata make_meta(int area_type, int functional_class,
                       int posted_limit_mph) {
  RoadMetadata m;
  m.area_type = area_type;
  m.functional_class = functional_class;
  m.posted_limit_mph = posted_limit_mph;
  m.validate();
  return m;
}

}  // namespace

PYBIND11_MODULE(_freeflow, m) {
  m.doc() = "Free-flow speed pipeline: synthetic data, chip extraction, "
            "fusion-model training and evaluation.";

  m.def(
      "generate_dataset",
      [](const std::string& out_dir, int n_segments, int county_grid,
         double noise_mph_sd, std::uint64_t seed, int chip_px, int threads) {
        SynthConfig c;
        c.n_segments = n_segments;
        c.county_grid = county_grid;
        c.noise_mph_sd = noise_mph_sd;
        c.master_seed = seed;
        c.chip_px = chip_px;
        std::size_t n;
        {
          py::gil_scoped_release release;
          n = generate_dataset(c, out_dir, threads).rows.size();
        }
        return n;
      },
      py::arg("out_dir"), py::arg("n_segments") = 6500,
      py::arg("county_grid") = 8, py::arg("noise_mph_sd") = 0.0,
      py::arg("seed") = 42, py::arg("chip_px") = 224, py::arg("threads") = 0,
      "Render a synthetic dataset (chips/ + manifest.jsonl) under out_dir; "
      "returns the segment count.");

  m.def(
      "split_dataset",
      [](const std::string& dataset_dir, double test_fraction,
         double val_fraction, std::uint64_t seed) {
        DatasetManifest man = read_manifest(fs::path(dataset_dir) / "manifest.jsonl");
        SplitAssignment a =
            county_split(man.segments(), test_fraction, val_fraction, seed);
        man.assign(a);
        write_manifest(man, fs::path(dataset_dir) / "manifest_split.jsonl");
        py::dict d;
        d["train"] = a.train.size();
        d["val"] = a.val.size();
        d["test"] = a.test.size();
        d["test_counties"] = a.test_counties.size();
        d["fingerprint"] = man.split_fingerprint();
        return d;
      },
      py::arg("dataset_dir"), py::arg("test_fraction") = 0.07,
      py::arg("val_fraction") = 0.01, py::arg("seed") = 42,
      "County-disjoint split; writes manifest_split.jsonl next to the input.");

  m.def(
      "train_model",
      [](const std::string& dataset_dir, const std::string& variant,
         const std::string& checkpoint_out, std::uint64_t seed, int epochs,
         int batch_size, int input_px, int backbone_dim, int hidden_dim,
         double lr0, double l2_scale, int threads, const std::string& log_csv) {
        ModelConfig mc;
        mc.variant = parse_variant(variant);
        mc.input_px = input_px;
        mc.backbone_dim = backbone_dim;
        mc.hidden_dim = hidden_dim;
        TrainConfig tc;
        tc.seed = seed;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.lr0 = lr0;
        tc.l2_scale = l2_scale;
        TrainOptions opts;
        opts.threads = threads;
        if (!log_csv.empty()) opts.log_csv = log_csv;
        int best_epoch;
        double best_acc;
        {
          py::gil_scoped_release release;
          DatasetManifest man =
              read_manifest(fs::path(dataset_dir) / "manifest_split.jsonl");
          TrainResult res = train(man, dataset_dir, mc, tc, opts);
          save_checkpoint(res.best, checkpoint_out);
          best_epoch = res.best_epoch;
          best_acc = res.best_val_within5;
        }
        py::dict d;
        d["best_epoch"] = best_epoch;
        d["best_val_within5"] = best_acc;
        d["checkpoint"] = checkpoint_out;
        return d;
      },
      py::arg("dataset_dir"), py::arg("variant"), py::arg("checkpoint_out"),
      py::arg("seed"), py::arg("epochs") = 15, py::arg("batch_size") = 16,
      py::arg("input_px") = 224, py::arg("backbone_dim") = 64,
      py::arg("hidden_dim") = 512, py::arg("lr0") = 1e-3,
      py::arg("l2_scale") = 5e-5, py::arg("threads") = 0,
      py::arg("log_csv") = std::string(),
      "Train one variant on the split manifest; returns the best epoch and "
      "its validation within-5 accuracy.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& dataset_dir,
         const std::string& split, const std::string& decoder, int threads) {
        double acc;
        std::size_t n, failures;
        {
          py::gil_scoped_release release;
          CheckpointData ckpt = load_checkpoint(checkpoint);
          DatasetManifest man =
              read_manifest(fs::path(dataset_dir) / "manifest_split.jsonl");
          PredictOutcome out =
              predict_split(ckpt, man, dataset_dir, parse_split(split),
                            parse_decoder(decoder), threads);
          acc = within_k_accuracy(out.records, 5);
          n = out.records.size();
          failures = out.failures.size();
        }
        py::dict d;
        d["within5"] = acc;
        d["n"] = n;
        d["failures"] = failures;
        return d;
      },
      py::arg("checkpoint"), py::arg("dataset_dir"), py::arg("split") = "test",
      py::arg("decoder") = "argmax", py::arg("threads") = 0,
      "Within-5 accuracy of a checkpoint on one split.");

  m.def(
      "compare_checkpoints",
      [](const std::string& dataset_dir,
         const std::vector<std::string>& checkpoints, const std::string& decoder,
         int threads) {
        std::vector<VariantRow> rows;
        {
          py::gil_scoped_release release;
          DatasetManifest man =
              read_manifest(fs::path(dataset_dir) / "manifest_split.jsonl");
          std::vector<CheckpointData> loaded;
          for (const auto& p : checkpoints) loaded.push_back(load_checkpoint(p));
          std::vector<const CheckpointData*> ptrs;
          for (const auto& c : loaded) ptrs.push_back(&c);
          rows = compare_variants(man, dataset_dir, ptrs, parse_decoder(decoder),
                                  threads);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["variant"] = r.variant;
          d["within5"] = r.within5;
          d["n"] = r.n;
          out.append(std::move(d));
        }
        return out;
      },
      py::arg("dataset_dir"), py::arg("checkpoints"),
      py::arg("decoder") = "argmax", py::arg("threads") = 0,
      "Test-split within-5 accuracy for each checkpoint.");

  m.def(
      "predict_one",
      [](const std::string& checkpoint, const std::optional<std::string>& chip_png,
         int area_type, int functional_class, int posted_limit_mph,
         const std::string& decoder) {
        CheckpointData ckpt = load_checkpoint(checkpoint);
        RoadMetadata meta = make_meta(area_type, functional_class, posted_limit_mph);
        if (chip_png) {
          Image8 img = read_png(*chip_png);
          return predict_segment(ckpt, &img, meta, parse_decoder(decoder));
        }
        return predict_segment(ckpt, nullptr, meta, parse_decoder(decoder));
      },
      py::arg("checkpoint"), py::arg("chip_png") = std::nullopt,
      py::arg("area_type") = 0, py::arg("functional_class") = 1,
      py::arg("posted_limit_mph") = 25, py::arg("decoder") = "argmax",
      "Predict one segment's free-flow speed in mph.");

  m.def(
      "report_discrepancies",
      [](const std::string& checkpoint, const std::string& dataset_dir,
         const std::string& out_geojson, const std::string& split, int threshold,
         const std::string& decoder, int threads) {
        std::size_t count;
        {
          py::gil_scoped_release release;
          CheckpointData ckpt = load_checkpoint(checkpoint);
          DatasetManifest man =
              read_manifest(fs::path(dataset_dir) / "manifest_split.jsonl");
          PredictOutcome out =
              predict_split(ckpt, man, dataset_dir, parse_split(split),
                            parse_decoder(decoder), threads);
          auto flagged = discrepancy_report(out.records, threshold);
          write_discrepancies_geojson(flagged, man, out_geojson);
          count = flagged.size();
        }
        return count;
      },
      py::arg("checkpoint"), py::arg("dataset_dir"), py::arg("out_geojson"),
      py::arg("split") = "test", py::arg("threshold") = 10,
      py::arg("decoder") = "argmax", py::arg("threads") = 0,
      "Write a GeoJSON of segments whose prediction strays more than "
      "`threshold` mph from the posted limit; returns the flagged count.");

  m.def(
      "label_histogram",
      [](const std::string& manifest_path, const std::string& field) {
        return label_histogram(read_manifest(manifest_path), field);
      },
      py::arg("manifest_path"), py::arg("field"),
      "Integer-binned counts of freeflow_mph, posted_limit_mph, "
      "functional_class or area_type.");

  m.def(
      "extract_chip_png",
      [](const std::string& raster_png, const std::string& out_png, double cx,
         double cy, double heading_rad, double extent_m, int out_px) {
        GeoRaster raster = read_raster(raster_png);
        ChipSpec spec;
        spec.center = {cx, cy};
        spec.heading_rad = heading_rad;
        spec.extent_m = extent_m;
        spec.out_px = out_px;
        write_png(extract_chip(raster, spec), out_png);
      },
      py::arg("raster_png"), py::arg("out_png"), py::arg("cx"), py::arg("cy"),
      py::arg("heading_rad") = 0.0, py::arg("extent_m") = 400.0,
      py::arg("out_px") = 224,
      "Cut one travel-direction-up chip from a georeferenced raster "
      "(PNG + .json sidecar).");

  m.def(
      "oracle_freeflow",
      [](int functional_class, int area_type, double curvature,
         int intersections, int limit_offset_mph, std::uint64_t render_seed,
         double noise_sd) {
        return oracle_freeflow(
            make_params(functional_class, area_type, curvature, intersections,
                        limit_offset_mph, render_seed),
            noise_sd);
      },
      py::arg("functional_class"), py::arg("area_type"),
      py::arg("curvature") = 0.0, py::arg("intersections") = 0,
      py::arg("limit_offset_mph") = 0, py::arg("render_seed") = 0,
      py::arg("noise_sd") = 0.0,
      "Ground-truth free-flow speed of the generative rule.");

  m.def(
      "oracle_posted_limit",
      [](int functional_class, int area_type, int limit_offset_mph) {
        return oracle_posted_limit(
            make_params(functional_class, area_type, 0.0, 0, limit_offset_mph, 0));
      },
      py::arg("functional_class"), py::arg("area_type"),
      py::arg("limit_offset_mph") = 0,
      "Posted speed limit implied by the generative rule.");

  m.attr("__version__") = "0.1.0";
}

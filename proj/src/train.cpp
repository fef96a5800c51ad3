#include "freeflow/train.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "freeflow/chipper.hpp"
#include "freeflow/image.hpp"
#include "freeflow/rng.hpp"

namespace freeflow {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian floats");

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (epochs < 1) throw DomainError("epochs must be >= 1");
  if (!(lr0 > 0.0)) throw DomainError("lr0 must be > 0");
  if (!(decay_factor > 0.0)) throw DomainError("decay_factor must be > 0");
  if (!(decay_epochs > 0.0)) throw DomainError("decay_epochs must be > 0");
  if (l2_scale < 0.0) throw DomainError("l2_scale must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw DomainError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw DomainError("adam_eps must be > 0");
}

double lr_schedule(double epoch_progress, const TrainConfig& config) {
  if (epoch_progress < 0.0 || !std::isfinite(epoch_progress)) {
    throw DomainError("epoch_progress must be finite and >= 0");
  }
  double t = epoch_progress / config.decay_epochs;
  if (config.decay_staircase) t = std::floor(t);
  // Split into whole decay windows and a fractional remainder so that one
  // whole window is always an exact division by the factor.
  const double whole = std::floor(t);
  const double frac = t - whole;
  double lr = config.lr0 * std::pow(config.decay_factor, -frac);
  for (double i = 0; i < whole; i += 1.0) lr /= config.decay_factor;
  return lr;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

static ordered_json stats_to_json(const MetadataStats& s) {
  ordered_json j;
  j["min"] = s.min_vals;
  j["max"] = s.max_vals;
  return j;
}

static MetadataStats stats_from_json(const nlohmann::json& j) {
  MetadataStats s;
  for (int i = 0; i < 3; ++i) {
    s.min_vals[i] = j.at("min").at(i).get<double>();
    s.max_vals[i] = j.at("max").at(i).get<double>();
  }
  s.validate();
  return s;
}

void save_checkpoint(const CheckpointData& ckpt,
                     const std::filesystem::path& path) {
  ordered_json header;
  header["format"] = "ffspeed-checkpoint-v1";
  header["config"] = ckpt.config.to_json();
  header["config_fingerprint"] = ckpt.config.fingerprint();
  header["class_map"] = ckpt.class_map.speeds();
  header["metadata_stats"] = stats_to_json(ckpt.stats);
  header["epoch"] = ckpt.epoch;
  header["seed"] = ckpt.seed;
  header["dataset_fingerprint"] = ckpt.dataset_fingerprint;
  ordered_json tensors = ordered_json::array();
  auto named = named_tensors_of(ckpt.params);
  for (const auto& nt : named) {
    ordered_json t;
    t["name"] = nt.name;
    t["shape"] = nt.tensor->shape;
    tensors.push_back(std::move(t));
  }
  header["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string head = header.dump();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.put('\0');
  for (const auto& nt : named) {
    out.write(reinterpret_cast<const char*>(nt.tensor->ptr()),
              static_cast<std::streamsize>(nt.tensor->numel() * sizeof(float)));
  }
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const std::size_t nul = bytes.find('\0');
  if (nul == std::string::npos) {
    throw IoError("checkpoint " + path.string() + ": missing header terminator");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nul));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": bad header: " + e.what());
  }
  try {
    if (header.at("format").get<std::string>() != "ffspeed-checkpoint-v1") {
      throw IoError("checkpoint " + path.string() + ": unknown format tag");
    }
    CheckpointData ckpt;
    ckpt.config = ModelConfig::from_json(header.at("config"));
    ckpt.class_map =
        SpeedClassMap(header.at("class_map").get<std::vector<int>>());
    ckpt.stats = stats_from_json(header.at("metadata_stats"));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.dataset_fingerprint =
        header.at("dataset_fingerprint").get<std::string>();
    if (ckpt.config.fingerprint() !=
        header.at("config_fingerprint").get<std::string>()) {
      throw IoError("checkpoint " + path.string() +
                    ": config fingerprint mismatch");
    }
    ckpt.params.config = ckpt.config;
    ckpt.params.allocate();
    auto named = ckpt.params.named_tensors();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size()) {
      throw IoError("checkpoint " + path.string() +
                    ": tensor list does not match the model variant");
    }
    std::size_t offset = nul + 1;
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& t = tensors.at(i);
      if (t.at("name").get<std::string>() != named[i].name ||
          t.at("shape").get<std::vector<int>>() != named[i].tensor->shape) {
        throw IoError("checkpoint " + path.string() + ": tensor " +
                      std::string(named[i].name) + " has unexpected name/shape");
      }
      const std::size_t count = named[i].tensor->numel() * sizeof(float);
      if (offset + count > bytes.size()) {
        throw IoError("checkpoint " + path.string() + ": truncated payload");
      }
      std::memcpy(named[i].tensor->ptr(), bytes.data() + offset, count);
      offset += count;
    }
    if (offset != bytes.size()) {
      throw IoError("checkpoint " + path.string() + ": trailing bytes");
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": bad header: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct LoadedSplit {
  std::vector<const ManifestRow*> rows;
  std::vector<Image8> chips;  // empty when the variant ignores imagery
};

LoadedSplit load_split(const DatasetManifest& manifest,
                       const std::filesystem::path& chip_root, Split split,
                       bool need_chips, int input_px, int threads) {
  LoadedSplit out;
  out.rows = manifest.rows_in_split(split);
  if (!need_chips) return out;
  out.chips.resize(out.rows.size());
  parallel_for(out.rows.size(), threads, [&](std::size_t i, int) {
    const auto& seg = out.rows[i]->segment;
    if (!seg.chip_path) {
      throw DomainError("segment " + seg.id + " has no chip_path");
    }
    Image8 img = read_png(chip_root / *seg.chip_path);
    if (img.width != input_px || img.height != input_px) {
      throw DomainError("segment " + seg.id + ": chip is " +
                        std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", model wants " +
                        std::to_string(input_px));
    }
    out.chips[i] = std::move(img);
  });
  return out;
}

void chip_to_unit(const Image8& img, std::vector<float>& out) {
  out.resize(img.pixels.size());
  const float inv = 1.0f / 255.0f;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out[i] = static_cast<float>(img.pixels[i]) * inv;
  }
}

std::string format_row(int epoch, int step, double lr, double loss,
                       const std::string& val) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.6f,%s", epoch, step, lr, loss,
                val.c_str());
  return std::string(buf);
}

}  // namespace

TrainResult train(const DatasetManifest& manifest,
                  const std::filesystem::path& chip_root,
                  ModelConfig model_config, TrainConfig train_config,
                  const TrainOptions& opts) {
  train_config.validate();
  model_config.freeze_backbone =
      model_config.freeze_backbone || train_config.freeze_backbone;

  const bool need_chips = model_config.uses_imagery();
  LoadedSplit tr = load_split(manifest, chip_root, Split::train, need_chips,
                              model_config.input_px, opts.threads);
  LoadedSplit va = load_split(manifest, chip_root, Split::val, need_chips,
                              model_config.input_px, opts.threads);
  if (tr.rows.empty()) throw DomainError("train split is empty");
  if (va.rows.empty()) throw DomainError("validation split is empty");

  std::vector<int> train_mph;
  std::vector<RoadMetadata> train_meta;
  train_mph.reserve(tr.rows.size());
  for (const auto* r : tr.rows) {
    train_mph.push_back(r->segment.freeflow_mph);
    train_meta.push_back(r->segment.metadata);
  }
  SpeedClassMap class_map = build_class_map(train_mph);
  if (model_config.num_classes == 0) {
    model_config.num_classes = class_map.k();
  } else if (model_config.num_classes != class_map.k()) {
    throw DomainError("class-map mismatch: config expects " +
                      std::to_string(model_config.num_classes) +
                      " classes, train split has " +
                      std::to_string(class_map.k()));
  }
  model_config.validate();
  MetadataStats stats = MetadataStats::compute(train_meta);

  std::vector<int> labels_all(tr.rows.size());
  for (std::size_t i = 0; i < tr.rows.size(); ++i) {
    labels_all[i] = class_map.speed_to_class(tr.rows[i]->segment.freeflow_mph);
  }
  std::vector<std::array<float, 3>> meta_all(tr.rows.size());
  for (std::size_t i = 0; i < tr.rows.size(); ++i) {
    auto m = metadata_input(model_config, tr.rows[i]->segment.metadata, stats);
    meta_all[i] = {static_cast<float>(m[0]), static_cast<float>(m[1]),
                   static_cast<float>(m[2])};
  }
  std::vector<std::array<float, 3>> val_meta(va.rows.size());
  for (std::size_t i = 0; i < va.rows.size(); ++i) {
    auto m = metadata_input(model_config, va.rows[i]->segment.metadata, stats);
    val_meta[i] = {static_cast<float>(m[0]), static_cast<float>(m[1]),
                   static_cast<float>(m[2])};
  }

  ModelParams params = init_parameters<float>(model_config, train_config.seed);
  AdamStateT<float> adam = make_adam_state(params);
  ModelParams grads;
  grads.config = model_config;
  grads.allocate();
  BatchGradScratch<float> scratch;

  const std::size_t n_train = tr.rows.size();
  const int batch = train_config.batch_size;
  const int steps_per_epoch =
      static_cast<int>((n_train + static_cast<std::size_t>(batch) - 1) /
                       static_cast<std::size_t>(batch));

  std::ofstream log;
  if (!opts.log_csv.empty()) {
    log.open(opts.log_csv, std::ios::binary);
    if (!log) throw IoError("cannot write training log " + opts.log_csv.string());
    log << "epoch,step,lr,train_loss,val_within5\n";
  }

  std::vector<std::vector<float>> img_bufs(static_cast<std::size_t>(batch));
  std::vector<const float*> img_ptrs(static_cast<std::size_t>(batch));
  std::vector<std::array<float, 3>> batch_meta(static_cast<std::size_t>(batch));
  std::vector<int> batch_labels(static_cast<std::size_t>(batch));

  const int val_workers = resolve_threads(opts.threads, va.rows.size());
  std::vector<ForwardCache> val_caches(static_cast<std::size_t>(val_workers));
  std::vector<std::vector<float>> val_bufs(static_cast<std::size_t>(val_workers));

  TrainResult result;
  double best_acc = -1.0;

  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(train_config.seed, 1000 + epoch));
    shuffle_rng.shuffle(order);

    std::vector<std::string> rows;
    rows.reserve(static_cast<std::size_t>(steps_per_epoch));
    double loss_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::size_t lo = static_cast<std::size_t>(step) * batch;
      const std::size_t hi = std::min(n_train, lo + batch);
      const std::size_t b_actual = hi - lo;
      for (std::size_t j = 0; j < b_actual; ++j) {
        const std::size_t idx = order[lo + j];
        if (need_chips) {
          chip_to_unit(tr.chips[idx], img_bufs[j]);
          img_ptrs[j] = img_bufs[j].data();
        } else {
          img_ptrs[j] = nullptr;
        }
        batch_meta[j] = meta_all[idx];
        batch_labels[j] = labels_all[idx];
      }
      img_ptrs.resize(b_actual);
      batch_meta.resize(b_actual);
      batch_labels.resize(b_actual);

      const double progress =
          static_cast<double>(epoch) +
          static_cast<double>(step) / static_cast<double>(steps_per_epoch);
      const double lr = lr_schedule(progress, train_config);
      const double loss =
          batch_gradient(params, img_ptrs, batch_meta, batch_labels,
                         train_config.l2_scale, opts.threads, grads, scratch);
      adam_step(params, grads, adam, lr, train_config);
      loss_sum += loss;
      rows.push_back(format_row(epoch, step, lr, loss, ""));

      img_ptrs.resize(static_cast<std::size_t>(batch));
      batch_meta.resize(static_cast<std::size_t>(batch));
      batch_labels.resize(static_cast<std::size_t>(batch));
    }

    // Validation within-5 accuracy with argmax decoding.
    std::vector<std::uint8_t> hit(va.rows.size(), 0);
    parallel_for(va.rows.size(), opts.threads, [&](std::size_t i, int w) {
      auto& cache = val_caches[w];
      const float* img = nullptr;
      if (need_chips) {
        chip_to_unit(va.chips[i], val_bufs[w]);
        img = val_bufs[w].data();
      }
      model_forward(params, img, val_meta[i], cache);
      const int pred = decode_argmax(cache.probs, class_map);
      hit[i] = std::abs(pred - va.rows[i]->segment.freeflow_mph) <= 5 ? 1 : 0;
    });
    std::size_t correct = 0;
    for (auto h : hit) correct += h;
    const double acc =
        static_cast<double>(correct) / static_cast<double>(va.rows.size());

    if (!rows.empty()) {
      char valbuf[32];
      std::snprintf(valbuf, sizeof(valbuf), "%.6f", acc);
      std::string& last = rows.back();
      last += valbuf;  // the last step row of the epoch carries val accuracy
    }
    if (log.is_open()) {
      for (const auto& r : rows) log << r << "\n";
      log.flush();
    }

    EpochStat stat;
    stat.epoch = epoch;
    stat.mean_train_loss = loss_sum / steps_per_epoch;
    stat.val_within5 = acc;
    result.epochs.push_back(stat);
    if (opts.progress != nullptr) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "epoch %d/%d  train_loss %.4f  val_within5 %.4f", epoch + 1,
                    train_config.epochs, stat.mean_train_loss, acc);
      (*opts.progress) << line << std::endl;
    }

    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      result.best.params = params;
    }
  }

  result.best_val_within5 = best_acc;
  result.best.config = model_config;
  result.best.class_map = class_map;
  result.best.stats = stats;
  result.best.epoch = result.best_epoch;
  result.best.seed = train_config.seed;
  result.best.dataset_fingerprint = manifest.split_fingerprint();
  return result;
}

}  // namespace freeflow

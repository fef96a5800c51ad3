#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "freeflow/manifest.hpp"
#include "freeflow/model.hpp"
#include "freeflow/parallel.hpp"

// Loss, optimizer, schedule and the epoch loop. The objective is mean
// cross-entropy over the batch plus an L2 penalty on the dense weight
// matrices; optimization is plain Adam with a continuously decaying rate.
namespace freeflow {

struct TrainConfig {
  int batch_size = 16;
  int epochs = 15;
  double lr0 = 1e-3;
  double decay_factor = 10.0;
  double decay_epochs = 5.0;
  bool decay_staircase = false;  // hold the rate within each decay window
  double l2_scale = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-7;
  std::uint64_t seed = 0;
  bool freeze_backbone = false;

  void validate() const;
};

/// lr0 · decay_factor^(−epoch_progress / decay_epochs). Computed so that
/// advancing by exactly decay_epochs divides the rate by decay_factor with
/// no rounding drift.
double lr_schedule(double epoch_progress, const TrainConfig& config);

/// Mean negative log-likelihood; log arguments clamp at 1e-12.
template <typename T>
double cross_entropy(const std::vector<std::vector<T>>& probs,
                     const std::vector<int>& labels) {
  if (probs.size() != labels.size()) {
    throw DomainError("cross_entropy: batch size mismatch");
  }
  if (probs.empty()) {
    throw DomainError("cross_entropy: empty batch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= static_cast<int>(probs[i].size())) {
      throw DomainError("cross_entropy: label " + std::to_string(label) +
                        " out of range");
    }
    const double p =
        std::max(static_cast<double>(probs[i][label]), 1e-12);
    total -= std::log(p);
  }
  return total / static_cast<double>(probs.size());
}

/// Read-only view of a params struct's tensors in canonical order.
template <typename T>
std::vector<NamedTensorRef<T>> named_tensors_of(const ModelParamsT<T>& p) {
  return const_cast<ModelParamsT<T>&>(p).named_tensors();
}

/// l2_scale · Σ w² over the dense weight matrices only — biases and backbone
/// tensors never contribute.
template <typename T>
double l2_penalty(const ModelParamsT<T>& params, double l2_scale) {
  double sum = 0.0;
  for (const auto& nt : named_tensors_of(params)) {
    if (!nt.dense_weight) continue;
    for (const T& w : nt.tensor->data) {
      sum += static_cast<double>(w) * static_cast<double>(w);
    }
  }
  return l2_scale * sum;
}

template <typename T>
struct AdamStateT {
  ModelParamsT<T> m, v;
  long long t = 0;
};

template <typename T>
AdamStateT<T> make_adam_state(const ModelParamsT<T>& params) {
  AdamStateT<T> s;
  s.m.config = params.config;
  s.m.allocate();
  s.v.config = params.config;
  s.v.allocate();
  return s;
}

/// One Adam update. Backbone tensors stay bitwise untouched when either the
/// train config or the model config freezes the backbone. A non-finite
/// gradient aborts before any parameter changes.
template <typename T>
void adam_step(ModelParamsT<T>& params, const ModelParamsT<T>& grads,
               AdamStateT<T>& state, double lr, const TrainConfig& config) {
  auto pts = params.named_tensors();
  auto gts = named_tensors_of(grads);
  auto mts = state.m.named_tensors();
  auto vts = state.v.named_tensors();
  for (std::size_t k = 0; k < gts.size(); ++k) {
    if (!gts[k].tensor->all_finite()) {
      throw DomainError(std::string("non-finite gradient in tensor ") +
                        gts[k].name);
    }
  }
  state.t += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const bool freeze =
      config.freeze_backbone || params.config.freeze_backbone;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (pts[k].backbone && freeze) continue;
    TensorT<T>& theta = *pts[k].tensor;
    const TensorT<T>& g = *gts[k].tensor;
    TensorT<T>& m = *mts[k].tensor;
    TensorT<T>& v = *vts[k].tensor;
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      const double mi = b1 * static_cast<double>(m.data[i]) + (1.0 - b1) * gi;
      const double vi =
          b2 * static_cast<double>(v.data[i]) + (1.0 - b2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double mhat = mi / corr1;
      const double vhat = vi / corr2;
      theta.data[i] = static_cast<T>(static_cast<double>(theta.data[i]) -
                                     lr * mhat /
                                         (std::sqrt(vhat) + config.adam_eps));
    }
  }
}

/// Reusable buffers for batch_gradient.
template <typename T>
struct BatchGradScratch {
  std::vector<ModelParamsT<T>> sample_grads;
  std::vector<ForwardCacheT<T>> caches;
  std::vector<double> losses;
};

/// Forward/backward over one batch. images[i] may be null for variants that
/// ignore imagery. Returns mean cross-entropy + L2 and fills `grads` with
/// the objective's gradient. Per-sample gradients are reduced in sample
/// order, so the result does not depend on the thread count.
template <typename T>
double batch_gradient(const ModelParamsT<T>& params,
                      const std::vector<const T*>& images,
                      const std::vector<std::array<T, 3>>& metas,
                      const std::vector<int>& labels, double l2_scale,
                      int threads, ModelParamsT<T>& grads,
                      BatchGradScratch<T>& scratch) {
  const std::size_t batch = labels.size();
  if (batch == 0) throw DomainError("batch_gradient: empty batch");
  if (images.size() != batch || metas.size() != batch) {
    throw DomainError("batch_gradient: input arrays disagree on batch size");
  }
  const int k = params.config.num_classes;
  if (scratch.sample_grads.size() != batch) {
    ModelParamsT<T> proto;
    proto.config = params.config;
    proto.allocate();
    scratch.sample_grads.assign(batch, proto);
  }
  const int workers = resolve_threads(threads, batch);
  if (static_cast<int>(scratch.caches.size()) < workers) {
    scratch.caches.resize(workers);
  }
  scratch.losses.resize(batch);

  parallel_for(batch, threads, [&](std::size_t i, int w) {
    auto& cache = scratch.caches[w];
    model_forward(params, images[i], metas[i], cache);
    const int label = labels[i];
    if (label < 0 || label >= k) {
      throw DomainError("batch_gradient: label out of range");
    }
    const double p =
        std::max(static_cast<double>(cache.probs[label]), 1e-12);
    scratch.losses[i] = -std::log(p);
    cache.dlogits.resize(k);
    const T inv = static_cast<T>(1.0 / static_cast<double>(batch));
    for (int j = 0; j < k; ++j) {
      const T onehot = j == label ? T(1) : T(0);
      cache.dlogits[j] = (cache.probs[j] - onehot) * inv;
    }
    scratch.sample_grads[i].zero();
    model_backward(params, cache, cache.dlogits.data(),
                   scratch.sample_grads[i]);
  });

  if (grads.dense2_w.numel() == 0) {
    grads.config = params.config;
    grads.allocate();
  }
  grads.zero();
  auto out = grads.named_tensors();
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    loss += scratch.losses[i];
    auto src = scratch.sample_grads[i].named_tensors();
    for (std::size_t t = 0; t < out.size(); ++t) {
      T* dst = out[t].tensor->ptr();
      const T* s = src[t].tensor->ptr();
      const std::size_t n = out[t].tensor->numel();
      for (std::size_t e = 0; e < n; ++e) dst[e] += s[e];
    }
  }
  loss = loss / static_cast<double>(batch) + l2_penalty(params, l2_scale);
  // L2 gradient: 2λw on the dense weight matrices.
  {
    auto ps = named_tensors_of(params);
    auto gs = grads.named_tensors();
    for (std::size_t t = 0; t < gs.size(); ++t) {
      if (!gs[t].dense_weight) continue;
      const T twol = static_cast<T>(2.0 * l2_scale);
      T* dst = gs[t].tensor->ptr();
      const T* w = ps[t].tensor->ptr();
      const std::size_t n = gs[t].tensor->numel();
      for (std::size_t e = 0; e < n; ++e) dst[e] += twol * w[e];
    }
  }
  return loss;
}

/// Best-on-validation model with everything needed to run it later.
struct CheckpointData {
  ModelConfig config;
  SpeedClassMap class_map;
  MetadataStats stats;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  ModelParams params;
};

/// Single file: UTF-8 JSON header, one NUL byte, then the tensors as raw
/// little-endian float32 in header order.
void save_checkpoint(const CheckpointData& ckpt,
                     const std::filesystem::path& path);
CheckpointData load_checkpoint(const std::filesystem::path& path);

struct EpochStat {
  int epoch = 0;
  double mean_train_loss = 0.0;
  double val_within5 = 0.0;
};

struct TrainOptions {
  std::filesystem::path log_csv;  // empty -> no log file
  int threads = 0;                // <= 0: hardware count
  std::ostream* progress = nullptr;
};

struct TrainResult {
  CheckpointData best;
  int best_epoch = 0;
  double best_val_within5 = 0.0;
  std::vector<EpochStat> epochs;
};

/// The full recipe: shuffled minibatches, Adam, decayed rate, per-epoch
/// validation, best-checkpoint selection (ties keep the earlier epoch).
TrainResult train(const DatasetManifest& manifest,
                  const std::filesystem::path& chip_root,
                  ModelConfig model_config, TrainConfig train_config,
                  const TrainOptions& opts = {});

}  // namespace freeflow

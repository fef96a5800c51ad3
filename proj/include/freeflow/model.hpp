#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeflow/core.hpp"
#include "freeflow/nn.hpp"
#include "freeflow/rng.hpp"
#include "freeflow/tensor.hpp"

// The fusion network and its two ablations. The imagery path is a small
// trainable backbone (three conv/pool blocks into a global average pool)
// feeding a dense layer; the three road features either join the image
// embedding before the classifier (combined), are dropped (imagery_only), or
// drive their own hidden layer (features_only).
namespace freeflow {

enum class Variant { combined, imagery_only, features_only };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::combined;
  int backbone_dim = 64;   // D; conv blocks run D/4, D/2, D channels
  int hidden_dim = 512;    // H, width of the dense layer(s) before the head
  int num_classes = 0;     // K; set from the class map before init
  int input_px = 224;
  bool freeze_backbone = false;
  bool raw_metadata = false;  // feed the three features unscaled

  bool uses_imagery() const { return variant != Variant::features_only; }
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Stable 16-hex digest of every field; stored in checkpoints.
  std::string fingerprint() const;
};

/// Per-feature training-split min/max for (area_type, functional_class,
/// posted_limit_mph).
struct MetadataStats {
  std::array<double, 3> min_vals{0.0, 0.0, 0.0};
  std::array<double, 3> max_vals{0.0, 0.0, 0.0};

  static MetadataStats compute(const std::vector<RoadMetadata>& train_meta);
  void validate() const;
};

/// Min-max scaling into [0,1]^3; a constant feature maps to 0, out-of-range
/// values clamp.
std::array<double, 3> normalize_metadata(const RoadMetadata& meta,
                                         const MetadataStats& stats);

/// The model-input feature vector: normalized unless config.raw_metadata.
std::array<double, 3> metadata_input(const ModelConfig& config,
                                     const RoadMetadata& meta,
                                     const MetadataStats& stats);

template <typename T>
struct NamedTensorRef {
  const char* name;
  TensorT<T>* tensor;
  bool backbone;      // frozen when config.freeze_backbone
  bool dense_weight;  // participates in the L2 penalty
};

/// All trainable tensors of one variant. `dense1` is the image dense layer
/// for the imagery paths and the 3-input hidden layer for features_only;
/// `dense2` is the classifier head.
template <typename T>
struct ModelParamsT {
  ModelConfig config;
  TensorT<T> conv1_w, conv1_b;
  TensorT<T> conv2_w, conv2_b;
  TensorT<T> conv3_w, conv3_b;
  TensorT<T> dense1_w, dense1_b;
  TensorT<T> dense2_w, dense2_b;

  /// Shapes every tensor for the config and zero-fills.
  void allocate() {
    config.validate();
    const int d = config.backbone_dim;
    const int h = config.hidden_dim;
    const int k = config.num_classes;
    if (config.uses_imagery()) {
      const int c1 = d / 4, c2 = d / 2;
      conv1_w.resize({c1, 3, 3, 3});
      conv1_b.resize({c1});
      conv2_w.resize({c2, 3, 3, c1});
      conv2_b.resize({c2});
      conv3_w.resize({d, 3, 3, c2});
      conv3_b.resize({d});
      dense1_w.resize({h, d});
    } else {
      conv1_w = conv1_b = conv2_w = conv2_b = conv3_w = conv3_b = TensorT<T>{};
      dense1_w.resize({h, 3});
    }
    dense1_b.resize({h});
    const int head_in = config.variant == Variant::combined ? h + 3 : h;
    dense2_w.resize({k, head_in});
    dense2_b.resize({k});
  }

  /// Canonical tensor order; checkpoints, Adam state and gradient reduction
  /// all follow it.
  std::vector<NamedTensorRef<T>> named_tensors() {
    std::vector<NamedTensorRef<T>> out;
    if (config.uses_imagery()) {
      out.push_back({"conv1_w", &conv1_w, true, false});
      out.push_back({"conv1_b", &conv1_b, true, false});
      out.push_back({"conv2_w", &conv2_w, true, false});
      out.push_back({"conv2_b", &conv2_b, true, false});
      out.push_back({"conv3_w", &conv3_w, true, false});
      out.push_back({"conv3_b", &conv3_b, true, false});
    }
    out.push_back({"dense1_w", &dense1_w, false, true});
    out.push_back({"dense1_b", &dense1_b, false, false});
    out.push_back({"dense2_w", &dense2_w, false, true});
    out.push_back({"dense2_b", &dense2_b, false, false});
    return out;
  }

  void zero() {
    for (auto& nt : named_tensors()) nt.tensor->fill(T(0));
  }

  bool all_finite() {
    for (auto& nt : named_tensors()) {
      if (!nt.tensor->all_finite()) return false;
    }
    return true;
  }

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    out.config = config;
    out.conv1_w = conv1_w.template cast<U>();
    out.conv1_b = conv1_b.template cast<U>();
    out.conv2_w = conv2_w.template cast<U>();
    out.conv2_b = conv2_b.template cast<U>();
    out.conv3_w = conv3_w.template cast<U>();
    out.conv3_b = conv3_b.template cast<U>();
    out.dense1_w = dense1_w.template cast<U>();
    out.dense1_b = dense1_b.template cast<U>();
    out.dense2_w = dense2_w.template cast<U>();
    out.dense2_b = dense2_b.template cast<U>();
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
/// Draws happen in double in canonical tensor order, so the float and double
/// instantiations of one seed agree to rounding.
template <typename T>
ModelParamsT<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ModelParamsT<T> params;
  params.config = config;
  params.allocate();
  Rng rng(derive_seed(seed, 20));
  for (auto& nt : params.named_tensors()) {
    TensorT<T>& t = *nt.tensor;
    if (t.shape.size() < 2) {
      t.fill(T(0));
      continue;
    }
    double fan_in = 0, fan_out = 0;
    if (t.shape.size() == 4) {  // conv [Cout, kh, kw, Cin]
      const double window = static_cast<double>(t.shape[1]) * t.shape[2];
      fan_in = t.shape[3] * window;
      fan_out = t.shape[0] * window;
    } else {  // dense [out, in]
      fan_in = t.shape[1];
      fan_out = t.shape[0];
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : t.data) w = static_cast<T>(rng.uniform(-bound, bound));
  }
  return params;
}

/// Everything the backward pass needs from one sample's forward pass.
/// Reusable across samples; sized on first use.
template <typename T>
struct ForwardCacheT {
  nn::Mat<T> patches1, patches2, patches3;
  std::vector<T> act1, act2, act3;   // post-ReLU conv outputs
  std::vector<T> pool1, pool2, pool3;
  std::vector<std::uint8_t> idx1, idx2, idx3;
  std::vector<T> gap;        // backbone output v
  std::vector<T> dense1_in;  // v for imagery paths, m for features_only
  std::vector<T> hidden;     // post-ReLU dense1 output
  std::vector<T> head_in;    // dense2 input
  std::vector<T> logits, probs;
  std::vector<T> dlogits;               // loss gradient fed to model_backward
  std::vector<T> scratch_a, scratch_b;  // backward ping-pong buffers
};

using ForwardCache = ForwardCacheT<float>;

/// Runs the conv backbone on one image (input_px*input_px*3 unit floats,
/// HWC) and leaves v in cache.gap.
template <typename T>
void backbone_forward(const ModelParamsT<T>& params, const T* image,
                      ForwardCacheT<T>& cache) {
  const auto& cfg = params.config;
  if (!cfg.uses_imagery()) {
    throw DomainError("backbone_forward: features_only model has no backbone");
  }
  const int p = cfg.input_px;
  const int c1 = cfg.backbone_dim / 4;
  const int c2 = cfg.backbone_dim / 2;
  const int c3 = cfg.backbone_dim;
  const int p2 = p / 2, p4 = p2 / 2, p8 = p4 / 2;

  auto sz = [](int side, int ch) {
    return static_cast<std::size_t>(side) * side * ch;
  };
  cache.act1.resize(sz(p, c1));
  cache.idx1.resize(sz(p2, c1));
  cache.pool1.resize(sz(p2, c1));
  cache.act2.resize(sz(p2, c2));
  cache.idx2.resize(sz(p4, c2));
  cache.pool2.resize(sz(p4, c2));
  cache.act3.resize(sz(p4, c3));
  cache.idx3.resize(sz(p8, c3));
  cache.pool3.resize(sz(p8, c3));
  cache.gap.resize(c3);

  nn::conv3x3_forward(image, p, p, 3, params.conv1_w, params.conv1_b,
                      cache.patches1, cache.act1.data());
  nn::relu_inplace(cache.act1.data(), cache.act1.size());
  nn::maxpool2x2_forward(cache.act1.data(), p, p, c1, cache.pool1.data(),
                         cache.idx1.data());

  nn::conv3x3_forward(cache.pool1.data(), p2, p2, c1, params.conv2_w,
                      params.conv2_b, cache.patches2, cache.act2.data());
  nn::relu_inplace(cache.act2.data(), cache.act2.size());
  nn::maxpool2x2_forward(cache.act2.data(), p2, p2, c2, cache.pool2.data(),
                         cache.idx2.data());

  nn::conv3x3_forward(cache.pool2.data(), p4, p4, c2, params.conv3_w,
                      params.conv3_b, cache.patches3, cache.act3.data());
  nn::relu_inplace(cache.act3.data(), cache.act3.size());
  nn::maxpool2x2_forward(cache.act3.data(), p4, p4, c3, cache.pool3.data(),
                         cache.idx3.data());

  nn::global_avg_pool(cache.pool3.data(), p8, p8, c3, cache.gap.data());
}

/// Classifier head on an embedding v (ignored for features_only) and the
/// 3-feature vector m. Leaves logits and softmax probabilities in the cache.
template <typename T>
void head_forward(const ModelParamsT<T>& params, const T* v,
                  const std::array<T, 3>& m, ForwardCacheT<T>& cache) {
  const auto& cfg = params.config;
  const int h = cfg.hidden_dim;
  const int k = cfg.num_classes;

  if (cfg.variant == Variant::features_only) {
    cache.dense1_in.assign(m.begin(), m.end());
  } else {
    cache.dense1_in.assign(v, v + cfg.backbone_dim);
  }
  cache.hidden.resize(h);
  nn::dense_forward(params.dense1_w, params.dense1_b, cache.dense1_in.data(),
                    cache.hidden.data());
  nn::relu_inplace(cache.hidden.data(), cache.hidden.size());

  if (cfg.variant == Variant::combined) {
    cache.head_in.resize(h + 3);
    std::copy(cache.hidden.begin(), cache.hidden.end(), cache.head_in.begin());
    std::copy(m.begin(), m.end(), cache.head_in.begin() + h);
  } else {
    cache.head_in = cache.hidden;
  }
  cache.logits.resize(k);
  cache.probs.resize(k);
  nn::dense_forward(params.dense2_w, params.dense2_b, cache.head_in.data(),
                    cache.logits.data());
  nn::softmax(cache.logits.data(), k, cache.probs.data());
}

/// Full forward pass. `image` may be null for features_only.
template <typename T>
void model_forward(const ModelParamsT<T>& params, const T* image,
                   const std::array<T, 3>& m, ForwardCacheT<T>& cache) {
  if (params.config.uses_imagery()) {
    if (image == nullptr) {
      throw DomainError("model_forward: variant needs imagery but image is null");
    }
    backbone_forward(params, image, cache);
    head_forward(params, cache.gap.data(), m, cache);
  } else {
    head_forward(params, static_cast<const T*>(nullptr), m, cache);
  }
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
/// Backbone gradients are skipped when the config freezes the backbone.
template <typename T>
void model_backward(const ModelParamsT<T>& params, ForwardCacheT<T>& cache,
                    const T* dlogits, ModelParamsT<T>& grads) {
  const auto& cfg = params.config;
  const int h = cfg.hidden_dim;

  std::vector<T>& dhead_in = cache.scratch_a;
  dhead_in.resize(cache.head_in.size());
  nn::dense_backward(params.dense2_w, cache.head_in.data(), dlogits,
                     grads.dense2_w, grads.dense2_b, dhead_in.data());

  // The first h entries of dhead_in are dS; metadata columns carry no
  // trainable upstream parameters.
  nn::relu_backward(cache.hidden.data(), dhead_in.data(),
                    static_cast<std::size_t>(h));
  const bool want_backbone = cfg.uses_imagery() && !cfg.freeze_backbone;
  std::vector<T>& ddense1_in = cache.scratch_b;
  ddense1_in.resize(cache.dense1_in.size());
  nn::dense_backward(params.dense1_w, cache.dense1_in.data(), dhead_in.data(),
                     grads.dense1_w, grads.dense1_b,
                     want_backbone ? ddense1_in.data() : nullptr);
  if (!want_backbone) return;

  const int p = cfg.input_px;
  const int c1 = cfg.backbone_dim / 4;
  const int c2 = cfg.backbone_dim / 2;
  const int c3 = cfg.backbone_dim;
  const int p2 = p / 2, p4 = p2 / 2, p8 = p4 / 2;

  std::vector<T>& ga = cache.scratch_a;
  std::vector<T>& gb = cache.scratch_b;  // currently holds dgap = ddense1_in

  ga.resize(static_cast<std::size_t>(p8) * p8 * c3);
  nn::global_avg_pool_backward(gb.data(), p8, p8, c3, ga.data());

  gb.resize(cache.act3.size());
  nn::maxpool2x2_backward(ga.data(), p4, p4, c3, cache.idx3.data(), gb.data());
  nn::relu_backward(cache.act3.data(), gb.data(), cache.act3.size());
  ga.resize(cache.pool2.size());
  nn::conv3x3_backward(cache.patches3, p4, p4, c2, params.conv3_w, gb.data(),
                       grads.conv3_w, grads.conv3_b, ga.data());

  gb.resize(cache.act2.size());
  nn::maxpool2x2_backward(ga.data(), p2, p2, c2, cache.idx2.data(), gb.data());
  nn::relu_backward(cache.act2.data(), gb.data(), cache.act2.size());
  ga.resize(cache.pool1.size());
  nn::conv3x3_backward(cache.patches2, p2, p2, c1, params.conv2_w, gb.data(),
                       grads.conv2_w, grads.conv2_b, ga.data());

  gb.resize(cache.act1.size());
  nn::maxpool2x2_backward(ga.data(), p, p, c1, cache.idx1.data(), gb.data());
  nn::relu_backward(cache.act1.data(), gb.data(), cache.act1.size());
  // No gradient w.r.t. the input image is needed, so conv1 skips its din.
  nn::conv3x3_backward(cache.patches1, p, p, 3, params.conv1_w, gb.data(),
                       grads.conv1_w, grads.conv1_b, static_cast<T*>(nullptr));
}

/// Argmax decode; ties break toward the lowest speed (scan order, the map
/// being sorted ascending).
template <typename T>
int decode_argmax(const std::vector<T>& probs, const SpeedClassMap& map) {
  if (static_cast<int>(probs.size()) != map.k()) {
    throw DomainError("decode: distribution size does not match class map");
  }
  int best = 0;
  for (int i = 1; i < map.k(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return map.class_to_speed(best);
}

/// round(Σ ŷ_c · speed_c) decode, exposed for experimentation.
template <typename T>
int decode_expected(const std::vector<T>& probs, const SpeedClassMap& map) {
  if (static_cast<int>(probs.size()) != map.k()) {
    throw DomainError("decode: distribution size does not match class map");
  }
  double acc = 0.0;
  for (int i = 0; i < map.k(); ++i) {
    acc += static_cast<double>(probs[i]) * map.class_to_speed(i);
  }
  return round_speed(acc);
}

}  // namespace freeflow

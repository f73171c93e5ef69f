// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/image.hpp"
#include "tbps/numerics.hpp"
#include "tbps/rng.hpp"
#include "tbps/text.hpp"

namespace tbps {

struct ModelConfig {
  int image_height = 48;
  int image_width = 24;
  int patch_size = 8;
  int embed_dim = 32;
  int hidden_dim = 64;
  int image_layers = 3;
  int text_layers = 3;
  double dropout = 0.05;
  double tau_init = 0.07;

  int num_patches() const { return (image_height / patch_size) * (image_width / patch_size); }
  int patch_dim() const { return patch_size * patch_size * Image::kChannels; }
  /// Throws BadConfig.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr double kMinTau = 0.01;

struct Tensor {
  std::string name;
  Mat value;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Module owning a tensor: its name without the last component
/// ("text.hidden.2.weight" -> "text.hidden.2").
std::string module_of(std::string_view tensor_name);

/// Weights of both towers plus log(tau), in a fixed order.
///
/// Modules: image.patch, image.hidden.{1..L}, image.proj, text.embed,
/// text.hidden.{1..L}, text.proj, temperature. Hidden layer ids are 1-based.
struct ModelParams {
  ModelConfig config;
  std::size_t vocab_size = 0;
  std::vector<Tensor> tensors;
  /// Modules excluded from optimizer updates.
  std::set<std::string> frozen;
  /// Hidden-layer modules bypassed in the forward pass.
  std::set<std::string> dropped;

  std::size_t index(std::string_view name) const;
  Mat& operator[](std::string_view name) { return tensors[index(name)].value; }
  const Mat& operator[](std::string_view name) const { return tensors[index(name)].value; }

  double log_tau() const;
  double tau() const;
  /// Clamps so that tau >= kMinTau.
  void set_log_tau(double value);

  std::vector<std::string> modules() const;
  bool has_module(std::string_view module) const;
  std::vector<std::size_t> tensors_of(std::string_view module) const;
  bool trainable(std::size_t tensor_index) const;

  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Closed-form parameter count of a freshly initialized model.
std::size_t expected_parameter_count(const ModelConfig& config, std::size_t vocab_size);

/// Uniform(+-1/sqrt(fan_in)) weights; embedding tables use fan_in = 1.
ModelParams init_params(const ModelConfig& config, std::size_t vocab_size, Rng rng);

std::string image_hidden_module(int layer);
std::string text_hidden_module(int layer);

/// Returns a copy with `modules` added to the frozen set. Throws BadLayerId.
ModelParams freeze(const ModelParams& params, std::span<const std::string> modules);
/// Returns a copy with hidden-layer `modules` bypassed. Throws BadLayerId.
ModelParams drop(const ModelParams& params, std::span<const std::string> modules);

/// Gradients aligned with ModelParams::tensors.
using Grads = std::vector<Mat>;
Grads zero_grads(const ModelParams& params);

struct ImageCache {
  std::size_t batch = 0;
  Mat patches;       // (B*P) x patch_dim
  Mat patch_pre;     // (B*P) x h, before relu
  std::vector<Mat> hidden_in;   // per layer, B x h
  std::vector<Mat> hidden_pre;  // per layer, B x h
  Mat top;                      // B x h, input to the projection
  std::vector<double> norms;
  Mat features;                 // normalized output
};

struct TextCache {
  std::vector<std::vector<std::size_t>> ids;
  std::vector<Mat> hidden_in;
  std::vector<Mat> hidden_pre;
  std::vector<Mat> masks;  // scaled keep masks, empty in eval mode
  Mat top;
  std::vector<double> norms;
  Mat features;
};

/// Unit-norm image embeddings, one row per image. Throws ShapeMismatch.
Mat encode_images(const ModelParams& params, std::span<const Image> images,
                  ImageCache* cache = nullptr);

/// Unit-norm text embeddings from token ids. Dropout is applied only when
/// `dropout_rng` is non-null (train mode).
Mat encode_texts(const ModelParams& params, std::span<const std::vector<std::size_t>> ids,
                 Rng* dropout_rng = nullptr, TextCache* cache = nullptr);

/// Accumulates into `grads` the gradient of a loss whose gradient on the
/// normalized features is `grad_features`.
void backward_images(const ModelParams& params, const ImageCache& cache,
                     const Mat& grad_features, Grads& grads);
void backward_texts(const ModelParams& params, const TextCache& cache,
                    const Mat& grad_features, Grads& grads);

/// Model weights plus the vocabulary used to encode captions.
struct Checkpoint {
  ModelParams params;
  Vocab vocab;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.params == b.params && a.vocab == b.vocab;
  }
};

/// Text format; doubles are stored as hex bit patterns so the round trip is
/// bit-exact.
void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tbps

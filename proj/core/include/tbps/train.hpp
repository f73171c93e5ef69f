// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tbps/augment.hpp"
#include "tbps/data.hpp"
#include "tbps/losses.hpp"
#include "tbps/model.hpp"
#include "tbps/text.hpp"

namespace tbps {

/// Fixed stream ids so that each consumer of randomness owns its sequence.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kFewshot = 5;
inline constexpr std::uint64_t kToy = 6;
}  // namespace streams

struct Schedule {
  double lr_init = 1e-6;
  double lr_peak = 1e-4;
  double lr_final = 5e-6;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  /// Warmup covers floor(fraction * total) steps.
  static Schedule with_warmup_fraction(std::size_t total_steps, double fraction,
                                       double lr_init = 1e-6, double lr_peak = 1e-4,
                                       double lr_final = 5e-6);
  void validate() const;
};

/// Linear warmup from lr_init to lr_peak, then cosine decay to lr_final at
/// total_steps. Throws StepOutOfRange.
double lr_at(const Schedule& schedule, std::size_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
};

struct AdamWState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::size_t step = 0;
};

AdamWState adamw_init(const ModelParams& params);

/// Decoupled weight decay on ".weight" tensors; frozen and dropped modules are
/// left untouched. Clamps log(tau) afterwards.
void adamw_step(ModelParams& params, const Grads& grads, AdamWState& state,
                const AdamWConfig& config, double lr);

struct TrainConfig {
  int epochs = 5;
  std::size_t batch_size = 64;
  double lr_init = 1e-6;
  double lr_peak = 1e-4;
  double lr_final = 5e-6;
  double warmup_fraction = 0.1;
  AdamWConfig adamw;
  LossConfig loss = production_loss();

  ImageAugMode image_aug = ImageAugMode::Pool;
  std::vector<AugPolicy> image_pool = production_image_pool();
  std::size_t pool_k = 2;
  std::vector<TextAugPolicy> text_ops = production_text_ops();

  std::vector<std::string> freeze_modules;
  std::vector<std::string> drop_modules;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Four aligned views of one batch.
struct Batch {
  std::vector<Image> images;
  std::vector<Image> images_aug;
  std::vector<std::vector<std::size_t>> texts;
  std::vector<std::vector<std::size_t>> texts_aug;
  std::vector<IdentityId> identities;

  std::size_t size() const { return identities.size(); }
};

struct Augmenters {
  ImageAugmenter image;
  TextAugmenter text;
};

Augmenters make_augmenters(const TrainConfig& config);

/// Primary views and re-augmented views of `rows`, each drawn from its own
/// split of `rng`. Throws BatchTooSmall.
Batch assemble_batch(const Dataset& dataset, std::span<const std::size_t> rows,
                     std::span<const TokenSeq> tokens, const Vocab& vocab,
                     const Augmenters& aug, const Rng& rng,
                     std::vector<std::string>* warnings = nullptr);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  std::map<std::string, double> terms;
  double total = 0.0;
  double tau = 0.0;
};

/// Forward and backward of the configured loss stack at the current
/// parameters. Returns the log record and fills `grads` (zeroed first).
StepLog loss_and_grads(const ModelParams& params, const Batch& batch, const LossConfig& loss,
                       const Rng& dropout_rng, Grads& grads);

/// One optimizer step. Throws NonFiniteLoss.
StepLog train_step(ModelParams& params, const Batch& batch, const LossConfig& loss,
                   AdamWState& state, const AdamWConfig& adamw, double lr,
                   const Rng& dropout_rng, std::size_t step = 0);

/// Splits n rows into ceil(n / batch) batches whose sizes differ by at most one.
std::vector<std::size_t> batch_sizes(std::size_t n, std::size_t batch);

struct FitResult {
  Checkpoint checkpoint;
  ModelParams init;
  std::vector<StepLog> log;
  std::vector<std::string> warnings;
};

/// Parameters fit() starts from: seeded init, then freeze and drop.
ModelParams initial_params(const ModelConfig& model, std::size_t vocab_size,
                           const TrainConfig& config);

/// Trains on the training split of `dataset`. The vocabulary is built from
/// training captions unless `vocab` is given.
FitResult fit(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
              const Vocab* vocab = nullptr);

/// Active loss terms in canonical order.
std::vector<std::string> active_terms(const LossConfig& loss);

/// Columns: step, lr, one per term, total, tau.
void write_log_csv(std::span<const StepLog> log, std::span<const std::string> terms,
                   std::ostream& out);

}  // namespace tbps

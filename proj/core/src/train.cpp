// SPDX-License-Identifier: Apache-2.0
#include "tbps/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tbps/error.hpp"

namespace tbps {

Schedule Schedule::with_warmup_fraction(std::size_t total_steps, double fraction, double lr_init,
                                        double lr_peak, double lr_final) {
  Schedule s;
  s.lr_init = lr_init;
  s.lr_peak = lr_peak;
  s.lr_final = lr_final;
  s.total_steps = total_steps;
  s.warmup_steps = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total_steps)));
  if (s.warmup_steps >= total_steps && total_steps > 0) s.warmup_steps = total_steps - 1;
  return s;
}

void Schedule::validate() const {
  if (!(lr_init > 0.0 && lr_init <= lr_peak))
    throw Error(ErrorCode::BadConfig, "schedule needs 0 < lr_init <= lr_peak");
  if (!(lr_final >= 0.0 && lr_final <= lr_peak))
    throw Error(ErrorCode::BadConfig, "schedule needs 0 <= lr_final <= lr_peak");
  if (total_steps == 0 || warmup_steps >= total_steps)
    throw Error(ErrorCode::BadConfig, "schedule needs warmup_steps < total_steps");
}

double lr_at(const Schedule& s, std::size_t step) {
  s.validate();
  if (step > s.total_steps)
    throw Error(ErrorCode::StepOutOfRange, "step " + std::to_string(step) + " beyond total " +
                                               std::to_string(s.total_steps));
  if (step < s.warmup_steps) {
    const double t = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.lr_init + (s.lr_peak - s.lr_init) * t;
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.lr_final + 0.5 * (s.lr_peak - s.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamWState adamw_init(const ModelParams& params) {
  AdamWState s;
  s.m = zero_grads(params);
  s.v = zero_grads(params);
  return s;
}

void adamw_step(ModelParams& params, const Grads& grads, AdamWState& state,
                const AdamWConfig& config, double lr) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (!params.trainable(i)) continue;
    auto& w = params.tensors[i].value.values();
    const auto& g = grads[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    const bool decay = params.tensors[i].name.ends_with(".weight") && config.weight_decay != 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (decay) w[k] -= lr * config.weight_decay * w[k];
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
  params.set_log_tau(params.log_tau());
}

// ---------------------------------------------------------------------------
// Config and batches
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::BadConfig, "epochs must be >= 1");
  if (batch_size < 2) throw Error(ErrorCode::BatchTooSmall, "batch_size must be >= 2");
  Schedule::with_warmup_fraction(2, 0.0, lr_init, lr_peak, lr_final).validate();
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw Error(ErrorCode::BadConfig, "warmup_fraction must be in [0, 1)");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0))
    throw Error(ErrorCode::BadConfig, "adamw betas must be in [0, 1)");
  if (!(adamw.eps > 0.0) || !(adamw.weight_decay >= 0.0))
    throw Error(ErrorCode::BadConfig, "adamw eps must be > 0 and weight_decay >= 0");
  loss.validate();
  for (const auto& p : image_pool) validate_policy(p);
  if (image_aug == ImageAugMode::Pool && image_pool.size() < pool_k)
    throw Error(ErrorCode::PoolTooSmall, "augmentation pool smaller than pool_k");
  if (image_aug == ImageAugMode::Trivial && image_pool.empty())
    throw Error(ErrorCode::EmptyPool, "trivial augmentation needs a non-empty pool");
  for (const auto& op : text_ops)
    if (!(op.alpha >= 0.0 && op.alpha <= 1.0))
      throw Error(ErrorCode::BadParam, "text augmentation rate must be in [0, 1]");
}

Augmenters make_augmenters(const TrainConfig& config) {
  Augmenters a;
  a.image.mode = config.image_aug;
  a.image.pool = config.image_pool;
  a.image.pool_k = config.pool_k;
  a.text.ops = config.text_ops;
  a.text.lexicon = std::make_shared<const Lexicon>(Lexicon::builtin());
  a.text.translator = std::make_shared<const DictionaryParaphraser>(DictionaryParaphraser::builtin());
  return a;
}

Batch assemble_batch(const Dataset& dataset, std::span<const std::size_t> rows,
                     std::span<const TokenSeq> tokens, const Vocab& vocab, const Augmenters& aug,
                     const Rng& rng, std::vector<std::string>* warnings) {
  if (rows.size() < 2)
    throw Error(ErrorCode::BatchTooSmall, "batch of " + std::to_string(rows.size()) +
                                              " has no negatives");
  if (tokens.size() != dataset.size())
    throw Error(ErrorCode::LengthMismatch, "token cache does not cover the dataset");
  Batch b;
  b.images.reserve(rows.size());
  b.images_aug.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    const Sample& s = dataset.samples.at(r);
    const Rng sample_rng = rng.split(i);
    Rng r_img = sample_rng.split(0);
    Rng r_img_aug = sample_rng.split(1);
    Rng r_txt = sample_rng.split(2);
    Rng r_txt_aug = sample_rng.split(3);
    b.images.push_back(aug.image(s.image, r_img));
    b.images_aug.push_back(aug.image(s.image, r_img_aug));
    b.texts.push_back(vocab.encode(aug.text(tokens[r], r_txt, warnings)));
    b.texts_aug.push_back(vocab.encode(aug.text(tokens[r], r_txt_aug, warnings)));
    b.identities.push_back(s.identity);
  }
  return b;
}

std::vector<std::size_t> batch_sizes(std::size_t n, std::size_t batch) {
  if (batch == 0) throw Error(ErrorCode::BatchTooSmall, "batch size must be positive");
  const std::size_t count = (n + batch - 1) / batch;
  std::vector<std::size_t> sizes(count, n / std::max<std::size_t>(count, 1));
  for (std::size_t i = 0; i < n % std::max<std::size_t>(count, 1); ++i) ++sizes[i];
  return sizes;
}

std::vector<std::string> active_terms(const LossConfig& loss) {
  std::vector<std::string> out;
  for (const auto& name : known_loss_terms())
    if (loss.active(name)) out.push_back(name);
  return out;
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

namespace {

Mat rows_slice(const Mat& m, std::size_t begin, std::size_t count) {
  Mat out(count, m.cols());
  std::copy(m.values().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
            m.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * m.cols()),
            out.values().begin());
  return out;
}

EmbeddingBatch as_batch(Mat features, const std::vector<IdentityId>& ids) {
  EmbeddingBatch e;
  e.features = std::move(features);
  e.identities = ids;
  e.normalized = true;
  return e;
}

void accumulate(Mat& into, double w, const Mat& g) {
  if (into.empty()) into = Mat(g.rows(), g.cols());
  into.axpy(w, g);
}

}  // namespace

StepLog loss_and_grads(const ModelParams& params, const Batch& batch, const LossConfig& loss,
                       const Rng& dropout_rng, Grads& grads) {
  const std::size_t n = batch.size();
  if (n < 2) throw Error(ErrorCode::BatchTooSmall, "batch has no negatives");
  grads = zero_grads(params);
  const double tau = params.tau();

  const bool need_img_aug = loss.active("ss_i") || loss.active("mvs_i") || loss.active("mvs_it");
  const bool need_txt_aug = loss.active("ss_t") || loss.active("mvs_t") || loss.active("mvs_it");

  ImageCache ci, ci_aug;
  TextCache ct, ct_aug;
  Rng drop_t = dropout_rng.split(0);
  Rng drop_t_aug = dropout_rng.split(1);
  const EmbeddingBatch img = as_batch(encode_images(params, batch.images, &ci), batch.identities);
  const EmbeddingBatch txt =
      as_batch(encode_texts(params, batch.texts, &drop_t, &ct), batch.identities);
  EmbeddingBatch img_aug, txt_aug;
  if (need_img_aug)
    img_aug = as_batch(encode_images(params, batch.images_aug, &ci_aug), batch.identities);
  if (need_txt_aug)
    txt_aug = as_batch(encode_texts(params, batch.texts_aug, &drop_t_aug, &ct_aug),
                       batch.identities);

  const LabelMatrix labels = build_labels(batch.identities, batch.identities);

  Mat g_img, g_txt, g_img_aug, g_txt_aug;
  double g_log_tau = 0.0;
  StepLog log;
  log.tau = tau;

  const auto add_pair = [&](const std::string& name, const LossResult& r, Mat& gi, Mat& gt) {
    const double w = loss.weights.at(name);
    log.terms[name] = r.value;
    log.total += w * r.value;
    accumulate(gi, w, r.grad_image);
    accumulate(gt, w, r.grad_text);
    g_log_tau += w * r.grad_log_tau;
  };
  const auto add_views = [&](const std::string& name, const LossResult& r, Mat& ga, Mat& gb) {
    const double w = loss.weights.at(name);
    log.terms[name] = r.value;
    log.total += w * r.value;
    accumulate(ga, w, rows_slice(r.grad_image, 0, n));
    accumulate(gb, w, rows_slice(r.grad_image, n, n));
  };

  const auto soften = [&](const LabelMatrix& hard) {
    if (!loss.soft_label_enabled) return hard;
    const MatchProbabilities p = match_probabilities(img, txt, tau);
    return soft_label(hard, p.image_to_text, p.text_to_image);
  };
  if (loss.active("itc")) {
    if (loss.soft_label_enabled) {
      std::vector<IdentityId> idx(n);
      std::iota(idx.begin(), idx.end(), IdentityId{0});
      add_pair("itc", n_itc(img, txt, soften(build_labels(idx, idx)), tau), g_img, g_txt);
    } else {
      add_pair("itc", itc(img, txt, tau), g_img, g_txt);
    }
  }
  if (loss.active("n_itc")) add_pair("n_itc", n_itc(img, txt, soften(labels), tau), g_img, g_txt);
  if (loss.active("r_itc")) add_pair("r_itc", r_itc(img, txt, labels, tau, loss.eps), g_img, g_txt);
  if (loss.active("c_itc")) add_pair("c_itc", c_itc(img, txt), g_img, g_txt);
  const auto pairing = two_view_pairing(n);
  if (loss.active("ss_i"))
    add_views("ss_i", ss_loss(concat_rows(img, img_aug), pairing, loss.tau_s), g_img, g_img_aug);
  if (loss.active("ss_t"))
    add_views("ss_t", ss_loss(concat_rows(txt, txt_aug), pairing, loss.tau_s), g_txt, g_txt_aug);
  if (loss.active("mvs_i")) add_pair("mvs_i", n_itc(img_aug, txt, labels, tau), g_img_aug, g_txt);
  if (loss.active("mvs_t")) add_pair("mvs_t", n_itc(img, txt_aug, labels, tau), g_img, g_txt_aug);
  if (loss.active("mvs_it"))
    add_pair("mvs_it", n_itc(img_aug, txt_aug, labels, tau), g_img_aug, g_txt_aug);

  if (!g_img.empty()) backward_images(params, ci, g_img, grads);
  if (!g_txt.empty()) backward_texts(params, ct, g_txt, grads);
  if (!g_img_aug.empty()) backward_images(params, ci_aug, g_img_aug, grads);
  if (!g_txt_aug.empty()) backward_texts(params, ct_aug, g_txt_aug, grads);
  grads[params.index("temperature.log_tau")](0, 0) = g_log_tau;
  return log;
}

StepLog train_step(ModelParams& params, const Batch& batch, const LossConfig& loss,
                   AdamWState& state, const AdamWConfig& adamw, double lr, const Rng& dropout_rng,
                   std::size_t step) {
  Grads grads;
  StepLog log;
  try {
    log = loss_and_grads(params, batch, loss, dropout_rng, grads);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    throw Error(ErrorCode::NonFiniteLoss, "non-finite value in the forward pass at step " +
                                              std::to_string(step) + ": " + e.what());
  }
  log.step = step;
  log.lr = lr;
  if (!std::isfinite(log.total)) {
    std::ostringstream msg;
    msg << "loss is not finite at step " << step << " (tau " << log.tau << "):";
    for (const auto& [name, v] : log.terms) msg << ' ' << name << '=' << v;
    throw Error(ErrorCode::NonFiniteLoss, msg.str());
  }
  adamw_step(params, grads, state, adamw, lr);
  return log;
}

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

ModelParams initial_params(const ModelConfig& model, std::size_t vocab_size,
                           const TrainConfig& config) {
  ModelParams params = init_params(model, vocab_size, Rng(config.seed, streams::kInit));
  params = freeze(params, config.freeze_modules);
  return drop(params, config.drop_modules);
}

FitResult fit(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
              const Vocab* vocab) {
  config.validate();
  model.validate();
  const std::vector<std::size_t> train_rows = dataset.rows(Split::Train);
  if (train_rows.size() < 2)
    throw Error(ErrorCode::BatchTooSmall, "need at least two training rows");

  std::vector<TokenSeq> tokens(dataset.size());
  std::vector<TokenSeq> train_tokens;
  for (std::size_t r : train_rows) {
    tokens[r] = truncate(tokenize(dataset.samples[r].caption));
    train_tokens.push_back(tokens[r]);
  }

  FitResult result;
  result.checkpoint.vocab = vocab ? *vocab : Vocab::build(train_tokens);
  ModelParams params = initial_params(model, result.checkpoint.vocab.size(), config);
  result.init = params;

  const Augmenters aug = make_augmenters(config);
  const std::vector<std::size_t> sizes = batch_sizes(train_rows.size(), config.batch_size);
  for (std::size_t s : sizes)
    if (s < 2) throw Error(ErrorCode::BatchTooSmall, "a batch would have a single row");
  const std::size_t total = sizes.size() * static_cast<std::size_t>(config.epochs);
  const Schedule schedule = Schedule::with_warmup_fraction(
      total, config.warmup_fraction, config.lr_init, config.lr_peak, config.lr_final);

  AdamWState state = adamw_init(params);
  const Rng shuffle_root(config.seed, streams::kShuffle);
  const Rng augment_root(config.seed, streams::kAugment);
  const Rng dropout_root(config.seed, streams::kDropout);
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_rows;
    Rng shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span<std::size_t>(order));
    std::size_t offset = 0;
    for (std::size_t size : sizes) {
      const std::span<const std::size_t> rows(order.data() + offset, size);
      offset += size;
      const Batch batch = assemble_batch(dataset, rows, tokens, result.checkpoint.vocab, aug,
                                         augment_root.split(step), &result.warnings);
      result.log.push_back(train_step(params, batch, config.loss, state, config.adamw,
                                      lr_at(schedule, step), dropout_root.split(step), step));
      ++step;
    }
  }
  result.checkpoint.params = std::move(params);
  return result;
}

void write_log_csv(std::span<const StepLog> log, std::span<const std::string> terms,
                   std::ostream& out) {
  const auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "step,lr";
  for (const auto& t : terms) out << ',' << t;
  out << ",total,tau\n";
  for (const auto& rec : log) {
    out << rec.step << ',' << num(rec.lr);
    for (const auto& t : terms) {
      const auto it = rec.terms.find(t);
      out << ',' << (it == rec.terms.end() ? std::string() : num(it->second));
    }
    out << ',' << num(rec.total) << ',' << num(rec.tau) << '\n';
  }
}

}  // namespace tbps

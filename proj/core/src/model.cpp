// SPDX-License-Identifier: Apache-2.0
#include "tbps/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tbps/error.hpp"

namespace tbps {

namespace {

void bad_config(const std::string& msg) { throw Error(ErrorCode::BadConfig, msg); }

Mat uniform_mat(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

void add_colsum(const Mat& m, Mat& out) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
}

// rows of m += bias (1 x cols)
void add_row_bias(Mat& m, const Mat& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias(0, c);
}

std::string hex_of(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double double_of_hex(const std::string& s) {
  std::size_t used = 0;
  unsigned long long bits = 0;
  try {
    bits = std::stoull(s, &used, 16);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.size() != 16)
    throw Error(ErrorCode::ParseError, "bad hex double '" + s + "'");
  return std::bit_cast<double>(static_cast<std::uint64_t>(bits));
}

bool is_hidden_module(std::string_view module) {
  return module.starts_with("image.hidden.") || module.starts_with("text.hidden.");
}

}  // namespace

void ModelConfig::validate() const {
  if (image_height <= 0 || image_width <= 0) bad_config("image size must be positive");
  if (patch_size <= 0) bad_config("patch_size must be positive");
  if (image_height % patch_size != 0 || image_width % patch_size != 0)
    bad_config("patch_size must divide the image size");
  if (embed_dim <= 0 || hidden_dim <= 0) bad_config("embed_dim and hidden_dim must be positive");
  if (image_layers < 0 || text_layers < 0) bad_config("layer counts must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad_config("dropout must be in [0, 1)");
  if (!(tau_init >= kMinTau)) bad_config("tau_init must be >= 0.01");
}

std::string module_of(std::string_view tensor_name) {
  const auto pos = tensor_name.rfind('.');
  if (pos == std::string_view::npos) return std::string(tensor_name);
  return std::string(tensor_name.substr(0, pos));
}

std::string image_hidden_module(int layer) { return "image.hidden." + std::to_string(layer); }
std::string text_hidden_module(int layer) { return "text.hidden." + std::to_string(layer); }

std::size_t ModelParams::index(std::string_view name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return i;
  throw Error(ErrorCode::BadModule, "no tensor named '" + std::string(name) + "'");
}

double ModelParams::log_tau() const { return (*this)["temperature.log_tau"](0, 0); }
double ModelParams::tau() const { return std::exp(log_tau()); }

void ModelParams::set_log_tau(double value) {
  (*this)["temperature.log_tau"](0, 0) = std::max(value, std::log(kMinTau));
}

std::vector<std::string> ModelParams::modules() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) {
    std::string m = module_of(t.name);
    if (out.empty() || out.back() != m) out.push_back(std::move(m));
  }
  return out;
}

bool ModelParams::has_module(std::string_view module) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const Tensor& t) { return module_of(t.name) == module; });
}

std::vector<std::size_t> ModelParams::tensors_of(std::string_view module) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (module_of(tensors[i].name) == module) out.push_back(i);
  if (out.empty()) throw Error(ErrorCode::BadModule, "unknown module '" + std::string(module) + "'");
  return out;
}

bool ModelParams::trainable(std::size_t tensor_index) const {
  const std::string m = module_of(tensors.at(tensor_index).name);
  return !frozen.contains(m) && !dropped.contains(m);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

std::size_t ModelParams::trainable_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (trainable(i)) n += tensors[i].value.size();
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(),
                     [](const Tensor& t) { return tbps::all_finite(t.value.values()); });
}

std::size_t expected_parameter_count(const ModelConfig& c, std::size_t vocab_size) {
  const std::size_t h = static_cast<std::size_t>(c.hidden_dim);
  const std::size_t d = static_cast<std::size_t>(c.embed_dim);
  const std::size_t D = static_cast<std::size_t>(c.patch_dim());
  const std::size_t P = static_cast<std::size_t>(c.num_patches());
  const std::size_t hidden = h * h + h;
  const std::size_t proj = h * d + d;
  const std::size_t image = D * h + h + P * h + static_cast<std::size_t>(c.image_layers) * hidden + proj;
  const std::size_t text = vocab_size * h + static_cast<std::size_t>(c.text_layers) * hidden + proj;
  return image + text + 1;
}

ModelParams init_params(const ModelConfig& config, std::size_t vocab_size, Rng rng) {
  config.validate();
  if (vocab_size == 0) bad_config("vocabulary must not be empty");
  const auto h = static_cast<std::size_t>(config.hidden_dim);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const auto D = static_cast<std::size_t>(config.patch_dim());
  const auto P = static_cast<std::size_t>(config.num_patches());
  const double b_patch = 1.0 / std::sqrt(static_cast<double>(D));
  const double b_hidden = 1.0 / std::sqrt(static_cast<double>(h));

  ModelParams p;
  p.config = config;
  p.vocab_size = vocab_size;
  auto add = [&](std::string name, Mat m) { p.tensors.push_back({std::move(name), std::move(m)}); };

  add("image.patch.weight", uniform_mat(h, D, b_patch, rng));
  add("image.patch.bias", uniform_mat(1, h, b_patch, rng));
  add("image.patch.pos", uniform_mat(P, h, b_patch, rng));
  for (int l = 1; l <= config.image_layers; ++l) {
    add(image_hidden_module(l) + ".weight", uniform_mat(h, h, b_hidden, rng));
    add(image_hidden_module(l) + ".bias", uniform_mat(1, h, b_hidden, rng));
  }
  add("image.proj.weight", uniform_mat(d, h, b_hidden, rng));
  add("image.proj.bias", uniform_mat(1, d, b_hidden, rng));

  add("text.embed.weight", uniform_mat(vocab_size, h, 1.0, rng));
  for (int l = 1; l <= config.text_layers; ++l) {
    add(text_hidden_module(l) + ".weight", uniform_mat(h, h, b_hidden, rng));
    add(text_hidden_module(l) + ".bias", uniform_mat(1, h, b_hidden, rng));
  }
  add("text.proj.weight", uniform_mat(d, h, b_hidden, rng));
  add("text.proj.bias", uniform_mat(1, d, b_hidden, rng));

  add("temperature.log_tau", Mat(1, 1, std::log(config.tau_init)));
  return p;
}

ModelParams freeze(const ModelParams& params, std::span<const std::string> modules) {
  ModelParams out = params;
  for (const auto& m : modules) {
    if (!params.has_module(m)) throw Error(ErrorCode::BadLayerId, "unknown module '" + m + "'");
    out.frozen.insert(m);
  }
  return out;
}

ModelParams drop(const ModelParams& params, std::span<const std::string> modules) {
  ModelParams out = params;
  for (const auto& m : modules) {
    if (!params.has_module(m) || !is_hidden_module(m))
      throw Error(ErrorCode::BadLayerId, "'" + m + "' is not a droppable hidden layer");
    out.dropped.insert(m);
  }
  return out;
}

Grads zero_grads(const ModelParams& params) {
  Grads g;
  g.reserve(params.tensors.size());
  for (const auto& t : params.tensors) g.emplace_back(t.value.rows(), t.value.cols());
  return g;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

// Residual relu stack shared by both towers. `masks` is filled only when
// dropout_rng is set.
Mat hidden_forward(const ModelParams& params, const std::string& prefix, int layers, Mat cur,
                   Rng* dropout_rng, std::vector<Mat>& ins, std::vector<Mat>& pres,
                   std::vector<Mat>* masks) {
  const double keep = 1.0 - params.config.dropout;
  for (int l = 1; l <= layers; ++l) {
    const std::string module = prefix + std::to_string(l);
    if (params.dropped.contains(module)) {
      ins.emplace_back();
      pres.emplace_back();
      if (masks) masks->emplace_back();
      continue;
    }
    Mat pre = matmul_nt(cur, params[module + ".weight"]);
    add_row_bias(pre, params[module + ".bias"]);
    Mat mask;
    if (dropout_rng && params.config.dropout > 0.0) {
      mask = Mat(pre.rows(), pre.cols());
      for (double& v : mask.values()) v = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    ins.push_back(cur);
    for (std::size_t i = 0; i < pre.size(); ++i) {
      double a = std::max(pre.values()[i], 0.0);
      if (!mask.empty()) a *= mask.values()[i];
      cur.values()[i] += a;
    }
    pres.push_back(std::move(pre));
    if (masks) masks->push_back(std::move(mask));
  }
  return cur;
}

// Returns the gradient w.r.t. the stack input.
Mat hidden_backward(const ModelParams& params, const std::string& prefix, int layers,
                    const std::vector<Mat>& ins, const std::vector<Mat>& pres,
                    const std::vector<Mat>* masks, Mat dh, Grads& grads) {
  for (int l = layers; l >= 1; --l) {
    const std::string module = prefix + std::to_string(l);
    const auto li = static_cast<std::size_t>(l - 1);
    if (params.dropped.contains(module)) continue;
    const Mat& pre = pres[li];
    Mat dz(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      if (pre.values()[i] <= 0.0) continue;
      double g = dh.values()[i];
      if (masks && !(*masks)[li].empty()) g *= (*masks)[li].values()[i];
      dz.values()[i] = g;
    }
    const std::size_t wi = params.index(module + ".weight");
    grads[wi] += matmul_tn(dz, ins[li]);
    add_colsum(dz, grads[params.index(module + ".bias")]);
    dh += matmul(dz, params.tensors[wi].value);
  }
  return dh;
}

Mat project(const ModelParams& params, const std::string& prefix, const Mat& top) {
  Mat out = matmul_nt(top, params[prefix + "proj.weight"]);
  add_row_bias(out, params[prefix + "proj.bias"]);
  return out;
}

Mat project_backward(const ModelParams& params, const std::string& prefix, const Mat& top,
                     const Mat& d_out, Grads& grads) {
  const std::size_t wi = params.index(prefix + "proj.weight");
  grads[wi] += matmul_tn(d_out, top);
  add_colsum(d_out, grads[params.index(prefix + "proj.bias")]);
  return matmul(d_out, params.tensors[wi].value);
}

}  // namespace

Mat encode_images(const ModelParams& params, std::span<const Image> images, ImageCache* cache) {
  const ModelConfig& c = params.config;
  const auto B = images.size();
  const auto P = static_cast<std::size_t>(c.num_patches());
  const auto D = static_cast<std::size_t>(c.patch_dim());
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  const int ps = c.patch_size;
  const int grid_w = c.image_width / ps;
  if (B == 0) throw Error(ErrorCode::ShapeMismatch, "empty image batch");

  Mat patches(B * P, D);
  for (std::size_t b = 0; b < B; ++b) {
    const Image& img = images[b];
    if (img.height != c.image_height || img.width != c.image_width ||
        img.pixels.size() != img.area() * Image::kChannels)
      throw Error(ErrorCode::ShapeMismatch,
                  "image " + std::to_string(b) + " is " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + ", model expects " +
                      std::to_string(c.image_height) + "x" + std::to_string(c.image_width));
    for (std::size_t p = 0; p < P; ++p) {
      const int gy = static_cast<int>(p) / grid_w;
      const int gx = static_cast<int>(p) % grid_w;
      auto row = patches.row(b * P + p);
      std::size_t k = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int ch = 0; ch < Image::kChannels; ++ch)
            row[k++] = img.at(gy * ps + y, gx * ps + x, ch);
    }
  }

  Mat pre = matmul_nt(patches, params["image.patch.weight"]);
  const Mat& bias = params["image.patch.bias"];
  const Mat& pos = params["image.patch.pos"];
  Mat pooled(B, h);
  const double inv_p = 1.0 / static_cast<double>(P);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t j = 0; j < h; ++j) {
        double& v = pre(b * P + p, j);
        v += bias(0, j) + pos(p, j);
        pooled(b, j) += std::max(v, 0.0) * inv_p;
      }

  std::vector<Mat> ins, pres;
  Mat top = hidden_forward(params, "image.hidden.", c.image_layers, std::move(pooled), nullptr,
                           ins, pres, nullptr);
  std::vector<double> norms;
  Mat features = l2_normalize_rows(project(params, "image.", top), &norms);
  if (cache) {
    cache->batch = B;
    cache->patches = std::move(patches);
    cache->patch_pre = std::move(pre);
    cache->hidden_in = std::move(ins);
    cache->hidden_pre = std::move(pres);
    cache->top = std::move(top);
    cache->norms = std::move(norms);
    cache->features = features;
  }
  return features;
}

void backward_images(const ModelParams& params, const ImageCache& cache, const Mat& grad_features,
                     Grads& grads) {
  const ModelConfig& c = params.config;
  const auto P = static_cast<std::size_t>(c.num_patches());
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  if (grad_features.rows() != cache.batch || !grad_features.same_shape(cache.features))
    throw Error(ErrorCode::ShapeMismatch, "image gradient does not match the cached batch");

  const Mat d_out = l2_normalize_rows_backward(cache.features, cache.norms, grad_features);
  Mat dh = project_backward(params, "image.", cache.top, d_out, grads);
  dh = hidden_backward(params, "image.hidden.", c.image_layers, cache.hidden_in, cache.hidden_pre,
                       nullptr, std::move(dh), grads);

  Mat da(cache.batch * P, h);
  const double inv_p = 1.0 / static_cast<double>(P);
  Mat& d_bias = grads[params.index("image.patch.bias")];
  Mat& d_pos = grads[params.index("image.patch.pos")];
  for (std::size_t b = 0; b < cache.batch; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t j = 0; j < h; ++j) {
        if (cache.patch_pre(b * P + p, j) <= 0.0) continue;
        const double g = dh(b, j) * inv_p;
        da(b * P + p, j) = g;
        d_bias(0, j) += g;
        d_pos(p, j) += g;
      }
  grads[params.index("image.patch.weight")] += matmul_tn(da, cache.patches);
}

Mat encode_texts(const ModelParams& params, std::span<const std::vector<std::size_t>> ids,
                 Rng* dropout_rng, TextCache* cache) {
  const ModelConfig& c = params.config;
  const auto B = ids.size();
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  if (B == 0) throw Error(ErrorCode::ShapeMismatch, "empty text batch");
  const Mat& embed = params["text.embed.weight"];

  Mat pooled(B, h);
  for (std::size_t b = 0; b < B; ++b) {
    if (ids[b].empty())
      throw Error(ErrorCode::ShapeMismatch, "text " + std::to_string(b) + " has no tokens");
    const double inv = 1.0 / static_cast<double>(ids[b].size());
    for (std::size_t id : ids[b]) {
      if (id >= embed.rows())
        throw Error(ErrorCode::ShapeMismatch, "token id " + std::to_string(id) + " out of range");
      for (std::size_t j = 0; j < h; ++j) pooled(b, j) += embed(id, j) * inv;
    }
  }

  std::vector<Mat> ins, pres, masks;
  Mat top = hidden_forward(params, "text.hidden.", c.text_layers, std::move(pooled), dropout_rng,
                           ins, pres, &masks);
  std::vector<double> norms;
  Mat features = l2_normalize_rows(project(params, "text.", top), &norms);
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->hidden_in = std::move(ins);
    cache->hidden_pre = std::move(pres);
    cache->masks = std::move(masks);
    cache->top = std::move(top);
    cache->norms = std::move(norms);
    cache->features = features;
  }
  return features;
}

void backward_texts(const ModelParams& params, const TextCache& cache, const Mat& grad_features,
                    Grads& grads) {
  const ModelConfig& c = params.config;
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  if (grad_features.rows() != cache.ids.size() || !grad_features.same_shape(cache.features))
    throw Error(ErrorCode::ShapeMismatch, "text gradient does not match the cached batch");

  const Mat d_out = l2_normalize_rows_backward(cache.features, cache.norms, grad_features);
  Mat dh = project_backward(params, "text.", cache.top, d_out, grads);
  dh = hidden_backward(params, "text.hidden.", c.text_layers, cache.hidden_in, cache.hidden_pre,
                       &cache.masks, std::move(dh), grads);

  Mat& d_embed = grads[params.index("text.embed.weight")];
  for (std::size_t b = 0; b < cache.ids.size(); ++b) {
    const double inv = 1.0 / static_cast<double>(cache.ids[b].size());
    for (std::size_t id : cache.ids[b])
      for (std::size_t j = 0; j < h; ++j) d_embed(id, j) += dh(b, j) * inv;
  }
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "tbps-checkpoint";
constexpr int kVersion = 1;

void expect(std::istream& in, std::string_view word) {
  std::string got;
  if (!(in >> got) || got != word)
    throw Error(ErrorCode::ParseError,
                "checkpoint: expected '" + std::string(word) + "', found '" + got + "'");
}

template <typename T>
T read_value(std::istream& in, std::string_view what) {
  T v{};
  if (!(in >> v)) throw Error(ErrorCode::ParseError, "checkpoint: cannot read " + std::string(what));
  return v;
}

void write_set(std::ostream& out, std::string_view key, const std::set<std::string>& s) {
  out << key << ' ' << s.size();
  for (const auto& m : s) out << ' ' << m;
  out << '\n';
}

std::set<std::string> read_set(std::istream& in, std::string_view key) {
  expect(in, key);
  const auto n = read_value<std::size_t>(in, key);
  std::set<std::string> s;
  for (std::size_t i = 0; i < n; ++i) s.insert(read_value<std::string>(in, key));
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const ModelParams& p = ckpt.params;
  const ModelConfig& c = p.config;
  out << kMagic << ' ' << kVersion << '\n';
  out << "config " << c.image_height << ' ' << c.image_width << ' ' << c.patch_size << ' '
      << c.embed_dim << ' ' << c.hidden_dim << ' ' << c.image_layers << ' ' << c.text_layers
      << ' ' << hex_of(c.dropout) << ' ' << hex_of(c.tau_init) << '\n';
  out << "vocab " << ckpt.vocab.size() << '\n';
  for (const auto& w : ckpt.vocab.words()) out << w << '\n';
  write_set(out, "frozen", p.frozen);
  write_set(out, "dropped", p.dropped);
  out << "tensors " << p.tensors.size() << '\n';
  for (const auto& t : p.tensors) {
    out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
    for (std::size_t r = 0; r < t.value.rows(); ++r) {
      for (std::size_t col = 0; col < t.value.cols(); ++col)
        out << (col ? " " : "") << hex_of(t.value(r, col));
      out << '\n';
    }
  }
  out << "end\n";
}

Checkpoint load_checkpoint(std::istream& in) {
  expect(in, kMagic);
  const int version = read_value<int>(in, "version");
  if (version != kVersion)
    throw Error(ErrorCode::ParseError, "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ModelConfig& c = ckpt.params.config;
  expect(in, "config");
  c.image_height = read_value<int>(in, "image_height");
  c.image_width = read_value<int>(in, "image_width");
  c.patch_size = read_value<int>(in, "patch_size");
  c.embed_dim = read_value<int>(in, "embed_dim");
  c.hidden_dim = read_value<int>(in, "hidden_dim");
  c.image_layers = read_value<int>(in, "image_layers");
  c.text_layers = read_value<int>(in, "text_layers");
  c.dropout = double_of_hex(read_value<std::string>(in, "dropout"));
  c.tau_init = double_of_hex(read_value<std::string>(in, "tau_init"));
  c.validate();

  expect(in, "vocab");
  const auto vsize = read_value<std::size_t>(in, "vocab size");
  std::vector<std::string> words;
  for (std::size_t i = 0; i < vsize; ++i) words.push_back(read_value<std::string>(in, "word"));
  ckpt.vocab = Vocab::from_words(std::move(words));
  ckpt.params.vocab_size = ckpt.vocab.size();

  ckpt.params.frozen = read_set(in, "frozen");
  ckpt.params.dropped = read_set(in, "dropped");

  expect(in, "tensors");
  const auto n = read_value<std::size_t>(in, "tensor count");
  for (std::size_t i = 0; i < n; ++i) {
    expect(in, "tensor");
    Tensor t;
    t.name = read_value<std::string>(in, "tensor name");
    const auto rows = read_value<std::size_t>(in, "rows");
    const auto cols = read_value<std::size_t>(in, "cols");
    t.value = Mat(rows, cols);
    for (double& v : t.value.values()) v = double_of_hex(read_value<std::string>(in, t.name));
    ckpt.params.tensors.push_back(std::move(t));
  }
  expect(in, "end");

  // Structural check against a fresh model of the same shape.
  const ModelParams ref = init_params(c, ckpt.params.vocab_size, Rng(0));
  if (ref.tensors.size() != ckpt.params.tensors.size())
    throw Error(ErrorCode::ParseError, "checkpoint: tensor count does not match the config");
  for (std::size_t i = 0; i < ref.tensors.size(); ++i) {
    const auto& want = ref.tensors[i];
    const auto& got = ckpt.params.tensors[i];
    if (want.name != got.name || !want.value.same_shape(got.value))
      throw Error(ErrorCode::ParseError, "checkpoint: tensor '" + got.name + "' does not match the config");
  }
  for (const auto& m : ckpt.params.frozen)
    if (!ckpt.params.has_module(m)) throw Error(ErrorCode::ParseError, "checkpoint: unknown frozen module " + m);
  for (const auto& m : ckpt.params.dropped)
    if (!ckpt.params.has_module(m)) throw Error(ErrorCode::ParseError, "checkpoint: unknown dropped module " + m);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  save_checkpoint(ckpt, out);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace tbps

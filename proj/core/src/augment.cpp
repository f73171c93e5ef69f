// SPDX-License-Identifier: Apache-2.0
#include "tbps/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "tbps/error.hpp"

namespace tbps {

void Image::clamp() {
  for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

namespace {

struct KindInfo {
  AugKind kind;
  std::string_view name;
  std::string_view tag;
};

constexpr std::array<KindInfo, 9> kKinds = {{
    {AugKind::RandomResizedCrop, "random_resized_crop", "RRC"},
    {AugKind::RandomErasing, "random_erasing", "RE"},
    {AugKind::RandomGrayscale, "random_grayscale", "RG"},
    {AugKind::GaussianBlur, "gaussian_blur", "GB"},
    {AugKind::ColorJitterBCS, "color_jitter_bcs", "CJ-BCS"},
    {AugKind::ColorJitterHue, "color_jitter_hue", "CJ-Hue"},
    {AugKind::RandomHorizontalFlip, "random_horizontal_flip", "RHF"},
    {AugKind::RandomVerticalFlip, "random_vertical_flip", "RVF"},
    {AugKind::RandomRotation, "random_rotation", "RR"},
}};

void bad_param(const std::string& what) { throw Error(ErrorCode::BadParam, what); }

double luminance(double r, double g, double b) {
  if (r == g && g == b) return r;
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Bilinear sample with clamp-to-edge.
double sample_clamped(const Image& img, double y, double x, int c) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  if (fy == 0.0 && fx == 0.0) return img.at(y0, x0, c);
  const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
  const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
  return (1.0 - fy) * top + fy * bot;
}

// Bilinear sample treating everything outside the raster as zero.
double sample_zero(const Image& img, double y, double x, int c) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  const auto px = [&](int yy, int xx) {
    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
    return img.at(yy, xx, c);
  };
  if (fy == 0.0 && fx == 0.0) return px(y0, x0);
  return (1.0 - fy) * ((1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = h * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

std::vector<std::string> split_words(const std::string& phrase) {
  std::vector<std::string> out;
  std::istringstream in(phrase);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

std::string_view aug_name(AugKind kind) {
  for (const auto& k : kKinds)
    if (k.kind == kind) return k.name;
  return "unknown";
}

AugKind parse_aug_kind(std::string_view name) {
  for (const auto& k : kKinds)
    if (k.name == name || k.tag == name) return k.kind;
  throw Error(ErrorCode::BadParam, "unknown image augmentation '" + std::string(name) + "'");
}

double AugPolicy::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end())
    bad_param(std::string(aug_name(kind)) + " has no parameter '" + name + "'");
  return it->second;
}

AugPolicy default_policy(AugKind kind) {
  AugPolicy p;
  p.kind = kind;
  switch (kind) {
    case AugKind::RandomResizedCrop:
      p.params = {{"scale_min", 0.9}, {"ratio_lo", 3.0 / 4.0}, {"ratio_hi", 4.0 / 3.0}};
      break;
    case AugKind::RandomErasing:
      p.params = {{"area_lo", 0.10}, {"area_hi", 0.20}, {"p", 0.5}};
      break;
    case AugKind::RandomGrayscale: p.params = {{"p", 0.1}}; break;
    case AugKind::GaussianBlur:
      p.params = {{"kernel", 3.0}, {"sigma_lo", 0.1}, {"sigma_hi", 2.0}};
      break;
    case AugKind::ColorJitterBCS: p.params = {{"x", 0.1}}; break;
    case AugKind::ColorJitterHue: p.params = {{"x", 0.1}}; break;
    case AugKind::RandomHorizontalFlip: p.params = {{"p", 0.5}}; break;
    case AugKind::RandomVerticalFlip: p.params = {{"p", 0.5}}; break;
    case AugKind::RandomRotation: p.params = {{"degrees", 15.0}}; break;
  }
  return p;
}

void validate_policy(const AugPolicy& policy) {
  const auto name = std::string(aug_name(policy.kind));
  if (!(policy.probability >= 0.0 && policy.probability <= 1.0))
    bad_param(name + ": probability must be in [0, 1]");
  const auto prob = [&](const char* key) {
    const double v = policy.param(key);
    if (!(v >= 0.0 && v <= 1.0)) bad_param(name + ": " + key + " must be in [0, 1]");
  };
  switch (policy.kind) {
    case AugKind::RandomResizedCrop: {
      const double s = policy.param("scale_min");
      if (!(s > 0.0 && s <= 1.0)) bad_param(name + ": scale_min must be in (0, 1]");
      const double lo = policy.param("ratio_lo");
      const double hi = policy.param("ratio_hi");
      if (!(lo > 0.0 && lo <= hi)) bad_param(name + ": need 0 < ratio_lo <= ratio_hi");
      break;
    }
    case AugKind::RandomErasing: {
      const double lo = policy.param("area_lo");
      const double hi = policy.param("area_hi");
      if (!(lo > 0.0 && lo <= hi && hi < 1.0))
        bad_param(name + ": need 0 < area_lo <= area_hi < 1");
      prob("p");
      break;
    }
    case AugKind::RandomGrayscale:
    case AugKind::RandomHorizontalFlip:
    case AugKind::RandomVerticalFlip: prob("p"); break;
    case AugKind::GaussianBlur: {
      const double k = policy.param("kernel");
      if (k < 3 || std::floor(k) != k || static_cast<int>(k) % 2 == 0)
        bad_param(name + ": kernel must be odd and >= 3");
      const double lo = policy.param("sigma_lo");
      const double hi = policy.param("sigma_hi");
      if (!(lo > 0.0 && lo <= hi)) bad_param(name + ": need 0 < sigma_lo <= sigma_hi");
      break;
    }
    case AugKind::ColorJitterBCS:
      if (!(policy.param("x") >= 0.0 && policy.param("x") <= 1.0))
        bad_param(name + ": x must be in [0, 1]");
      break;
    case AugKind::ColorJitterHue:
      if (!(policy.param("x") >= 0.0 && policy.param("x") <= 0.5))
        bad_param(name + ": x must be in [0, 0.5]");
      break;
    case AugKind::RandomRotation:
      if (!(policy.param("degrees") >= 0.0)) bad_param(name + ": degrees must be >= 0");
      break;
  }
}

MagnitudeRange magnitude_range(AugKind kind) {
  switch (kind) {
    case AugKind::RandomResizedCrop: return {"scale_min", 0.3, 1.0};
    case AugKind::RandomErasing: return {"area_hi", 0.02, 0.30};
    case AugKind::RandomGrayscale: return {"p", 0.0, 1.0};
    case AugKind::GaussianBlur: return {"sigma_hi", 0.1, 2.0};
    case AugKind::ColorJitterBCS: return {"x", 0.0, 0.4};
    case AugKind::ColorJitterHue: return {"x", 0.0, 0.4};
    case AugKind::RandomHorizontalFlip: return {"p", 0.0, 1.0};
    case AugKind::RandomVerticalFlip: return {"p", 0.0, 1.0};
    case AugKind::RandomRotation: return {"degrees", 0.0, 30.0};
  }
  return {"", 0.0, 0.0};
}

std::vector<AugPolicy> production_image_pool() {
  return {default_policy(AugKind::RandomResizedCrop),
          default_policy(AugKind::RandomErasing),
          default_policy(AugKind::RandomGrayscale),
          default_policy(AugKind::ColorJitterBCS),
          default_policy(AugKind::RandomHorizontalFlip),
          default_policy(AugKind::RandomRotation)};
}

CropBox sample_crop_box(int height, int width, Rng& rng, double scale_min, double ratio_lo,
                        double ratio_hi) {
  if (!(scale_min > 0.0 && scale_min <= 1.0)) bad_param("scale_min must be in (0, 1]");
  const double log_lo = std::log(ratio_lo);
  const double log_hi = std::log(ratio_hi);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double scale = rng.uniform(scale_min, 1.0);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const double wf = std::sqrt(scale * ratio);
    const double hf = std::sqrt(scale / ratio);
    if (wf > 1.0 || hf > 1.0) continue;
    CropBox box;
    box.height = hf * height;
    box.width = wf * width;
    box.top = rng.uniform(0.0, height - box.height);
    box.left = rng.uniform(0.0, width - box.width);
    return box;
  }
  return {0.0, 0.0, static_cast<double>(height), static_cast<double>(width)};
}

std::optional<PixelBox> sample_erase_box(int height, int width, Rng& rng, double area_lo,
                                         double area_hi) {
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(0.3);
  const double log_hi = std::log(10.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(area_lo, area_hi);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const int h = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int w = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (h <= 0 || w <= 0 || h >= height || w >= width) continue;
    const double frac = static_cast<double>(h) * w / area;
    if (frac < area_lo || frac > area_hi) continue;
    PixelBox box;
    box.height = h;
    box.width = w;
    box.top = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
    box.left = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
    return box;
  }
  return std::nullopt;
}

Image resample(const Image& img, const CropBox& box, int height, int width) {
  Image out(height, width);
  const double sy = box.height / height;
  const double sx = box.width / width;
  for (int y = 0; y < height; ++y) {
    const double src_y = box.top + (y + 0.5) * sy - 0.5;
    for (int x = 0; x < width; ++x) {
      const double src_x = box.left + (x + 0.5) * sx - 0.5;
      for (int c = 0; c < Image::kChannels; ++c)
        out.at(y, x, c) = sample_clamped(img, src_y, src_x, c);
    }
  }
  out.clamp();
  return out;
}

Image random_resized_crop(const Image& img, Rng& rng, double scale_min, double ratio_lo,
                          double ratio_hi) {
  const CropBox box = sample_crop_box(img.height, img.width, rng, scale_min, ratio_lo, ratio_hi);
  return resample(img, box, img.height, img.width);
}

Image random_erasing(const Image& img, Rng& rng, double area_lo, double area_hi, double p) {
  if (!(area_lo > 0.0 && area_lo <= area_hi && area_hi < 1.0))
    bad_param("random_erasing: need 0 < area_lo <= area_hi < 1");
  if (!rng.bernoulli(p)) return img;
  const auto box = sample_erase_box(img.height, img.width, rng, area_lo, area_hi);
  if (!box) return img;
  Image out = img;
  for (int y = box->top; y < box->top + box->height; ++y)
    for (int x = box->left; x < box->left + box->width; ++x)
      for (int c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = rng.uniform();
  return out;
}

Image grayscale(const Image& img) {
  Image out = img;
  for (std::size_t i = 0; i < img.area(); ++i) {
    const double* px = &img.pixels[i * 3];
    const double l = luminance(px[0], px[1], px[2]);
    out.pixels[i * 3] = out.pixels[i * 3 + 1] = out.pixels[i * 3 + 2] = l;
  }
  out.clamp();
  return out;
}

Image random_grayscale(const Image& img, Rng& rng, double p) {
  if (!rng.bernoulli(p)) return img;
  return grayscale(img);
}

Image gaussian_blur(const Image& img, Rng& rng, int kernel, double sigma_lo, double sigma_hi) {
  if (kernel < 3 || kernel % 2 == 0) bad_param("gaussian_blur: kernel must be odd and >= 3");
  if (!(sigma_lo > 0.0 && sigma_lo <= sigma_hi)) bad_param("gaussian_blur: bad sigma range");
  const double sigma = rng.uniform(sigma_lo, sigma_hi);
  const int half = kernel / 2;
  std::vector<double> w(static_cast<std::size_t>(kernel));
  double total = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - half;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= total;

  const auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Image tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k)
          acc += w[static_cast<std::size_t>(k + half)] * img.at(y, reflect(x + k, img.width), c);
        tmp.at(y, x, c) = acc;
      }
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k)
          acc += w[static_cast<std::size_t>(k + half)] * tmp.at(reflect(y + k, img.height), x, c);
        out.at(y, x, c) = acc;
      }
  out.clamp();
  return out;
}

Image color_jitter_bcs(const Image& img, Rng& rng, double x) {
  if (!(x >= 0.0 && x <= 1.0)) bad_param("color_jitter_bcs: x must be in [0, 1]");
  std::array<int, 3> order = {0, 1, 2};
  rng.shuffle(std::span<int>(order));
  std::array<double, 3> factor{};
  for (double& f : factor) f = std::max(0.0, rng.uniform(1.0 - x, 1.0 + x));

  Image out = img;
  for (int op : order) {
    const double f = factor[static_cast<std::size_t>(op)];
    if (op == 0) {
      for (double& v : out.pixels) v *= f;
    } else if (op == 1) {
      double mean = 0.0;
      for (std::size_t i = 0; i < out.area(); ++i)
        mean += luminance(out.pixels[i * 3], out.pixels[i * 3 + 1], out.pixels[i * 3 + 2]);
      mean /= static_cast<double>(out.area());
      for (double& v : out.pixels) v = f * v + (1.0 - f) * mean;
    } else {
      for (std::size_t i = 0; i < out.area(); ++i) {
        double* px = &out.pixels[i * 3];
        const double l = luminance(px[0], px[1], px[2]);
        for (int c = 0; c < 3; ++c) px[c] = f * px[c] + (1.0 - f) * l;
      }
    }
    out.clamp();
  }
  return out;
}

Image color_jitter_hue(const Image& img, Rng& rng, double x) {
  if (!(x >= 0.0 && x <= 0.5)) bad_param("color_jitter_hue: x must be in [0, 0.5]");
  const double shift = rng.uniform(-x, x);
  Image out = img;
  for (std::size_t i = 0; i < out.area(); ++i) {
    double* px = &out.pixels[i * 3];
    double h, s, v;
    rgb_to_hsv(px[0], px[1], px[2], h, s, v);
    h = std::fmod(h + shift + 1.0, 1.0);
    hsv_to_rgb(h, s, v, px[0], px[1], px[2]);
  }
  out.clamp();
  return out;
}

Image flip_h(const Image& img, Rng& rng, double p) {
  if (!rng.bernoulli(p)) return img;
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

Image flip_v(const Image& img, Rng& rng, double p) {
  if (!rng.bernoulli(p)) return img;
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
  return out;
}

Image rotate(const Image& img, Rng& rng, double degrees) {
  if (!(degrees >= 0.0)) bad_param("rotate: degrees must be >= 0");
  if (degrees == 0.0) return img;
  const double theta = rng.uniform(-degrees, degrees) * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // Inverse map: rotate the output coordinate back by -theta.
      const double dy = y - cy;
      const double dx = x - cx;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = sample_zero(img, sy, sx, c);
    }
  out.clamp();
  return out;
}

Image apply_policy(const AugPolicy& policy, const Image& img, Rng& rng) {
  validate_policy(policy);
  if (policy.probability < 1.0 && !rng.bernoulli(policy.probability)) return img;
  switch (policy.kind) {
    case AugKind::RandomResizedCrop:
      return random_resized_crop(img, rng, policy.param("scale_min"), policy.param("ratio_lo"),
                                 policy.param("ratio_hi"));
    case AugKind::RandomErasing:
      return random_erasing(img, rng, policy.param("area_lo"), policy.param("area_hi"),
                            policy.param("p"));
    case AugKind::RandomGrayscale: return random_grayscale(img, rng, policy.param("p"));
    case AugKind::GaussianBlur:
      return gaussian_blur(img, rng, static_cast<int>(policy.param("kernel")),
                           policy.param("sigma_lo"), policy.param("sigma_hi"));
    case AugKind::ColorJitterBCS: return color_jitter_bcs(img, rng, policy.param("x"));
    case AugKind::ColorJitterHue: return color_jitter_hue(img, rng, policy.param("x"));
    case AugKind::RandomHorizontalFlip: return flip_h(img, rng, policy.param("p"));
    case AugKind::RandomVerticalFlip: return flip_v(img, rng, policy.param("p"));
    case AugKind::RandomRotation: return rotate(img, rng, policy.param("degrees"));
  }
  return img;
}

std::vector<AugPolicy> pool_select(std::span<const AugPolicy> pool, Rng& rng, std::size_t k) {
  if (pool.size() < k)
    throw Error(ErrorCode::PoolTooSmall, "pool of " + std::to_string(pool.size()) +
                                             " cannot supply " + std::to_string(k));
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<AugPolicy> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

AugPolicy trivial_select(std::span<const AugPolicy> pool, Rng& rng) {
  if (pool.empty()) throw Error(ErrorCode::EmptyPool, "trivial_select on an empty pool");
  AugPolicy p = pool[static_cast<std::size_t>(rng.below(pool.size()))];
  const MagnitudeRange range = magnitude_range(p.kind);
  const double m = rng.uniform(range.lo, range.hi);
  p.params[range.param] = m;
  if (p.kind == AugKind::RandomErasing) {
    p.params["area_lo"] = m / 2.0;
    p.params["p"] = 1.0;
  }
  p.probability = 1.0;
  return p;
}

std::string_view image_aug_mode_name(ImageAugMode mode) {
  switch (mode) {
    case ImageAugMode::None: return "none";
    case ImageAugMode::Stack: return "stack";
    case ImageAugMode::Pool: return "pool";
    case ImageAugMode::Trivial: return "trivial";
  }
  return "none";
}

ImageAugMode parse_image_aug_mode(std::string_view name) {
  for (auto m : {ImageAugMode::None, ImageAugMode::Stack, ImageAugMode::Pool,
                 ImageAugMode::Trivial})
    if (image_aug_mode_name(m) == name) return m;
  throw Error(ErrorCode::BadParam, "unknown image augmentation mode '" + std::string(name) + "'");
}

Image ImageAugmenter::operator()(const Image& img, Rng& rng) const {
  Image out = img;
  switch (mode) {
    case ImageAugMode::None: break;
    case ImageAugMode::Stack:
      for (const auto& p : pool) out = apply_policy(p, out, rng);
      break;
    case ImageAugMode::Pool:
      for (const auto& p : pool_select(pool, rng, pool_k)) out = apply_policy(p, out, rng);
      break;
    case ImageAugMode::Trivial: out = apply_policy(trivial_select(pool, rng), out, rng); break;
  }
  out.clamp();
  return out;
}

// ---------------------------------------------------------------------------

std::size_t repetitions(double alpha, std::size_t length) {
  return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(length) + 0.5));
}

namespace {

void check_text_input(const TokenSeq& s, double alpha) {
  if (s.empty()) throw Error(ErrorCode::BadParam, "text augmentation on an empty sentence");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::BadParam, "alpha must be in [0, 1]");
}

}  // namespace

TokenSeq synonym_replacement(const TokenSeq& s, const Lexicon& lex, Rng& rng, double alpha) {
  check_text_input(s, alpha);
  const std::size_t n = repetitions(alpha, s.size());
  if (n == 0) return s;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!lex.synonyms(s.tokens[i]).empty()) candidates.push_back(i);
  rng.shuffle(std::span<std::size_t>(candidates));
  if (candidates.size() > n) candidates.resize(n);
  std::sort(candidates.begin(), candidates.end());

  TokenSeq out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (next < candidates.size() && candidates[next] == i) {
      const auto syns = lex.synonyms(s.tokens[i]);
      for (auto& w : split_words(syns[static_cast<std::size_t>(rng.below(syns.size()))]))
        out.tokens.push_back(std::move(w));
      ++next;
    } else {
      out.tokens.push_back(s.tokens[i]);
    }
  }
  return out;
}

TokenSeq random_insertion(const TokenSeq& s, const Lexicon& lex, Rng& rng, double alpha) {
  check_text_input(s, alpha);
  const std::size_t n = repetitions(alpha, s.size());
  TokenSeq out = s;
  for (std::size_t rep = 0; rep < n; ++rep) {
    std::span<const std::string> syns;
    for (int attempt = 0; attempt < 10 && syns.empty(); ++attempt)
      syns = lex.synonyms(out.tokens[static_cast<std::size_t>(rng.below(out.size()))]);
    if (syns.empty()) continue;
    const auto words = split_words(syns[static_cast<std::size_t>(rng.below(syns.size()))]);
    const auto pos = static_cast<std::ptrdiff_t>(rng.below(out.size() + 1));
    out.tokens.insert(out.tokens.begin() + pos, words.begin(), words.end());
  }
  return out;
}

TokenSeq random_swap(const TokenSeq& s, Rng& rng, double alpha) {
  check_text_input(s, alpha);
  const std::size_t n = repetitions(alpha, s.size());
  TokenSeq out = s;
  if (out.size() < 2) return out;
  for (std::size_t rep = 0; rep < n; ++rep) {
    const auto i = static_cast<std::size_t>(rng.below(out.size()));
    auto j = static_cast<std::size_t>(rng.below(out.size() - 1));
    if (j >= i) ++j;
    std::swap(out.tokens[i], out.tokens[j]);
  }
  return out;
}

TokenSeq random_deletion(const TokenSeq& s, Rng& rng, double alpha) {
  check_text_input(s, alpha);
  TokenSeq out;
  for (const auto& t : s.tokens)
    if (!rng.bernoulli(alpha)) out.tokens.push_back(t);
  if (out.empty()) out.tokens.push_back(s.tokens[static_cast<std::size_t>(rng.below(s.size()))]);
  return out;
}

TokenSeq eda(const TokenSeq& s, const Lexicon& lex, Rng& rng, double alpha, EdaOp* chosen) {
  check_text_input(s, alpha);
  const auto op = static_cast<EdaOp>(rng.below(4));
  if (chosen) *chosen = op;
  switch (op) {
    case EdaOp::SynonymReplacement: return synonym_replacement(s, lex, rng, alpha);
    case EdaOp::RandomInsertion: return random_insertion(s, lex, rng, alpha);
    case EdaOp::RandomSwap: return random_swap(s, rng, alpha);
    case EdaOp::RandomDeletion: return random_deletion(s, rng, alpha);
  }
  return s;
}

DictionaryParaphraser::DictionaryParaphraser(std::map<std::string, std::string> table)
    : table_(std::move(table)) {}

DictionaryParaphraser DictionaryParaphraser::builtin() {
  return DictionaryParaphraser({{"wearing", "dressed in"},
                                {"carrying", "holding"},
                                {"wears", "has on"},
                                {"walking", "strolling"},
                                {"this", "the"},
                                {"is", "is"}});
}

TokenSeq DictionaryParaphraser::translate(const TokenSeq& s) const {
  TokenSeq out;
  for (const auto& t : s.tokens) {
    const auto it = table_.find(t);
    if (it == table_.end()) {
      out.tokens.push_back(t);
      continue;
    }
    for (auto& w : split_words(it->second)) out.tokens.push_back(std::move(w));
  }
  if (out.empty()) throw Error(ErrorCode::TranslatorFailure, "paraphrase produced no tokens");
  return out;
}

TokenSeq back_translate(const TokenSeq& s, const Translator& translator, Rng& rng, double p,
                        std::vector<std::string>* warnings) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::BadParam, "p must be in [0, 1]");
  if (!rng.bernoulli(p)) return s;
  try {
    TokenSeq out = translator.translate(s);
    if (out.empty()) throw Error(ErrorCode::TranslatorFailure, "empty translation");
    return out;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::TranslatorFailure) throw;
    if (warnings) warnings->push_back(e.what());
    return s;
  }
}

std::string_view text_aug_name(TextAugKind kind) {
  switch (kind) {
    case TextAugKind::BackTranslation: return "back_translation";
    case TextAugKind::SynonymReplacement: return "synonym_replacement";
    case TextAugKind::RandomInsertion: return "random_insertion";
    case TextAugKind::RandomSwap: return "random_swap";
    case TextAugKind::RandomDeletion: return "random_deletion";
    case TextAugKind::Eda: return "eda";
  }
  return "unknown";
}

TextAugKind parse_text_aug_kind(std::string_view name) {
  for (auto k : {TextAugKind::BackTranslation, TextAugKind::SynonymReplacement,
                 TextAugKind::RandomInsertion, TextAugKind::RandomSwap,
                 TextAugKind::RandomDeletion, TextAugKind::Eda})
    if (text_aug_name(k) == name) return k;
  throw Error(ErrorCode::BadParam, "unknown text augmentation '" + std::string(name) + "'");
}

std::vector<TextAugPolicy> production_text_ops() {
  return {{TextAugKind::BackTranslation, 0.1}, {TextAugKind::RandomDeletion, 0.05}};
}

TokenSeq TextAugmenter::operator()(const TokenSeq& s, Rng& rng,
                                   std::vector<std::string>* warnings) const {
  static const Lexicon kEmpty;
  static const IdentityTranslator kIdentity;
  const Lexicon& lex = lexicon ? *lexicon : kEmpty;
  const Translator& tr = translator ? *translator : kIdentity;
  TokenSeq out = s;
  for (const auto& op : ops) {
    switch (op.kind) {
      case TextAugKind::BackTranslation: out = back_translate(out, tr, rng, op.alpha, warnings); break;
      case TextAugKind::SynonymReplacement: out = synonym_replacement(out, lex, rng, op.alpha); break;
      case TextAugKind::RandomInsertion: out = random_insertion(out, lex, rng, op.alpha); break;
      case TextAugKind::RandomSwap: out = random_swap(out, rng, op.alpha); break;
      case TextAugKind::RandomDeletion: out = random_deletion(out, rng, op.alpha); break;
      case TextAugKind::Eda: out = eda(out, lex, rng, op.alpha); break;
    }
  }
  return truncate(std::move(out));
}

}  // namespace tbps

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/image.hpp"
#include "tbps/rng.hpp"
#include "tbps/text.hpp"

namespace tbps {

// ---------------------------------------------------------------------------
// Image augmentations
// ---------------------------------------------------------------------------

enum class AugKind {
  RandomResizedCrop,
  RandomErasing,
  RandomGrayscale,
  GaussianBlur,
  ColorJitterBCS,
  ColorJitterHue,
  RandomHorizontalFlip,
  RandomVerticalFlip,
  RandomRotation,
};

std::string_view aug_name(AugKind kind);
/// Accepts the canonical names (e.g. "random_resized_crop") and the short
/// tags RRC, RE, RG, GB, CJ-BCS, CJ-Hue, RHF, RVF, RR.
AugKind parse_aug_kind(std::string_view name);

/// A transformation kind with its parameters. `probability` gates the whole
/// transformation; kinds with a built-in coin (erasing, grayscale, flips)
/// carry it there.
struct AugPolicy {
  AugKind kind = AugKind::RandomHorizontalFlip;
  std::map<std::string, double> params;
  double probability = 1.0;

  double param(const std::string& name) const;
  friend bool operator==(const AugPolicy&, const AugPolicy&) = default;
};

/// Policy with the production hyperparameters for `kind`.
AugPolicy default_policy(AugKind kind);
void validate_policy(const AugPolicy& policy);

/// Magnitude knob sampled by the parameter-free selector.
struct MagnitudeRange {
  std::string param;
  double lo;
  double hi;
};
MagnitudeRange magnitude_range(AugKind kind);

/// {RRC, RE, Grayscale, CJ-BCS, FlipH, Rotate}.
std::vector<AugPolicy> production_image_pool();

/// Crop rectangle in continuous pixel coordinates.
struct CropBox {
  double top = 0.0;
  double left = 0.0;
  double height = 0.0;
  double width = 0.0;
};

/// Integer rectangle.
struct PixelBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

/// Area fraction in [scale_min, 1] and aspect ratio, relative to the image's
/// own aspect, in [ratio_lo, ratio_hi]. After ten rejected attempts the whole
/// image is used.
CropBox sample_crop_box(int height, int width, Rng& rng, double scale_min,
                        double ratio_lo = 3.0 / 4.0, double ratio_hi = 4.0 / 3.0);

/// Rectangle covering an area fraction in [area_lo, area_hi] with aspect
/// h/w in [3/10, 10/3]; nullopt when ten attempts fail to fit.
std::optional<PixelBox> sample_erase_box(int height, int width, Rng& rng, double area_lo,
                                         double area_hi);

/// Bilinear resample of `box` onto a height x width raster.
Image resample(const Image& img, const CropBox& box, int height, int width);

Image random_resized_crop(const Image& img, Rng& rng, double scale_min = 0.9,
                          double ratio_lo = 3.0 / 4.0, double ratio_hi = 4.0 / 3.0);
Image random_erasing(const Image& img, Rng& rng, double area_lo = 0.10,
                     double area_hi = 0.20, double p = 0.5);
Image random_grayscale(const Image& img, Rng& rng, double p = 0.1);
Image grayscale(const Image& img);
Image gaussian_blur(const Image& img, Rng& rng, int kernel = 3, double sigma_lo = 0.1,
                    double sigma_hi = 2.0);
Image color_jitter_bcs(const Image& img, Rng& rng, double x = 0.1);
Image color_jitter_hue(const Image& img, Rng& rng, double x = 0.1);
Image flip_h(const Image& img, Rng& rng, double p = 0.5);
Image flip_v(const Image& img, Rng& rng, double p = 0.5);
Image rotate(const Image& img, Rng& rng, double degrees = 15.0);

Image apply_policy(const AugPolicy& policy, const Image& img, Rng& rng);

/// k distinct policies drawn uniformly without replacement, in draw order.
std::vector<AugPolicy> pool_select(std::span<const AugPolicy> pool, Rng& rng,
                                   std::size_t k = 2);
/// One policy with a magnitude drawn uniformly from its declared range,
/// applied unconditionally.
AugPolicy trivial_select(std::span<const AugPolicy> pool, Rng& rng);

enum class ImageAugMode { None, Stack, Pool, Trivial };
std::string_view image_aug_mode_name(ImageAugMode mode);
ImageAugMode parse_image_aug_mode(std::string_view name);

struct ImageAugmenter {
  ImageAugMode mode = ImageAugMode::None;
  std::vector<AugPolicy> pool;
  std::size_t pool_k = 2;

  Image operator()(const Image& img, Rng& rng) const;
};

// ---------------------------------------------------------------------------
// Text augmentations
// ---------------------------------------------------------------------------

/// round-half-up(alpha * L)
std::size_t repetitions(double alpha, std::size_t length);

TokenSeq synonym_replacement(const TokenSeq& s, const Lexicon& lex, Rng& rng,
                             double alpha = 0.05);
TokenSeq random_insertion(const TokenSeq& s, const Lexicon& lex, Rng& rng,
                          double alpha = 0.05);
TokenSeq random_swap(const TokenSeq& s, Rng& rng, double alpha = 0.05);
TokenSeq random_deletion(const TokenSeq& s, Rng& rng, double alpha = 0.05);

enum class EdaOp { SynonymReplacement, RandomInsertion, RandomSwap, RandomDeletion };
/// Applies one uniformly chosen EDA operation; reports the choice in `chosen`.
TokenSeq eda(const TokenSeq& s, const Lexicon& lex, Rng& rng, double alpha = 0.05,
             EdaOp* chosen = nullptr);

/// Round-trip translation service. Implementations signal failure by
/// throwing Error(TranslatorFailure).
class Translator {
 public:
  virtual ~Translator() = default;
  virtual TokenSeq translate(const TokenSeq& s) const = 0;
};

class IdentityTranslator final : public Translator {
 public:
  TokenSeq translate(const TokenSeq& s) const override { return s; }
};

/// Rewrites words through a fixed phrase table, standing in for a real
/// round trip through another language.
class DictionaryParaphraser final : public Translator {
 public:
  explicit DictionaryParaphraser(std::map<std::string, std::string> table);
  static DictionaryParaphraser builtin();
  TokenSeq translate(const TokenSeq& s) const override;

 private:
  std::map<std::string, std::string> table_;
};

TokenSeq back_translate(const TokenSeq& s, const Translator& translator, Rng& rng,
                        double p = 0.1, std::vector<std::string>* warnings = nullptr);

enum class TextAugKind {
  BackTranslation,
  SynonymReplacement,
  RandomInsertion,
  RandomSwap,
  RandomDeletion,
  Eda,
};
std::string_view text_aug_name(TextAugKind kind);
TextAugKind parse_text_aug_kind(std::string_view name);

struct TextAugPolicy {
  TextAugKind kind = TextAugKind::RandomDeletion;
  double alpha = 0.05;
  friend bool operator==(const TextAugPolicy&, const TextAugPolicy&) = default;
};

/// {back translation (0.1), random deletion (0.05)}.
std::vector<TextAugPolicy> production_text_ops();

/// Applies its ops in order, then truncates to kMaxTokens.
struct TextAugmenter {
  std::vector<TextAugPolicy> ops;
  std::shared_ptr<const Lexicon> lexicon;
  std::shared_ptr<const Translator> translator;

  TokenSeq operator()(const TokenSeq& s, Rng& rng,
                      std::vector<std::string>* warnings = nullptr) const;
};

}  // namespace tbps

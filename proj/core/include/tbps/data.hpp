// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/embedding.hpp"
#include "tbps/image.hpp"
#include "tbps/rng.hpp"

namespace tbps {

enum class Split { Train, Val, Test };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// One image-caption pair. `image_path` is kept when the image was loaded
/// from a file so that saving writes the reference back.
struct Sample {
  Image image;
  std::string image_path;
  std::string caption;
  IdentityId identity = 0;
  Split split = Split::Train;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// Row indices of `split`, in order.
  std::vector<std::size_t> rows(Split split) const;
  Dataset subset(Split split) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct ToySpec {
  int n_identities = 200;
  int images_per_identity = 3;
  int captions_per_image = 2;
  int image_height = 48;
  int image_width = 24;
  double test_fraction = 0.2;
  std::vector<std::string> colors = {"red",   "blue",  "green",  "yellow",
                                     "black", "white", "purple", "orange"};
  std::vector<std::string> upper_garments = {"shirt", "jacket", "coat"};
  std::vector<std::string> lower_garments = {"pants", "shorts", "skirt"};
  std::vector<std::string> accessories = {"none", "backpack", "hat", "handbag"};

  /// Number of identities with distinct caption word multisets.
  std::size_t capacity() const;
  void validate() const;

  friend bool operator==(const ToySpec&, const ToySpec&) = default;
};

struct ToyAttributes {
  int upper_color = 0;
  int upper_garment = 0;
  int lower_color = 0;
  int lower_garment = 0;
  int accessory = 0;

  friend bool operator==(const ToyAttributes&, const ToyAttributes&) = default;
};

struct ToyCorpus {
  Dataset dataset;
  std::map<IdentityId, ToyAttributes> attributes;
};

/// Attribute words an identity's captions always contain ("none" omitted).
std::vector<std::string> attribute_words(const ToySpec& spec, const ToyAttributes& attrs);

/// Synthetic person corpus: one distinct attribute tuple per identity, images
/// that paint the attributes as colored regions, templated captions, and an
/// identity-disjoint train/test split. Throws SpecTooLarge.
ToyCorpus generate_toy(const ToySpec& spec, Rng rng);

Image render_person(const ToySpec& spec, const ToyAttributes& attrs, Rng& rng);
std::string describe_person(const ToySpec& spec, const ToyAttributes& attrs, Rng& rng);

/// JSONL: one object per line with identity, split, caption and image, where
/// image is either a PPM path (relative to the file) or
/// {height, width, encoding: "rgb8-base64", data}.
Dataset load_jsonl(const std::string& path);
Dataset parse_jsonl(std::string_view text, const std::string& base_dir = ".");
void save_jsonl(const Dataset& dataset, const std::string& path);
std::string to_jsonl(const Dataset& dataset);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Pixels are quantized to 8 bits per channel.
std::vector<std::uint8_t> image_to_rgb8(const Image& img);
Image image_from_rgb8(int height, int width, const std::vector<std::uint8_t>& bytes);
Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

/// Keeps whole training identities, drawn in random order, until at least
/// `fraction` of the training rows are covered. Other splits are untouched
/// and row order is preserved. Throws FractionOutOfRange.
Dataset fewshot_subsample(const Dataset& dataset, double fraction, Rng rng);

}  // namespace tbps

// SPDX-License-Identifier: Apache-2.0
#include "tbps/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tbps/error.hpp"

namespace tbps {

using nlohmann::json;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  for (auto s : {Split::Train, Split::Val, Split::Test})
    if (split_name(s) == name) return s;
  throw Error(ErrorCode::ParseError, "unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> Dataset::rows(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

Dataset Dataset::subset(Split split) const {
  Dataset out;
  for (const auto& s : samples)
    if (s.split == split) out.samples.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

namespace {

using Rgb = std::array<double, 3>;

Rgb color_rgb(const std::string& name) {
  static const std::map<std::string, Rgb> kTable = {
      {"red", {0.85, 0.10, 0.10}},   {"blue", {0.10, 0.20, 0.85}},
      {"green", {0.10, 0.65, 0.20}}, {"yellow", {0.95, 0.85, 0.10}},
      {"black", {0.05, 0.05, 0.05}}, {"white", {0.95, 0.95, 0.95}},
      {"purple", {0.55, 0.15, 0.70}}, {"orange", {0.95, 0.50, 0.05}},
      {"pink", {0.95, 0.55, 0.70}},  {"brown", {0.45, 0.28, 0.12}},
      {"gray", {0.50, 0.50, 0.50}},  {"grey", {0.50, 0.50, 0.50}},
  };
  const auto it = kTable.find(name);
  if (it != kTable.end()) return it->second;
  // Unlisted color words get a stable pseudo-random color.
  std::uint64_t h = 0;
  for (unsigned char ch : name) h = mix64(h ^ ch);
  Rng rng(h);
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

void fill_rect(Image& img, int top, int left, int bottom, int right, const Rgb& c) {
  top = std::max(top, 0);
  left = std::max(left, 0);
  bottom = std::min(bottom, img.height);
  right = std::min(right, img.width);
  for (int y = top; y < bottom; ++y)
    for (int x = left; x < right; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[static_cast<std::size_t>(ch)];
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Identity key: caption word multiset of the attribute words.
std::vector<std::string> attribute_key(const ToySpec& spec, const ToyAttributes& a) {
  auto w = attribute_words(spec, a);
  std::sort(w.begin(), w.end());
  return w;
}

std::string pick(Rng& rng, std::initializer_list<const char*> options) {
  const auto i = static_cast<std::size_t>(rng.below(options.size()));
  return *(options.begin() + static_cast<std::ptrdiff_t>(i));
}

}  // namespace

std::size_t ToySpec::capacity() const {
  std::set<std::vector<std::string>> keys;
  ToyAttributes a;
  for (a.upper_color = 0; a.upper_color < static_cast<int>(colors.size()); ++a.upper_color)
    for (a.upper_garment = 0; a.upper_garment < static_cast<int>(upper_garments.size());
         ++a.upper_garment)
      for (a.lower_color = 0; a.lower_color < static_cast<int>(colors.size()); ++a.lower_color)
        for (a.lower_garment = 0; a.lower_garment < static_cast<int>(lower_garments.size());
             ++a.lower_garment)
          for (a.accessory = 0; a.accessory < static_cast<int>(accessories.size()); ++a.accessory)
            keys.insert(attribute_key(*this, a));
  return keys.size();
}

void ToySpec::validate() const {
  if (n_identities < 1 || images_per_identity < 1 || captions_per_image < 1)
    throw Error(ErrorCode::BadConfig, "toy counts must be positive");
  if (image_height < 16 || image_width < 8)
    throw Error(ErrorCode::BadConfig, "toy images must be at least 16x8");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw Error(ErrorCode::BadConfig, "test_fraction must be in [0, 1)");
  if (colors.empty() || upper_garments.empty() || lower_garments.empty() || accessories.empty())
    throw Error(ErrorCode::BadConfig, "attribute vocabularies must not be empty");
  if (static_cast<std::size_t>(n_identities) > capacity())
    throw Error(ErrorCode::SpecTooLarge, std::to_string(n_identities) +
                                             " identities requested, attribute space holds " +
                                             std::to_string(capacity()));
}

std::vector<std::string> attribute_words(const ToySpec& spec, const ToyAttributes& a) {
  std::vector<std::string> w = {spec.colors.at(static_cast<std::size_t>(a.upper_color)),
                                spec.upper_garments.at(static_cast<std::size_t>(a.upper_garment)),
                                spec.colors.at(static_cast<std::size_t>(a.lower_color)),
                                spec.lower_garments.at(static_cast<std::size_t>(a.lower_garment))};
  const std::string& acc = spec.accessories.at(static_cast<std::size_t>(a.accessory));
  if (acc != "none") w.push_back(acc);
  return w;
}

Image render_person(const ToySpec& spec, const ToyAttributes& a, Rng& rng) {
  const int H = spec.image_height;
  const int W = spec.image_width;
  const double gray = rng.uniform(0.35, 0.65);
  Image img(H, W, gray);

  const int dy = static_cast<int>(rng.below(5)) - 2;
  const int dx = static_cast<int>(rng.below(5)) - 2;
  // Body layout in fractions of the raster.
  const auto Y = [&](double f) { return static_cast<int>(std::lround(f * H)) + dy; };
  const auto X = [&](double f) { return static_cast<int>(std::lround(f * W)) + dx; };

  const Rgb skin = {0.87, 0.70, 0.58};
  const Rgb upper = color_rgb(spec.colors[static_cast<std::size_t>(a.upper_color)]);
  const Rgb lower = color_rgb(spec.colors[static_cast<std::size_t>(a.lower_color)]);
  const std::string& ug = spec.upper_garments[static_cast<std::size_t>(a.upper_garment)];
  const std::string& lg = spec.lower_garments[static_cast<std::size_t>(a.lower_garment)];
  const std::string& acc = spec.accessories[static_cast<std::size_t>(a.accessory)];

  fill_rect(img, Y(0.04), X(0.33), Y(0.19), X(0.67), skin);  // head
  // Legs and feet first; garments paint over them.
  fill_rect(img, Y(0.52), X(0.29), Y(0.92), X(0.46), skin);
  fill_rect(img, Y(0.52), X(0.54), Y(0.92), X(0.71), skin);
  fill_rect(img, Y(0.92), X(0.25), Y(0.97), X(0.75), {0.15, 0.1, 0.08});

  const Rgb dark = {0.12, 0.12, 0.12};
  if (lg == "shorts") {
    fill_rect(img, Y(0.52), X(0.25), Y(0.68), X(0.75), lower);
  } else if (lg == "skirt") {
    fill_rect(img, Y(0.52), X(0.21), Y(0.60), X(0.79), lower);
    fill_rect(img, Y(0.60), X(0.08), Y(0.76), X(0.92), lower);
  } else {
    fill_rect(img, Y(0.52), X(0.25), Y(0.58), X(0.75), lower);
    fill_rect(img, Y(0.58), X(0.25), Y(0.92), X(0.46), lower);
    fill_rect(img, Y(0.58), X(0.54), Y(0.92), X(0.75), lower);
  }

  if (ug == "coat") {
    fill_rect(img, Y(0.21), X(0.13), Y(0.74), X(0.87), upper);
    fill_rect(img, Y(0.44), X(0.13), Y(0.48), X(0.87), dark);  // belt
  } else if (ug == "jacket") {
    fill_rect(img, Y(0.21), X(0.04), Y(0.52), X(0.96), upper);
    for (int x = X(0.04) + 1; x < X(0.96); x += 3)  // quilted stripes
      fill_rect(img, Y(0.21), x, Y(0.52), x + 1, dark);
  } else {
    fill_rect(img, Y(0.21), X(0.25), Y(0.50), X(0.75), upper);
    fill_rect(img, Y(0.21), X(0.13), Y(0.29), X(0.25), upper);  // sleeves
    fill_rect(img, Y(0.21), X(0.75), Y(0.29), X(0.87), upper);
  }

  if (acc == "backpack") {
    fill_rect(img, Y(0.23), X(0.75), Y(0.50), X(1.0), {0.36, 0.22, 0.08});
  } else if (acc == "hat") {
    fill_rect(img, Y(0.0), X(0.29), Y(0.08), X(0.71), {0.10, 0.45, 0.50});
    fill_rect(img, Y(0.08), X(0.17), Y(0.11), X(0.83), {0.10, 0.45, 0.50});
  } else if (acc == "handbag") {
    fill_rect(img, Y(0.40), X(0.0), Y(0.58), X(0.25), {0.75, 0.10, 0.45});
  }

  for (double& v : img.pixels) v = quantize(v + 0.03 * rng.normal());
  return img;
}

std::string describe_person(const ToySpec& spec, const ToyAttributes& a, Rng& rng) {
  const std::string& uc = spec.colors[static_cast<std::size_t>(a.upper_color)];
  const std::string& ug = spec.upper_garments[static_cast<std::size_t>(a.upper_garment)];
  const std::string& lc = spec.colors[static_cast<std::size_t>(a.lower_color)];
  const std::string& lg = spec.lower_garments[static_cast<std::size_t>(a.lower_garment)];
  const std::string& acc = spec.accessories[static_cast<std::size_t>(a.accessory)];

  std::string top = uc + " " + ug;
  std::string bottom = lc + " " + lg;
  std::string extra;
  if (acc == "backpack") {
    extra = pick(rng, {" carrying a backpack", " with a backpack on the back"});
  } else if (acc == "hat") {
    extra = pick(rng, {" and a hat", " with a hat on the head"});
  } else if (acc == "handbag") {
    extra = pick(rng, {" holding a handbag", " with a handbag"});
  } else if (acc != "none") {
    extra = " with a " + acc;
  }

  switch (rng.below(5)) {
    case 0: return "A person wearing a " + top + " and " + bottom + extra + ".";
    case 1: return "The pedestrian has on a " + top + " with " + bottom + extra + ".";
    case 2: return "This person is dressed in a " + top + " and " + bottom + extra + ".";
    case 3: return "Someone in a " + top + " walking in " + bottom + extra + ".";
    default: return "A " + top + " over " + bottom + extra + ", walking down the street.";
  }
}

ToyCorpus generate_toy(const ToySpec& spec, Rng rng) {
  spec.validate();
  Rng attr_rng = rng.split(1);
  Rng split_rng = rng.split(2);

  // Draw distinct attribute keys by rejection; the space is small enough
  // that this terminates quickly whenever validate() passed.
  std::vector<ToyAttributes> people;
  std::set<std::vector<std::string>> used;
  while (people.size() < static_cast<std::size_t>(spec.n_identities)) {
    ToyAttributes a;
    a.upper_color = static_cast<int>(attr_rng.below(spec.colors.size()));
    a.upper_garment = static_cast<int>(attr_rng.below(spec.upper_garments.size()));
    a.lower_color = static_cast<int>(attr_rng.below(spec.colors.size()));
    a.lower_garment = static_cast<int>(attr_rng.below(spec.lower_garments.size()));
    a.accessory = static_cast<int>(attr_rng.below(spec.accessories.size()));
    if (used.insert(attribute_key(spec, a)).second) people.push_back(a);
  }

  std::vector<std::size_t> order(people.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  split_rng.shuffle(std::span<std::size_t>(order));
  const auto n_test = static_cast<std::size_t>(
      std::lround(spec.test_fraction * static_cast<double>(people.size())));
  std::vector<Split> split_of(people.size(), Split::Train);
  for (std::size_t i = 0; i < n_test; ++i) split_of[order[i]] = Split::Test;

  ToyCorpus corpus;
  for (std::size_t id = 0; id < people.size(); ++id) {
    Rng person_rng = rng.split(1000 + id);
    corpus.attributes[static_cast<IdentityId>(id)] = people[id];
    for (int im = 0; im < spec.images_per_identity; ++im) {
      Rng img_rng = person_rng.split(static_cast<std::uint64_t>(im));
      const Image image = render_person(spec, people[id], img_rng);
      for (int c = 0; c < spec.captions_per_image; ++c) {
        Sample s;
        s.image = image;
        s.caption = describe_person(spec, people[id], img_rng);
        s.identity = static_cast<IdentityId>(id);
        s.split = split_of[id];
        corpus.dataset.samples.push_back(std::move(s));
      }
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) return {};
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw Error(ErrorCode::ParseError, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::ParseError, "invalid base64 data");
  std::size_t pad = 0;
  if (text.ends_with("==")) pad = 2;
  else if (text.ends_with("=")) pad = 1;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::vector<std::uint8_t> image_to_rgb8(const Image& img) {
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  return bytes;
}

Image image_from_rgb8(int height, int width, const std::vector<std::uint8_t>& bytes) {
  if (height <= 0 || width <= 0 ||
      bytes.size() != static_cast<std::size_t>(height) * width * Image::kChannels)
    throw Error(ErrorCode::ParseError, "raster size does not match " + std::to_string(height) +
                                           "x" + std::to_string(width));
  Image img(height, width);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw Error(ErrorCode::ParseError, path + ": only 8-bit binary PPM (P6) is supported");
  in.get();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error(ErrorCode::ParseError, path + ": truncated raster");
  return image_from_rgb8(h, w, bytes);
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const auto bytes = image_to_rgb8(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

[[noreturn]] void line_error(ErrorCode code, std::size_t line, const std::string& msg) {
  throw Error(code, "line " + std::to_string(line) + ": " + msg);
}

const json& field(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) line_error(ErrorCode::MissingField, line, std::string("missing field '") + key + "'");
  return *it;
}

Sample parse_sample(const json& obj, std::size_t line, const std::string& base_dir) {
  if (!obj.is_object()) line_error(ErrorCode::ParseError, line, "expected a JSON object");
  Sample s;
  const json& id = field(obj, "identity", line);
  if (!id.is_number_integer() || id.get<std::int64_t>() < 0)
    line_error(ErrorCode::ParseError, line, "identity must be a non-negative integer");
  s.identity = id.get<IdentityId>();

  const json& caption = field(obj, "caption", line);
  if (!caption.is_string() || caption.get<std::string>().empty())
    line_error(ErrorCode::ParseError, line, "caption must be a non-empty string");
  s.caption = caption.get<std::string>();

  const json& split = field(obj, "split", line);
  if (!split.is_string()) line_error(ErrorCode::ParseError, line, "split must be a string");
  try {
    s.split = parse_split(split.get<std::string>());
  } catch (const Error& e) {
    line_error(ErrorCode::ParseError, line, e.what());
  }

  const json& image = field(obj, "image", line);
  try {
    if (image.is_string()) {
      s.image_path = image.get<std::string>();
      const std::filesystem::path p(s.image_path);
      s.image = read_ppm(p.is_absolute() ? p.string() : (std::filesystem::path(base_dir) / p).string());
    } else if (image.is_object()) {
      const json& enc = field(image, "encoding", line);
      if (enc != "rgb8-base64")
        line_error(ErrorCode::ParseError, line, "unsupported image encoding " + enc.dump());
      const json& h = field(image, "height", line);
      const json& w = field(image, "width", line);
      const json& data = field(image, "data", line);
      if (!h.is_number_integer() || !w.is_number_integer() || !data.is_string())
        line_error(ErrorCode::ParseError, line, "malformed inline image");
      s.image = image_from_rgb8(h.get<int>(), w.get<int>(), base64_decode(data.get<std::string>()));
    } else {
      line_error(ErrorCode::ParseError, line, "image must be a path or an inline raster");
    }
  } catch (const Error& e) {
    if (std::string_view(e.what()).find("line ") != std::string_view::npos) throw;
    line_error(e.code() == ErrorCode::IoError ? ErrorCode::IoError : ErrorCode::ParseError, line, e.what());
  }
  return s;
}

}  // namespace

Dataset parse_jsonl(std::string_view text, const std::string& base_dir) {
  Dataset d;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(ErrorCode::ParseError, line_no, e.what());
    }
    d.samples.push_back(parse_sample(obj, line_no, base_dir));
  }
  return d;
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_jsonl(buf.str(), dir.empty() ? "." : dir.string());
}

std::string to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& s : dataset.samples) {
    json obj;
    obj["identity"] = s.identity;
    obj["split"] = std::string(split_name(s.split));
    obj["caption"] = s.caption;
    if (!s.image_path.empty()) {
      obj["image"] = s.image_path;
    } else {
      obj["image"] = {{"height", s.image.height},
                      {"width", s.image.width},
                      {"encoding", "rgb8-base64"},
                      {"data", base64_encode(image_to_rgb8(s.image))}};
    }
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << to_jsonl(dataset);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Few-shot
// ---------------------------------------------------------------------------

Dataset fewshot_subsample(const Dataset& dataset, double fraction, Rng rng) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(ErrorCode::FractionOutOfRange, "fraction must be in (0, 1], got " + std::to_string(fraction));
  if (fraction == 1.0) return dataset;

  std::map<IdentityId, std::size_t> rows_per_id;
  std::size_t n_train = 0;
  for (const auto& s : dataset.samples)
    if (s.split == Split::Train) {
      ++rows_per_id[s.identity];
      ++n_train;
    }
  std::vector<IdentityId> ids;
  for (const auto& [id, n] : rows_per_id) ids.push_back(id);
  rng.shuffle(std::span<IdentityId>(ids));

  const double target = fraction * static_cast<double>(n_train);
  std::set<IdentityId> keep;
  std::size_t covered = 0;
  for (IdentityId id : ids) {
    if (static_cast<double>(covered) >= target) break;
    keep.insert(id);
    covered += rows_per_id[id];
  }

  Dataset out;
  for (const auto& s : dataset.samples)
    if (s.split != Split::Train || keep.contains(s.identity)) out.samples.push_back(s);
  return out;
}

}  // namespace tbps

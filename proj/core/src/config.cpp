// SPDX-License-Identifier: Apache-2.0
#include "tbps/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "tbps/error.hpp"

namespace tbps {

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& message) {
  throw Error(ErrorCode::ConfigError, key + ": " + message);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t p = 0;
  while (p <= s.size()) {
    const auto c = std::min(s.find(',', p), s.size());
    const std::string item = trim(std::string_view(s).substr(p, c - p));
    if (!item.empty()) out.push_back(item);
    p = c + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    config_error(key, "expected a number, got '" + s + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& s, long long min) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    config_error(key, "expected an integer, got '" + s + "'");
  if (v < min) config_error(key, "must be >= " + std::to_string(min));
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  config_error(key, "expected true or false, got '" + s + "'");
}

std::string default_pool() {
  std::vector<std::string> names;
  for (const auto& p : production_image_pool()) names.emplace_back(aug_name(p.kind));
  return join(names);
}

std::string text_ops_string(const std::vector<TextAugPolicy>& ops) {
  std::vector<std::string> items;
  for (const auto& op : ops)
    items.push_back(std::string(text_aug_name(op.kind)) + ":" + format_double(op.alpha));
  return join(items);
}

ConfigValues loss_weights(std::initializer_list<std::pair<const char*, double>> active) {
  ConfigValues v;
  for (const auto& term : known_loss_terms()) v["loss." + term] = "0";
  for (const auto& [term, w] : active) v[std::string("loss.") + term] = format_double(w);
  return v;
}

// Wraps a library validation failure in a ConfigError for `section`.
void validated(const std::string& section, const std::function<void()>& check) {
  try {
    check();
  } catch (const Error& e) {
    config_error(section, e.what());
  }
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"tbps-clip", "simplified", "n-itc",
                                                 "clip-baseline", "clip-star"};
  return names;
}

ConfigValues preset_values(std::string_view name) {
  ConfigValues v;
  const std::string prod_text = text_ops_string(production_text_ops());
  const auto augmented = [&](ConfigValues w, bool soft) {
    w["loss.soft_label"] = soft ? "true" : "false";
    w["augment.image_mode"] = "pool";
    w["augment.image_pool"] = default_pool();
    w["augment.text_ops"] = prod_text;
    w["model.dropout"] = "0.05";
    w["train.freeze"] = "";
    return w;
  };
  const auto plain = [&](ConfigValues w, bool tricks) {
    w["loss.soft_label"] = tricks ? "true" : "false";
    w["augment.image_mode"] = "none";
    w["augment.text_ops"] = "";
    w["model.dropout"] = tricks ? "0.05" : "0";
    w["train.freeze"] = tricks ? "image.patch" : "";
    return w;
  };
  if (name == "tbps-clip")
    return augmented(
        loss_weights({{"n_itc", 1}, {"ss_i", 1}, {"mvs_i", 1}, {"r_itc", 1}, {"c_itc", 0.1}}), true);
  if (name == "simplified") return augmented(loss_weights({{"n_itc", 1}, {"r_itc", 1}}), true);
  if (name == "n-itc") return augmented(loss_weights({{"n_itc", 1}}), true);
  if (name == "clip-baseline") return plain(loss_weights({{"itc", 1}}), false);
  if (name == "clip-star") return plain(loss_weights({{"itc", 1}}), true);
  config_error("run.preset", "unknown preset '" + std::string(name) + "'");
}

ConfigValues default_values() {
  ConfigValues v = {
      {"run.preset", "tbps-clip"},
      {"run.seed", "0"},
      {"data.source", "toy"},
      {"data.path", ""},
      {"data.identities", "200"},
      {"data.images_per_identity", "3"},
      {"data.captions_per_image", "2"},
      {"data.height", "48"},
      {"data.width", "24"},
      {"data.test_fraction", "0.2"},
      {"model.patch_size", "4"},
      {"model.embed_dim", "32"},
      {"model.hidden_dim", "96"},
      {"model.image_layers", "3"},
      {"model.text_layers", "3"},
      {"model.dropout", "0.05"},
      {"model.tau_init", "0.07"},
      {"train.epochs", "20"},
      {"train.batch_size", "32"},
      {"train.lr_init", "3e-05"},
      {"train.lr_peak", "0.003"},
      {"train.lr_final", "0.00015"},
      {"train.warmup_fraction", "0.1"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.adam_eps", "1e-08"},
      {"train.weight_decay", "0.02"},
      {"train.freeze", ""},
      {"train.drop", ""},
      {"loss.soft_label", "false"},
      {"loss.tau_s", "0.1"},
      {"loss.eps", "1e-08"},
      {"augment.image_mode", "pool"},
      {"augment.image_pool", default_pool()},
      {"augment.pool_k", "2"},
      {"augment.text_ops", text_ops_string(production_text_ops())},
      {"eval.split", "test"},
      {"analyze.epsilon", "3"},
      {"analyze.modules", ""},
      {"analyze.mode", "freeze"},
      {"analyze.x_max", "2"},
      {"fewshot.fractions", "0.01,0.05,0.1"},
  };
  for (const auto& term : known_loss_terms()) v["loss." + term] = "0";
  for (const auto& [k, val] : preset_values("tbps-clip")) v[k] = val;
  return v;
}

ExperimentConfig config_from_values(const ConfigValues& in) {
  const ConfigValues defaults = default_values();
  for (const auto& [k, _] : in)
    if (!defaults.count(k)) config_error(k, "unknown key");
  ConfigValues v = defaults;
  for (const auto& [k, val] : in) v[k] = trim(val);

  ExperimentConfig c;
  const auto num = [&](const std::string& k) {
    const double x = parse_double(k, v[k]);
    v[k] = format_double(x);
    return x;
  };
  const auto integer = [&](const std::string& k, long long min) {
    const long long x = parse_int(k, v[k], min);
    v[k] = std::to_string(x);
    return x;
  };
  const auto flag = [&](const std::string& k) {
    const bool b = parse_bool(k, v[k]);
    v[k] = b ? "true" : "false";
    return b;
  };
  const auto list = [&](const std::string& k) {
    auto items = split_list(v[k]);
    v[k] = join(items);
    return items;
  };

  c.preset = v["run.preset"];
  if (std::find(preset_names().begin(), preset_names().end(), c.preset) == preset_names().end())
    config_error("run.preset", "unknown preset '" + c.preset + "'");
  c.seed = static_cast<std::uint64_t>(integer("run.seed", 0));

  c.data_source = v["data.source"];
  if (c.data_source != "toy" && c.data_source != "jsonl")
    config_error("data.source", "must be toy or jsonl");
  c.data_path = v["data.path"];
  if (c.data_source == "jsonl" && c.data_path.empty())
    config_error("data.path", "required when data.source = jsonl");
  c.toy.n_identities = static_cast<int>(integer("data.identities", 1));
  c.toy.images_per_identity = static_cast<int>(integer("data.images_per_identity", 1));
  c.toy.captions_per_image = static_cast<int>(integer("data.captions_per_image", 1));
  c.toy.image_height = static_cast<int>(integer("data.height", 1));
  c.toy.image_width = static_cast<int>(integer("data.width", 1));
  c.toy.test_fraction = num("data.test_fraction");
  if (c.data_source == "toy") validated("data", [&] { c.toy.validate(); });

  c.model.image_height = c.toy.image_height;
  c.model.image_width = c.toy.image_width;
  c.model.patch_size = static_cast<int>(integer("model.patch_size", 1));
  c.model.embed_dim = static_cast<int>(integer("model.embed_dim", 1));
  c.model.hidden_dim = static_cast<int>(integer("model.hidden_dim", 1));
  c.model.image_layers = static_cast<int>(integer("model.image_layers", 0));
  c.model.text_layers = static_cast<int>(integer("model.text_layers", 0));
  c.model.dropout = num("model.dropout");
  c.model.tau_init = num("model.tau_init");
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) config_error("model.dropout", "must be in [0, 1)");
  if (!(c.model.tau_init > 0.0)) config_error("model.tau_init", "must be > 0");
  validated("model", [&] { c.model.validate(); });

  TrainConfig& t = c.train;
  t.seed = c.seed;
  t.epochs = static_cast<int>(integer("train.epochs", 1));
  t.batch_size = static_cast<std::size_t>(integer("train.batch_size", 2));
  t.lr_init = num("train.lr_init");
  t.lr_peak = num("train.lr_peak");
  t.lr_final = num("train.lr_final");
  t.warmup_fraction = num("train.warmup_fraction");
  if (!(t.lr_init > 0.0)) config_error("train.lr_init", "must be > 0");
  if (!(t.lr_peak > 0.0)) config_error("train.lr_peak", "must be > 0");
  if (!(t.lr_final >= 0.0)) config_error("train.lr_final", "must be >= 0");
  if (t.lr_init > t.lr_peak) config_error("train.lr_init", "must not exceed train.lr_peak");
  if (t.lr_final > t.lr_peak) config_error("train.lr_final", "must not exceed train.lr_peak");
  if (!(t.warmup_fraction >= 0.0 && t.warmup_fraction <= 1.0))
    config_error("train.warmup_fraction", "must be in [0, 1]");
  t.adamw.beta1 = num("train.beta1");
  t.adamw.beta2 = num("train.beta2");
  t.adamw.eps = num("train.adam_eps");
  t.adamw.weight_decay = num("train.weight_decay");
  t.freeze_modules = list("train.freeze");
  t.drop_modules = list("train.drop");

  t.loss.weights.clear();
  for (const auto& term : known_loss_terms()) {
    const double w = num("loss." + term);
    if (w < 0.0) config_error("loss." + term, "weight must be >= 0");
    if (w > 0.0) t.loss.weights[term] = w;
  }
  t.loss.soft_label_enabled = flag("loss.soft_label");
  t.loss.tau_s = num("loss.tau_s");
  t.loss.eps = num("loss.eps");

  validated("augment.image_mode", [&] { t.image_aug = parse_image_aug_mode(v["augment.image_mode"]); });
  t.image_pool.clear();
  std::vector<std::string> pool_names;
  for (const auto& name : list("augment.image_pool"))
    validated("augment.image_pool", [&] {
      t.image_pool.push_back(default_policy(parse_aug_kind(name)));
      pool_names.emplace_back(aug_name(t.image_pool.back().kind));
    });
  v["augment.image_pool"] = join(pool_names);
  t.pool_k = static_cast<std::size_t>(integer("augment.pool_k", 1));
  t.text_ops.clear();
  for (const auto& item : list("augment.text_ops")) {
    const auto colon = item.find(':');
    TextAugPolicy op;
    validated("augment.text_ops", [&] { op.kind = parse_text_aug_kind(trim(item.substr(0, colon))); });
    op.alpha = op.kind == TextAugKind::BackTranslation ? 0.1 : 0.05;
    if (colon != std::string::npos) op.alpha = parse_double("augment.text_ops", trim(item.substr(colon + 1)));
    t.text_ops.push_back(op);
  }
  v["augment.text_ops"] = text_ops_string(t.text_ops);
  validated("train", [&] { t.validate(); });

  const ModelParams probe = init_params(c.model, 1, Rng(0, 0));
  validated("train.freeze", [&] { (void)freeze(probe, t.freeze_modules); });
  validated("train.drop", [&] { (void)drop(probe, t.drop_modules); });

  validated("eval.split", [&] { c.eval_split = parse_split(v["eval.split"]); });

  c.epsilon = num("analyze.epsilon");
  if (!(c.epsilon > 0.0)) config_error("analyze.epsilon", "must be > 0");
  c.analyze_modules = list("analyze.modules");
  for (const auto& m : c.analyze_modules)
    if (!probe.has_module(m)) config_error("analyze.modules", "unknown module '" + m + "'");
  validated("analyze.mode", [&] { c.compress_mode = parse_compress_mode(v["analyze.mode"]); });
  c.x_max = static_cast<std::size_t>(integer("analyze.x_max", 0));
  if (c.x_max > static_cast<std::size_t>(c.model.text_layers))
    config_error("analyze.x_max", "exceeds model.text_layers");

  c.fewshot_fractions.clear();
  std::vector<std::string> fr;
  for (const auto& s : list("fewshot.fractions")) {
    const double f = parse_double("fewshot.fractions", s);
    if (!(f > 0.0 && f <= 1.0)) config_error("fewshot.fractions", "fractions must be in (0, 1]");
    c.fewshot_fractions.push_back(f);
    fr.push_back(format_double(f));
  }
  if (c.fewshot_fractions.empty()) config_error("fewshot.fractions", "must not be empty");
  v["fewshot.fractions"] = join(fr);

  c.values = std::move(v);
  return c;
}

ExperimentConfig parse_config(std::string_view ini_text, std::span<const std::string> overrides) {
  ConfigValues user;
  {
    // Boost's INI reader only knows ';' comments; '#' lines are dropped here.
    std::istringstream lines{std::string(ini_text)};
    std::string filtered, line;
    while (std::getline(lines, line)) {
      const std::string t = trim(line);
      if (!t.empty() && t[0] == '#') continue;
      filtered += line + "\n";
    }
    boost::property_tree::ptree tree;
    std::istringstream in(filtered);
    try {
      boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        config_error(section, "keys must live in a [section]");
      for (const auto& [key, value] : body) user[section + "." + key] = value.data();
    }
  }
  for (std::string o : overrides) {
    if (o.rfind("--", 0) == 0) o.erase(0, 2);
    const auto eq = o.find('=');
    if (eq == std::string::npos) config_error(o, "override must look like section.key=value");
    user[trim(o.substr(0, eq))] = o.substr(eq + 1);
  }
  const ConfigValues defaults = default_values();
  for (const auto& [k, _] : user)
    if (!defaults.count(k)) config_error(k, "unknown key");

  ConfigValues v = defaults;
  const auto preset = user.count("run.preset") ? trim(user["run.preset"]) : defaults.at("run.preset");
  for (const auto& [k, val] : preset_values(preset)) v[k] = val;
  for (const auto& [k, val] : user) v[k] = val;
  return config_from_values(v);
}

ExperimentConfig load_config(const std::string& path, std::span<const std::string> overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_config(text, overrides);
}

ExperimentConfig with_values(const ExperimentConfig& base, const ConfigValues& changes) {
  ConfigValues v = base.values;
  for (const auto& [k, val] : changes) {
    if (!v.count(k)) config_error(k, "unknown key");
    v[k] = val;
  }
  return config_from_values(v);
}

std::string ExperimentConfig::to_ini() const {
  std::string out, section;
  for (const auto& [k, val] : values) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += k.substr(dot + 1) + " = " + val + "\n";
  }
  return out;
}

std::string ExperimentConfig::fingerprint() const { return sha256_hex(to_ini()); }

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::IoError, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace tbps

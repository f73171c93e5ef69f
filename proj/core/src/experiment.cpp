// SPDX-License-Identifier: Apache-2.0
#include "tbps/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tbps/error.hpp"
#include "tbps/losses.hpp"

#ifndef TBPS_VERSION
#define TBPS_VERSION "0.0.0"
#endif

namespace tbps {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_stamp(std::chrono::system_clock::time_point t, const char* format) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, format, &tm);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// One command invocation: owns the run directory and its manifest.
class Run {
 public:
  Run(std::string command, const ExperimentConfig& config, const RunOptions& options)
      : start_(std::chrono::steady_clock::now()) {
    const auto now = std::chrono::system_clock::now();
    manifest_.command = std::move(command);
    manifest_.tool_version = std::string(tool_version());
    manifest_.config_fingerprint = config.fingerprint();
    manifest_.seed = config.seed;
    manifest_.started_utc = utc_stamp(now, "%Y-%m-%dT%H:%M:%SZ");
    if (!options.out_dir.empty()) {
      dir_ = options.out_dir;
    } else {
      fs::path root = options.output_root;
      if (root.empty()) {
        const char* env = std::getenv("TBPS_OUTPUT_ROOT");
        root = env && *env ? env : "runs";
      }
      const std::string base = utc_stamp(now, "%Y%m%dT%H%M%SZ") + "-" + manifest_.command + "-" +
                               manifest_.config_fingerprint.substr(0, 12);
      dir_ = root / base;
      for (int i = 1; fs::exists(dir_); ++i) dir_ = root / (base + "-" + std::to_string(i));
    }
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir_.string() + ": " + ec.message());
    write("config.ini", config.to_ini());
  }

  void write(const std::string& name, const std::string& content) {
    write_atomic(dir_ / name, content);
    manifest_.artifacts.emplace_back(name, sha256_hex(content));
  }

  RunResult finish() {
    manifest_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_atomic(dir_ / "manifest.json", manifest_json(manifest_));
    return {dir_, manifest_};
  }

 private:
  std::chrono::steady_clock::time_point start_;
  fs::path dir_;
  RunManifest manifest_;
};

void say(const std::function<void(const std::string&)>& log, const std::string& msg) {
  if (log) log(msg);
}

Checkpoint read_checkpoint(const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::IoError, "no checkpoint given");
  if (!fs::exists(path)) throw Error(ErrorCode::IoError, "checkpoint not found: " + path);
  return load_checkpoint(path);
}

ConfigValues loss_only(std::initializer_list<std::pair<const char*, double>> active) {
  ConfigValues v;
  for (const auto& term : known_loss_terms()) v["loss." + term] = "0";
  for (const auto& [term, w] : active) v[std::string("loss.") + term] = num(w);
  return v;
}

ConfigValues merged(ConfigValues a, const ConfigValues& b) {
  for (const auto& [k, v] : b) a[k] = v;
  return a;
}

constexpr AugKind kAllAugKinds[] = {
    AugKind::RandomResizedCrop,  AugKind::RandomErasing,        AugKind::RandomGrayscale,
    AugKind::GaussianBlur,       AugKind::ColorJitterBCS,       AugKind::ColorJitterHue,
    AugKind::RandomHorizontalFlip, AugKind::RandomVerticalFlip, AugKind::RandomRotation,
};

constexpr TextAugKind kAllTextKinds[] = {
    TextAugKind::BackTranslation, TextAugKind::SynonymReplacement, TextAugKind::RandomInsertion,
    TextAugKind::RandomSwap,      TextAugKind::RandomDeletion,     TextAugKind::Eda,
};

std::string report_cells(const RetrievalReport& r) {
  return num(r.rank1) + "," + num(r.rank5) + "," + num(r.rank10) + "," + num(r.map) + "," +
         num(r.minp);
}

}  // namespace

std::string_view tool_version() { return TBPS_VERSION; }

Dataset load_dataset(const ExperimentConfig& config) {
  if (config.data_source == "toy")
    return generate_toy(config.toy, Rng(config.seed, streams::kToy)).dataset;
  Dataset d = load_jsonl(config.data_path);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Image& img = d.samples[i].image;
    if (img.height != config.model.image_height || img.width != config.model.image_width)
      throw Error(ErrorCode::ShapeMismatch,
                  "row " + std::to_string(i + 1) + " image is " + std::to_string(img.height) +
                      "x" + std::to_string(img.width) + ", data.height x data.width is " +
                      std::to_string(config.model.image_height) + "x" +
                      std::to_string(config.model.image_width));
  }
  return d;
}

FitResult train_experiment(const ExperimentConfig& config, const Dataset& dataset) {
  return fit(dataset, config.model, config.train);
}

std::string manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["config_fingerprint"] = m.config_fingerprint;
  j["seed"] = m.seed;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& [path, sha] : m.artifacts) {
    nlohmann::ordered_json a;
    a["path"] = path;
    a["sha256"] = sha;
    j["artifacts"].push_back(a);
  }
  j["timings"]["started_utc"] = m.started_utc;
  j["timings"]["wall_seconds"] = m.wall_seconds;
  return j.dump(2) + "\n";
}

RunResult cmd_generate(const ExperimentConfig& config, const RunOptions& options) {
  const Dataset d = load_dataset(config);
  Run run("generate", config, options);
  run.write("dataset.jsonl", to_jsonl(d));
  return run.finish();
}

RunResult cmd_train(const ExperimentConfig& config, const RunOptions& options) {
  const Dataset d = load_dataset(config);
  say(options.log, "training on " + std::to_string(d.rows(Split::Train).size()) + " rows");
  const FitResult r = train_experiment(config, d);
  Run run("train", config, options);
  std::ostringstream ckpt, log;
  save_checkpoint(r.checkpoint, ckpt);
  run.write("checkpoint.tbps", ckpt.str());
  write_log_csv(r.log, active_terms(config.train.loss), log);
  run.write("train_log.csv", log.str());
  std::string warnings;
  for (const auto& w : r.warnings) warnings += w + "\n";
  run.write("warnings.txt", warnings);
  return run.finish();
}

RunResult cmd_eval(const ExperimentConfig& config, const std::string& checkpoint,
                   const RunOptions& options) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const Dataset d = load_dataset(config);
  const RetrievalReport rep = evaluate_checkpoint(ckpt, d, config.eval_split);
  say(options.log, "rank1 " + num(rep.rank1) + " mAP " + num(rep.map));
  Run run("eval", config, options);
  run.write("report.json", report_json(rep, config.fingerprint(), config.seed));
  run.write("report.csv", report_csv(rep, config.fingerprint(), config.seed));
  return run.finish();
}

std::string_view ablation_axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Augmentation: return "augmentation";
    case AblationAxis::Loss: return "loss";
    case AblationAxis::Trick: return "trick";
  }
  return "unknown";
}

AblationAxis parse_ablation_axis(std::string_view name) {
  if (name == "augmentation") return AblationAxis::Augmentation;
  if (name == "loss") return AblationAxis::Loss;
  if (name == "trick") return AblationAxis::Trick;
  throw Error(ErrorCode::ConfigError,
              "axis must be augmentation, loss or trick, got '" + std::string(name) + "'");
}

std::vector<AblationVariant> ablation_variants(const ExperimentConfig& config, AblationAxis axis) {
  std::vector<AblationVariant> out;
  const ConfigValues full = preset_values("tbps-clip");
  const std::string pool = full.at("augment.image_pool");
  const std::string text = full.at("augment.text_ops");
  switch (axis) {
    case AblationAxis::Trick: {
      const ConfigValues base = preset_values("clip-baseline");
      const std::string dropout =
          config.model.dropout > 0.0 ? config.values.at("model.dropout") : "0.05";
      out.push_back({"clip", base});
      // Single process: the whole batch is already visible to the loss.
      out.push_back({"clip+global_grad", base});
      out.push_back({"clip+dropout", merged(base, {{"model.dropout", dropout}})});
      out.push_back({"clip+lock_bl", merged(base, {{"train.freeze", "image.patch"}})});
      out.push_back({"clip+soft_label", merged(base, {{"loss.soft_label", "true"}})});
      out.push_back({"clip*", merged(preset_values("clip-star"), {{"model.dropout", dropout}})});
      break;
    }
    case AblationAxis::Augmentation: {
      const ConfigValues none = {{"augment.image_mode", "none"}, {"augment.text_ops", ""}};
      out.push_back({"no_augmentation", none});
      for (AugKind k : kAllAugKinds) {
        const std::string name(aug_name(k));
        out.push_back({"image:" + name, merged(none, {{"augment.image_mode", "stack"},
                                                      {"augment.image_pool", name}})});
      }
      out.push_back({"image:stacking_together",
                     merged(none, {{"augment.image_mode", "stack"}, {"augment.image_pool", pool}})});
      out.push_back({"image:trivial", merged(none, {{"augment.image_mode", "trivial"},
                                                    {"augment.image_pool", pool}})});
      out.push_back({"image:pool",
                     merged(none, {{"augment.image_mode", "pool"}, {"augment.image_pool", pool}})});
      for (TextAugKind k : kAllTextKinds) {
        const std::string name(text_aug_name(k));
        out.push_back({"text:" + name, merged(none, {{"augment.text_ops", name}})});
      }
      out.push_back({"text:stacking_together", merged(none, {{"augment.text_ops", text}})});
      out.push_back({"image+text", {{"augment.image_mode", "pool"},
                                    {"augment.image_pool", pool},
                                    {"augment.text_ops", text}}});
      break;
    }
    case AblationAxis::Loss: {
      const double c = std::stod(full.at("loss.c_itc"));
      out.push_back({"itc", loss_only({{"itc", 1}})});
      out.push_back({"n_itc", loss_only({{"n_itc", 1}})});
      out.push_back({"n_itc+ss_i", loss_only({{"n_itc", 1}, {"ss_i", 1}})});
      out.push_back({"n_itc+ss_t", loss_only({{"n_itc", 1}, {"ss_t", 1}})});
      out.push_back({"n_itc+ss_it", loss_only({{"n_itc", 1}, {"ss_i", 1}, {"ss_t", 1}})});
      out.push_back({"n_itc+mvs_i", loss_only({{"n_itc", 1}, {"mvs_i", 1}})});
      out.push_back({"n_itc+mvs_t", loss_only({{"n_itc", 1}, {"mvs_t", 1}})});
      out.push_back({"n_itc+mvs_it", loss_only({{"n_itc", 1}, {"mvs_it", 1}})});
      out.push_back({"n_itc+r_itc", loss_only({{"n_itc", 1}, {"r_itc", 1}})});
      out.push_back({"n_itc+c_itc", loss_only({{"n_itc", 1}, {"c_itc", c}})});
      out.push_back({"stacking_together",
                     loss_only({{"n_itc", 1}, {"ss_i", 1}, {"mvs_i", 1}, {"r_itc", 1}, {"c_itc", c}})});
      break;
    }
  }
  return out;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, AblationAxis axis,
                                      const std::function<void(const std::string&)>& log) {
  const auto variants = ablation_variants(config, axis);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : variants) configs.push_back(with_values(config, v.changes));
  const Dataset d = load_dataset(config);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const FitResult r = train_experiment(configs[i], d);
    AblationRow row{variants[i].name, configs[i].fingerprint(),
                    evaluate_checkpoint(r.checkpoint, d, config.eval_split)};
    say(log, row.name + ": rank1 " + num(row.report.rank1));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, AblationAxis axis,
                         const std::string& fingerprint, std::uint64_t seed) {
  std::string out = "# seed=" + std::to_string(seed) + " config=" + fingerprint +
                    " axis=" + std::string(ablation_axis_name(axis)) + "\n";
  out += "variant,rank1,rank5,rank10,mAP,mINP,config\n";
  for (const auto& r : rows) out += r.name + "," + report_cells(r.report) + "," + r.fingerprint + "\n";
  return out;
}

RunResult cmd_ablate(const ExperimentConfig& config, AblationAxis axis, const RunOptions& options) {
  for (const auto& v : ablation_variants(config, axis)) (void)with_values(config, v.changes);
  (void)load_dataset(config);
  const auto rows = run_ablation(config, axis, options.log);
  Run run("ablate-" + std::string(ablation_axis_name(axis)), config, options);
  run.write("ablation_" + std::string(ablation_axis_name(axis)) + ".csv",
            ablation_csv(rows, axis, config.fingerprint(), config.seed));
  return run.finish();
}

std::vector<FewshotRow> run_fewshot(const ExperimentConfig& config,
                                    const std::function<void(const std::string&)>& log) {
  const Dataset d = load_dataset(config);
  std::vector<FewshotRow> rows;
  for (double f : config.fewshot_fractions) {
    const Dataset sub = fewshot_subsample(d, f, Rng(config.seed, streams::kFewshot));
    FewshotRow row;
    row.fraction = f;
    std::set<IdentityId> ids;
    for (std::size_t r : sub.rows(Split::Train)) ids.insert(sub.samples[r].identity);
    row.train_rows = sub.rows(Split::Train).size();
    row.train_identities = ids.size();
    const FitResult r = train_experiment(config, sub);
    row.report = evaluate_checkpoint(r.checkpoint, sub, config.eval_split);
    say(log, "fraction " + num(f) + ": rank1 " + num(row.report.rank1));
    rows.push_back(row);
  }
  return rows;
}

std::string fewshot_csv(const std::vector<FewshotRow>& rows, const std::string& fingerprint,
                        std::uint64_t seed) {
  std::string out = "# seed=" + std::to_string(seed) + " config=" + fingerprint + "\n";
  out += "fraction,train_rows,train_identities,rank1,rank5,rank10,mAP,mINP\n";
  for (const auto& r : rows)
    out += num(r.fraction) + "," + std::to_string(r.train_rows) + "," +
           std::to_string(r.train_identities) + "," + report_cells(r.report) + "\n";
  return out;
}

RunResult cmd_fewshot(const ExperimentConfig& config, const RunOptions& options) {
  const auto rows = run_fewshot(config, options.log);
  Run run("fewshot", config, options);
  run.write("fewshot.csv", fewshot_csv(rows, config.fingerprint(), config.seed));
  return run.finish();
}

RunResult cmd_contribution(const ExperimentConfig& config, const std::string& checkpoint,
                           const RunOptions& options) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  if (!(ckpt.params.config == config.model))
    throw Error(ErrorCode::ConfigError, "model: checkpoint was trained with a different model shape");
  std::vector<std::string> modules = config.analyze_modules;
  if (modules.empty()) modules = ckpt.params.modules();
  const Dataset d = load_dataset(config);
  const ModelParams init = initial_params(ckpt.params.config, ckpt.vocab.size(), config.train);
  const ContributionReport rep = contribution(
      ckpt.params, init, modules, rank1_metric(d, ckpt.vocab, config.eval_split), config.epsilon);
  Run run("contribution", config, options);
  run.write("contribution.json", contribution_json(rep, config.fingerprint(), config.seed));
  run.write("contribution.csv", contribution_csv(rep, config.fingerprint(), config.seed));
  return run.finish();
}

RunResult cmd_compress(const ExperimentConfig& config, const RunOptions& options) {
  const Dataset d = load_dataset(config);
  const CompressResult r =
      compress_experiment(d, config.model, config.train, config.compress_mode, config.x_max,
                          config.epsilon);
  for (const auto& p : r.series) say(options.log, "x=" + std::to_string(p.x) + ": rank1 " + num(p.report.rank1));
  Run run("compress", config, options);
  run.write("compress.csv", compress_csv(r.series, config.fingerprint(), config.seed));
  run.write("contribution.json", contribution_json(r.contribution, config.fingerprint(), config.seed));
  return run.finish();
}

std::vector<CheckResult> selftest_checks() {
  std::vector<CheckResult> out;
  const auto check = [&](std::string name, bool ok, std::string detail) {
    out.push_back({std::move(name), ok, std::move(detail)});
  };
  const std::size_t n = 6, dim = 4;
  std::vector<IdentityId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<IdentityId>(i);

  {
    const EmbeddingBatch same = EmbeddingBatch::from_raw(Mat(n, dim, 1.0), ids);
    const double v = n_itc(same, same, build_labels(ids, ids), 0.07).value;
    check("n_itc uniform case equals ln N", std::abs(v - std::log(double(n))) < 1e-9, num(v));
    const double c = c_itc(same, same).value;
    check("c_itc symmetric case is zero", std::abs(c) < 1e-12, num(c));
    const EmbeddingBatch views = EmbeddingBatch::from_raw(Mat(2 * n, dim, 1.0),
                                                          std::vector<IdentityId>(2 * n, 0));
    const double s = ss_loss(views, two_view_pairing(n), 0.1).value;
    check("ss identical rows equals log(2N-1)", std::abs(s - std::log(2.0 * n - 1.0)) < 1e-6,
          num(s));
    const std::vector<IdentityId> one(n, 7);
    const EmbeddingBatch shared = EmbeddingBatch::from_raw(Mat(n, dim, 1.0), one);
    const double r = r_itc(shared, shared, build_labels(one, one), 0.07, 1e-8).value;
    check("r_itc matched case is zero", std::abs(r) < 1e-6, num(r));
  }
  {
    Rng rng(11, 0);
    Mat a(n, dim), b(n, dim);
    for (auto& x : a.values()) x = rng.normal();
    for (auto& x : b.values()) x = rng.normal();
    const std::vector<IdentityId> grouped = {0, 0, 1, 1, 2, 3};
    EmbeddingBatch img = EmbeddingBatch::from_raw(a, grouped);
    const EmbeddingBatch txt = EmbeddingBatch::from_raw(b, grouped);
    const LabelMatrix labels = build_labels(grouped, grouped);
    const LossResult res = n_itc(img, txt, labels, 0.2);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t k = 0; k < img.features.size(); ++k) {
      const double x0 = img.features.values()[k];
      img.features.values()[k] = x0 + h;
      const double up = n_itc(img, txt, labels, 0.2).value;
      img.features.values()[k] = x0 - h;
      const double down = n_itc(img, txt, labels, 0.2).value;
      img.features.values()[k] = x0;
      const double fd = (up - down) / (2 * h);
      const double an = res.grad_image.values()[k];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
    check("n_itc gradient matches finite differences", worst < 1e-4, num(worst));
  }
  {
    const Rankings rk = {{0, 1, 2, 3}};
    const std::vector<IdentityId> q = {5};
    const std::vector<IdentityId> g = {1, 5, 2, 5};
    const double ap = mean_ap(rk, q, g);
    const double inp = mean_inp(rk, q, g);
    check("AP with positives at ranks 2 and 4 is 0.5", ap == 0.5, num(ap));
    check("INP with positives at ranks 2 and 4 is 0.5", inp == 0.5, num(inp));
  }
  {
    const Schedule s = Schedule::with_warmup_fraction(100, 0.1);
    const bool ok = std::abs(lr_at(s, 0) - 1e-6) < 1e-12 && std::abs(lr_at(s, 10) - 1e-4) < 1e-12 &&
                    std::abs(lr_at(s, 100) - 5e-6) < 1e-12;
    check("learning rate schedule endpoints", ok,
          num(lr_at(s, 0)) + " " + num(lr_at(s, 10)) + " " + num(lr_at(s, 100)));
  }
  {
    ModelConfig mc;
    const Vocab vocab = Vocab::from_words({"a", "b", "c"});
    const Checkpoint ck{init_params(mc, vocab.size(), Rng(3, streams::kInit)), vocab};
    std::stringstream ss;
    save_checkpoint(ck, ss);
    const std::string first = ss.str();
    const Checkpoint back = load_checkpoint(ss);
    std::ostringstream again;
    save_checkpoint(back, again);
    check("checkpoint round trip is byte-identical", back == ck && again.str() == first,
          std::to_string(first.size()) + " bytes");
  }
  return out;
}

RunResult cmd_selftest(const ExperimentConfig& config, bool& passed, const RunOptions& options) {
  const auto checks = selftest_checks();
  passed = true;
  std::string text;
  for (const auto& c : checks) {
    passed = passed && c.passed;
    const std::string line = std::string(c.passed ? "PASS " : "FAIL ") + c.name + " (" + c.detail + ")";
    say(options.log, line);
    text += line + "\n";
  }
  Run run("selftest", config, options);
  run.write("selftest.txt", text);
  return run.finish();
}

}  // namespace tbps

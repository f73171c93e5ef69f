// SPDX-License-Identifier: Apache-2.0
// Command-line front end for toy text-based person search experiments.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tbps/error.hpp"
#include "tbps/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kCheckFailed = 3;

struct Common {
  std::string config_path;
  std::string out_dir;
  bool quiet = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "INI experiment config");
  sub->add_option("-o,--out", c.out_dir, "exact run directory (default: $TBPS_OUTPUT_ROOT/<stamp>-<cmd>-<hash>)");
  sub->add_flag("-q,--quiet", c.quiet, "suppress progress output");
  sub->add_option("--set", c.overrides, "override section.key=value (repeatable)");
  sub->allow_extras();
}

// Leftover "--section.key=value" arguments become overrides.
std::vector<std::string> overrides_of(const CLI::App* sub, const Common& c) {
  std::vector<std::string> out = c.overrides;
  for (const auto& extra : sub->remaining()) {
    const auto dot = extra.find('.');
    const auto eq = extra.find('=');
    if (extra.rfind("--", 0) != 0 || dot == std::string::npos || eq == std::string::npos || dot > eq)
      throw tbps::Error(tbps::ErrorCode::ConfigError, "unrecognized argument '" + extra + "'");
    out.push_back(extra.substr(2));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale text-based person search lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tbps::tool_version()));

  Common common;
  std::string checkpoint, axis, fractions, mode;
  int x_max = -1;

  auto* generate = app.add_subcommand("generate", "write the configured dataset as JSONL");
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint and loss log");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the configured split");
  auto* ablate = app.add_subcommand("ablate", "ablation table along one axis");
  auto* fewshot = app.add_subcommand("fewshot", "train on fractions of the training identities");
  auto* contrib = app.add_subcommand("contribution", "module contribution scores of a checkpoint");
  auto* compress = app.add_subcommand("compress", "freeze or drop the least useful text layers");
  auto* selftest = app.add_subcommand("selftest", "closed-form consistency checks");
  auto* show = app.add_subcommand("show-config", "print the resolved config and its fingerprint");

  for (auto* sub : {generate, train, eval, ablate, fewshot, contrib, compress, selftest, show})
    add_common(sub, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  contrib->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ablate->add_option("--axis", axis, "augmentation | loss | trick")->required();
  fewshot->add_option("--fractions", fractions, "comma-separated fractions, e.g. 0.01,0.05,0.1");
  compress->add_option("--mode", mode, "freeze | drop");
  compress->add_option("--x-max", x_max, "largest number of selected layers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    std::vector<std::string> ov = overrides_of(sub, common);
    if (!fractions.empty()) ov.push_back("fewshot.fractions=" + fractions);
    if (!mode.empty()) ov.push_back("analyze.mode=" + mode);
    if (x_max >= 0) ov.push_back("analyze.x_max=" + std::to_string(x_max));
    const tbps::ExperimentConfig config = tbps::load_config(common.config_path, ov);

    tbps::RunOptions opts;
    opts.out_dir = common.out_dir;
    if (!common.quiet) opts.log = [](const std::string& m) { std::cerr << m << '\n'; };

    tbps::RunResult result;
    bool passed = true;
    if (sub == show) {
      std::cout << config.to_ini() << "\n# fingerprint " << config.fingerprint() << '\n';
      return kOk;
    } else if (sub == generate) {
      result = tbps::cmd_generate(config, opts);
    } else if (sub == train) {
      result = tbps::cmd_train(config, opts);
    } else if (sub == eval) {
      result = tbps::cmd_eval(config, checkpoint, opts);
    } else if (sub == ablate) {
      result = tbps::cmd_ablate(config, tbps::parse_ablation_axis(axis), opts);
    } else if (sub == fewshot) {
      result = tbps::cmd_fewshot(config, opts);
    } else if (sub == contrib) {
      result = tbps::cmd_contribution(config, checkpoint, opts);
    } else if (sub == compress) {
      result = tbps::cmd_compress(config, opts);
    } else {
      result = tbps::cmd_selftest(config, passed, opts);
    }
    std::cout << result.dir.string() << '\n';
    return passed ? kOk : kCheckFailed;
  } catch (const tbps::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == tbps::ErrorCode::ConfigError ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

// Copyright 2026 The sidrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Command-line entry point: wires the pipeline stages to subcommands with a
// shared config file, seed/provider overrides, and stable exit codes.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "sidrec/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPrerequisite = 3;
constexpr int kExitProvider = 4;
constexpr int kExitNumerical = 5;
constexpr int kExitOther = 1;

int exit_code_for(const sidrec::Error& e) {
  switch (e.kind()) {
    case sidrec::ErrorKind::config:
      return kExitConfig;
    case sidrec::ErrorKind::prerequisite:
      return kExitPrerequisite;
    case sidrec::ErrorKind::provider:
      return kExitProvider;
    case sidrec::ErrorKind::numerical:
    case sidrec::ErrorKind::training:
      return kExitNumerical;
    default:
      return kExitOther;
  }
}

struct Options {
  std::string config_path;
  std::string workdir;
  long long seed = -1;
  bool force = false;
  std::string providers;  // "mock" | "live" | "" (config as-is)
  std::string arm;
};

sidrec::PipelineConfig load_config(const Options& opts) {
  sidrec::PipelineConfig cfg = sidrec::default_pipeline_config();
  if (!opts.config_path.empty()) {
    sidrec::require(std::filesystem::exists(opts.config_path),
                    sidrec::ErrorKind::config,
                    "config file does not exist: " + opts.config_path);
    cfg = sidrec::pipeline_config_from_json(
        sidrec::read_json_file(opts.config_path));
  }
  if (!opts.workdir.empty()) {
    cfg.workdir = opts.workdir;
  }
  if (opts.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(opts.seed);
  }
  if (opts.providers == "mock") {
    for (auto& provider : cfg.providers) {
      provider.kind = "mock";
    }
    cfg.embed.kind = "local";
  } else if (opts.providers == "live") {
    // Use the config's endpoints as written; nothing to rewrite here.
  } else if (!opts.providers.empty()) {
    sidrec::fail(sidrec::ErrorKind::config,
                 "--providers must be 'mock' or 'live', got '" + opts.providers + "'");
  }
  if (!opts.arm.empty()) {
    cfg.arm = opts.arm;
  }
  return cfg;
}

void print_report(const sidrec::MetricsReport& report) {
  std::cout << sidrec::format_metrics_table(report);
  std::cout << sidrec::metrics_report_to_json(report).dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sidrec: semantic-ID generative recommendation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // accept global options after the subcommand name

  Options opts;
  app.add_option("--config", opts.config_path, "Path to the pipeline config JSON");
  app.add_option("--workdir", opts.workdir, "Override the configured workdir");
  app.add_option("--seed", opts.seed, "Override the global seed");
  app.add_flag("--force", opts.force, "Re-run stages and ignore stale-config guards");
  app.add_option("--providers", opts.providers,
                 "Provider mode: 'mock' forces offline mock providers, 'live' uses "
                 "the config as written");

  auto* ingest = app.add_subcommand("ingest", "Parse and filter a reviews corpus");
  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  auto* mine = app.add_subcommand("mine", "Mine item interests with the LLM ensemble");
  auto* embed = app.add_subcommand("embed", "Embed items (deep and shallow)");
  auto* tokenize = app.add_subcommand("tokenize", "Train codebooks and assign SIDs");
  auto* sft = app.add_subcommand("sft", "Supervised fine-tuning of the generator");
  auto* rl = app.add_subcommand("rl", "GRPO fine-tuning with the configured reward");
  auto* eval = app.add_subcommand("eval", "Evaluate the trained model");
  auto* ablate = app.add_subcommand("ablate", "Run an ablation arm end to end");
  auto* transfer = app.add_subcommand("transfer", "Cross-corpus transfer evaluation");
  auto* all = app.add_subcommand("all", "Run the full pipeline");

  std::string ablate_arm = "full";
  ablate->add_option("--arm", ablate_arm, "Ablation arm name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Bad usage is a config error; --help exits cleanly.
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    sidrec::PipelineConfig cfg = load_config(opts);
    sidrec::WorkdirLock lock{std::filesystem::path(cfg.workdir)};
    sidrec::Pipeline pipeline(cfg, opts.force);

    if (ingest->parsed()) {
      pipeline.ingest();
    } else if (synth->parsed()) {
      pipeline.synth();
    } else if (mine->parsed()) {
      pipeline.mine();
    } else if (embed->parsed()) {
      pipeline.embed();
    } else if (tokenize->parsed()) {
      pipeline.tokenize();
    } else if (sft->parsed()) {
      pipeline.sft();
    } else if (rl->parsed()) {
      pipeline.rl();
    } else if (eval->parsed()) {
      print_report(pipeline.eval());
    } else if (ablate->parsed()) {
      print_report(pipeline.ablate(ablate_arm));
    } else if (transfer->parsed()) {
      print_report(pipeline.transfer());
    } else if (all->parsed()) {
      print_report(pipeline.all());
    }
    return kExitOk;
  } catch (const sidrec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

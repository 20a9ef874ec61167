// SPDX-License-Identifier: Apache-2.0
//
// mie: data generation, training, ablation grids, landscape export, reports.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mie/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Alternating multimodal training with SAM and gradient modification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mie::kArtifactVersion);

  std::string config;
  std::string grid;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> run_dirs;

  auto common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config,-c", config, "configuration file (key = value)")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    if (with_out) sub->add_option("--out,-o", out, "output path");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  common(gen, true);
  auto* trn = app.add_subcommand("train", "train one configuration");
  common(trn, true);
  auto* abl = app.add_subcommand("ablate", "run an ablation grid");
  common(abl, true);
  abl->add_option("--grid,-g", grid, "grid file")->required();
  auto* lsc = app.add_subcommand("landscape", "export a 2-D loss landscape slice as CSV");
  common(lsc, true);
  lsc->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  auto* rep = app.add_subcommand("report", "summarize singular values and phase traces of run directories");
  rep->add_option("dirs", run_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  mie::CliOptions opt{seed, out};
  try {
    if (*gen) return mie::cmd_gen_data(config, opt, std::cout);
    if (*trn) return mie::cmd_train(config, opt, std::cout, std::cerr);
    if (*abl) return mie::cmd_ablate(config, grid, opt, std::cout);
    if (*lsc) return mie::cmd_landscape(config, checkpoint, opt, std::cout);
    if (*rep) return mie::cmd_report(run_dirs, std::cout);
  } catch (const std::exception& e) {
    std::cerr << mie::error_json(e) << "\n";
    return mie::exit_code_for(e);
  }
  return 0;
}

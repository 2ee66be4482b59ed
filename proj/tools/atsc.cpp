#include <iostream>

#include "CLI11.hpp"
#include "atsc/harness.hpp"

namespace {

void add_common(CLI::App* cmd, atsc::CliOptions& opt, std::optional<std::uint64_t>& seed, bool need_config) {
  auto* c = cmd->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
  if (need_config) c->required();
  cmd->add_option("--seed", seed, "override the config seed");
  cmd->add_option("--out", opt.out, "output directory (overrides the config)");
  cmd->add_flag("--deterministic", opt.deterministic, "bit-reproducible outputs (wall_time_s written as 0)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atsc: teacher-student distillation with a shared classifier"};
  app.require_subcommand(1);

  atsc::CliOptions opt;
  std::optional<std::uint64_t> seed;
  auto* pretrain = app.add_subcommand("pretrain", "train a teacher encoder and classifier, write a checkpoint");
  auto* train = app.add_subcommand("train", "run one training mode; writes metrics.csv, summary.json, checkpoint/");
  auto* sweep = app.add_subcommand("sweep", "grid over alpha or reduction_factor across seeds");
  auto* report = app.add_subcommand("report", "mode x scenario table over finished runs");
  add_common(pretrain, opt, seed, true);
  add_common(train, opt, seed, true);
  add_common(sweep, opt, seed, true);
  add_common(report, opt, seed, false);
  report->add_option("runs", opt.inputs, "run, sweep or parent directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : atsc::kExitConfig;
  }
  opt.seed = seed;

  return atsc::guarded([&] {
    if (*pretrain) return atsc::cmd_pretrain(opt);
    if (*train) return atsc::cmd_train(opt);
    if (*sweep) return atsc::cmd_sweep(opt);
    return atsc::cmd_report(opt);
  });
}

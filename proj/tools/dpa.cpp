// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dpa/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised dual-prototype adaptation of frozen vision-language embeddings"};
  app.require_subcommand(1);

  dpa::cli::SynthArgs synth;
  std::string synth_config, synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic misaligned embedding dataset");
  synth_cmd->add_option("--config", synth_config, "Run configuration (YAML)")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", synth_out, "Output dataset path (.dpae)")->required();
  auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "Override synth.seed");

  dpa::cli::AdaptArgs adapt;
  std::string adapt_dataset, adapt_config, adapt_out, adapt_resume;
  std::uint64_t adapt_seed = 0;
  std::size_t stop_after = 0;
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt textual prototypes and the embedding adapter");
  adapt_cmd->add_option("--dataset", adapt_dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  auto* adapt_config_opt =
      adapt_cmd->add_option("--config", adapt_config, "Run configuration (YAML)")->check(CLI::ExistingFile);
  adapt_cmd->add_option("--out", adapt_out, "Output directory")->required();
  auto* adapt_seed_opt = adapt_cmd->add_option("--seed", adapt_seed, "Override train.seed");
  adapt_cmd->add_option("--ablate", adapt.ablate, "Disable components: no-fusion, no-weighting, no-align")
      ->check(CLI::IsMember({"no-fusion", "no-weighting", "no-align"}));
  auto* resume_opt =
      adapt_cmd->add_option("--resume", adapt_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  auto* stop_opt = adapt_cmd->add_option("--stop-after", stop_after, "Run at most this many epochs now");
  resume_opt->excludes(adapt_config_opt);
  adapt_config_opt->excludes(resume_opt);

  dpa::cli::PredictArgs pred;
  std::string pred_ckpt, pred_dataset, pred_out;
  auto* pred_cmd = app.add_subcommand("predict", "Predict labels with a trained checkpoint");
  pred_cmd->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--dataset", pred_dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--out", pred_out, "Output predictions CSV")->required();

  dpa::cli::EvalArgs eval;
  std::string eval_pred, eval_dataset, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against dataset labels");
  eval_cmd->add_option("--predictions", eval_pred, "Predictions CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  auto* eval_out_opt = eval_cmd->add_option("--out", eval_out, "Confusion matrix CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return dpa::cli::kUsage;
  }

  if (*synth_cmd) {
    synth.config = synth_config;
    synth.out = synth_out;
    if (*synth_seed_opt) synth.seed = synth_seed;
    return dpa::cli::cmd_synth(synth);
  }
  if (*adapt_cmd) {
    if (!*adapt_config_opt && !*resume_opt) {
      std::cerr << "dpa adapt: one of --config or --resume is required\n" << adapt_cmd->help();
      return dpa::cli::kUsage;
    }
    adapt.dataset = adapt_dataset;
    adapt.out_dir = adapt_out;
    if (*adapt_config_opt) adapt.config = adapt_config;
    if (*resume_opt) adapt.resume = adapt_resume;
    if (*adapt_seed_opt) adapt.seed = adapt_seed;
    if (*stop_opt) adapt.stop_after = stop_after;
    return dpa::cli::cmd_adapt(adapt);
  }
  if (*pred_cmd) {
    pred.checkpoint = pred_ckpt;
    pred.dataset = pred_dataset;
    pred.out = pred_out;
    return dpa::cli::cmd_predict(pred);
  }
  eval.predictions = eval_pred;
  eval.dataset = eval_dataset;
  if (*eval_out_opt) eval.out = eval_out;
  return dpa::cli::cmd_eval(eval);
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/embedding_store.hpp"
#include "dpa/error.hpp"
#include "dpa/objectives.hpp"
#include "dpa/optim.hpp"
#include "dpa/prototypes.hpp"
#include "dpa/pseudo_label.hpp"

namespace dpa {

/// Switches that drop one ingredient of the method at a time.
struct Ablation {
  bool fusion = true;     // false: pseudo-labels from textual prototypes only (beta = 1)
  bool weighting = true;  // false: every pseudo-label gets weight 1
  bool alignment = true;  // false: prototype alignment term disabled

  bool operator==(const Ablation&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double beta = 0.5;
  Lambdas lambdas;
  double tau_logit = 0.01;
  double tau_align = 0.05;
  double da_momentum = 0.99;
  AdamWHyper prototype_optim;
  AdamWHyper adapter_optim;
  bool adapter_enabled = true;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  Ablation ablation;

  double effective_beta() const { return ablation.fusion ? beta : 1.0; }
  Lambdas effective_lambdas() const {
    Lambdas l = lambdas;
    if (!ablation.alignment) l.align = 0.0;
    return l;
  }

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::InvalidConfig, what); };
    if (epochs < 1) bad("epochs must be >= 1");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (!(beta >= 0.0 && beta <= 1.0)) bad("beta must lie in [0, 1]");
    if (!(tau_logit > 0.0) || !(tau_align > 0.0)) bad("temperatures must be positive");
    if (!(da_momentum >= 0.0 && da_momentum <= 1.0)) bad("da_momentum must lie in [0, 1]");
    for (double l : {lambdas.st, lambdas.reg, lambdas.align})
      if (!(l >= 0.0) || !std::isfinite(l)) bad("lambdas must be finite and non-negative");
    for (const auto* h : {&prototype_optim, &adapter_optim})
      if (!(h->lr_base >= 0.0) || !(h->eps > 0.0) || !(h->weight_decay >= 0.0) || !(h->beta1 >= 0.0 && h->beta1 < 1.0) ||
          !(h->beta2 >= 0.0 && h->beta2 < 1.0))
        bad("optimizer hyperparameters out of range");
    if (eval_every < 1) bad("eval_every must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double l_st = 0.0;
  double l_reg = 0.0;
  double l_align = 0.0;
  double total = 0.0;
  std::optional<double> pl_accuracy{};
  std::optional<double> test_accuracy{};
  double mean_diag_proto_cosine = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  bool operator==(const TrainReport&) const = default;
};

/// What an external evaluator may look at after each epoch. Ground truth
/// never enters the trainer; it lives behind the callback.
struct EpochView {
  std::size_t epoch;
  const Labels& pseudo_labels;
  const TextualPrototypes& textual;
  const Adapter& adapter;
};

struct EpochEval {
  std::optional<double> pl_accuracy{};
  std::optional<double> test_accuracy{};
};

using EpochEvaluator = std::function<EpochEval(const EpochView&)>;

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  TextualPrototypes textual;
  Adapter adapter;
  ImagePrototypes image;
  MemoryBank bank;
  DAState da;
  AdamWState prototype_opt;
  AdamWState adapter_opt;
  std::size_t epochs_done = 0;
  TrainReport report;

  bool operator==(const TrainState&) const = default;
};

/// Inference uses the textual prototypes alone.
inline Labels predict(const TextualPrototypes& tp, const Adapter& adapter, const Mat& rows) {
  return zero_shot_labels(adapter_apply(adapter, rows), tp);
}

inline double mean_diag_cosine(const ImagePrototypes& ip, const TextualPrototypes& tp) {
  double s = 0.0;
  for (std::size_t j = 0; j < tp.n_classes(); ++j) s += dot(ip.P.row(j), tp.Z.row(j));
  return s / static_cast<double>(tp.n_classes());
}

class Trainer {
 public:
  Trainer(const EmbeddingDataset& ds, TrainConfig cfg, EpochEvaluator evaluator = {})
      : ds_(ds), cfg_(std::move(cfg)), evaluator_(std::move(evaluator)) {
    cfg_.validate();
    require(cfg_.batch_size <= ds_.n_samples, ErrorCode::InvalidBatchSize, "batch_size exceeds N");
    state_.textual = build_textual_prototypes(ds_);
    state_.adapter = Adapter::identity(ds_.dim);
    auto init = init_image_prototypes(ds_, state_.adapter, state_.textual);
    state_.image = std::move(init.image);
    state_.bank = std::move(init.bank);
    state_.da = DAState::uniform(ds_.n_classes, cfg_.da_momentum);
    state_.prototype_opt.hyper = cfg_.prototype_optim;
    state_.adapter_opt.hyper = cfg_.adapter_optim;
  }

  /// Continues from a checkpointed state.
  Trainer(const EmbeddingDataset& ds, TrainConfig cfg, TrainState resume, EpochEvaluator evaluator = {})
      : ds_(ds), cfg_(std::move(cfg)), evaluator_(std::move(evaluator)), state_(std::move(resume)) {
    cfg_.validate();
    require(state_.textual.Z.rows() == ds_.n_classes && state_.textual.Z.cols() == ds_.dim &&
                state_.bank.size() == ds_.n_samples,
            ErrorCode::DimensionMismatch, "checkpoint does not match dataset shapes");
    require(state_.epochs_done <= cfg_.epochs, ErrorCode::InvalidConfig, "checkpoint is past the configured epochs");
  }

  bool finished() const noexcept { return state_.epochs_done >= cfg_.epochs; }
  const TrainState& state() const noexcept { return state_; }
  const TrainConfig& config() const noexcept { return cfg_; }

  std::size_t steps_per_epoch() const { return (ds_.n_samples + cfg_.batch_size - 1) / cfg_.batch_size; }
  std::uint64_t total_steps() const { return cfg_.epochs * steps_per_epoch(); }

  /// Runs until done, or until `max_epochs` more epochs have completed.
  void run(std::optional<std::size_t> max_epochs = std::nullopt) {
    std::size_t ran = 0;
    while (!finished() && (!max_epochs || ran < *max_epochs)) {
      run_epoch();
      ++ran;
    }
  }

  void run_epoch() {
    require(!finished(), ErrorCode::InvalidConfig, "training already complete");
    const std::size_t epoch = state_.epochs_done;
    const auto batches = epoch_batches(ds_, cfg_.batch_size, cfg_.seed, epoch);
    const Lambdas lambdas = cfg_.effective_lambdas();
    const bool objective_active = lambdas.st != 0.0 || lambdas.reg != 0.0 || lambdas.align != 0.0;
    const PseudoLabelOptions pl_opt{cfg_.effective_beta(), cfg_.tau_logit, cfg_.ablation.weighting};
    const Temperatures temps{cfg_.tau_logit, cfg_.tau_align};

    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      // Supervision path: weak view, no gradient. P stays frozen all epoch.
      const Mat weak_f = adapter_apply(state_.adapter, batch.weak_rows);
      const auto pl = generate_pseudo_labels(weak_f, state_.textual, state_.image, state_.da, pl_opt);

      const auto res = total_loss_and_grads(batch.strong_rows, pl.labels, pl.weights, state_.textual, state_.image,
                                            state_.adapter, lambdas, temps);
      const auto& l = res.losses;
      if (!std::isfinite(l.total) || !std::isfinite(l.l_st) || !std::isfinite(l.l_reg) || !std::isfinite(l.l_align))
        fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(bi));

      // An all-zero objective is constant: no update at all, not even decay.
      if (objective_active) apply_update(res.grads);
      update_memory_bank(state_.bank, batch, weak_f, pl.labels, ds_.n_classes);

      const double share = static_cast<double>(batch.indices.size()) / static_cast<double>(ds_.n_samples);
      rec.l_st += share * l.l_st;
      rec.l_reg += share * l.l_reg;
      rec.l_align += share * l.l_align;
      rec.total += share * l.total;
    }

    state_.image = refresh_image_prototypes(state_.bank, state_.image);
    rec.mean_diag_proto_cosine = mean_diag_cosine(state_.image, state_.textual);
    state_.epochs_done = epoch + 1;
    const bool eval_now = (state_.epochs_done % cfg_.eval_every == 0) || finished();
    if (evaluator_ && eval_now) {
      const auto ev = evaluator_(EpochView{state_.epochs_done, state_.bank.labels, state_.textual, state_.adapter});
      rec.pl_accuracy = ev.pl_accuracy;
      rec.test_accuracy = ev.test_accuracy;
    }
    state_.report.epochs.push_back(rec);
  }

 private:
  void apply_update(const Gradients& g) {
    // Both optimizers advance in lockstep, so either step counter is the global step.
    const std::uint64_t step = state_.prototype_opt.step;
    const std::uint64_t total = total_steps();
    const double lr_z = cosine_lr(step, total, cfg_.prototype_optim.lr_base);
    adamw_step(state_.prototype_opt, state_.textual.Z.flat(), g.dZ.flat(), lr_z);
    normalize_rows(state_.textual.Z);

    const std::size_t d = ds_.dim;
    std::vector<double> params(2 * d), grads(2 * d);
    std::ranges::copy(state_.adapter.scale, params.begin());
    std::ranges::copy(state_.adapter.bias, params.begin() + static_cast<std::ptrdiff_t>(d));
    std::ranges::copy(g.d_adapter_scale, grads.begin());
    std::ranges::copy(g.d_adapter_bias, grads.begin() + static_cast<std::ptrdiff_t>(d));
    if (!cfg_.adapter_enabled) std::ranges::fill(grads, 0.0);
    const double lr_a = cfg_.adapter_enabled ? cosine_lr(step, total, cfg_.adapter_optim.lr_base) : 0.0;
    adamw_step(state_.adapter_opt, params, grads, lr_a);
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(d), state_.adapter.scale.begin());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(d), params.end(), state_.adapter.bias.begin());
  }

  const EmbeddingDataset& ds_;
  TrainConfig cfg_;
  EpochEvaluator evaluator_;
  TrainState state_;
};

struct TrainResult {
  TextualPrototypes textual;
  Adapter adapter;
  TrainReport report;
};

inline TrainResult train(const EmbeddingDataset& ds, const TrainConfig& cfg, EpochEvaluator evaluator = {}) {
  Trainer trainer(ds, cfg, std::move(evaluator));
  trainer.run();
  const auto& s = trainer.state();
  return {s.textual, s.adapter, s.report};
}

// ---------------------------------------------------------------------------
// JSON views of configuration and metrics
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const AdamWHyper& h) {
  return {{"lr", h.lr_base}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}, {"weight_decay", h.weight_decay}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"beta", c.beta},
          {"lambda_st", c.lambdas.st},
          {"lambda_reg", c.lambdas.reg},
          {"lambda_align", c.lambdas.align},
          {"tau_logit", c.tau_logit},
          {"tau_align", c.tau_align},
          {"da_momentum", c.da_momentum},
          {"prototype_optim", to_json(c.prototype_optim)},
          {"adapter_optim", to_json(c.adapter_optim)},
          {"adapter_enabled", c.adapter_enabled},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"fusion", c.ablation.fusion},
          {"weighting", c.ablation.weighting},
          {"alignment", c.ablation.alignment}};
}

inline AdamWHyper adamw_hyper_from_json(const nlohmann::json& j) {
  AdamWHyper h;
  h.lr_base = j.at("lr").get<double>();
  h.beta1 = j.at("beta1").get<double>();
  h.beta2 = j.at("beta2").get<double>();
  h.eps = j.at("eps").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  return h;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.beta = j.at("beta").get<double>();
  c.lambdas = {j.at("lambda_st").get<double>(), j.at("lambda_reg").get<double>(), j.at("lambda_align").get<double>()};
  c.tau_logit = j.at("tau_logit").get<double>();
  c.tau_align = j.at("tau_align").get<double>();
  c.da_momentum = j.at("da_momentum").get<double>();
  c.prototype_optim = adamw_hyper_from_json(j.at("prototype_optim"));
  c.adapter_optim = adamw_hyper_from_json(j.at("adapter_optim"));
  c.adapter_enabled = j.at("adapter_enabled").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.ablation = {j.at("fusion").get<bool>(), j.at("weighting").get<bool>(), j.at("alignment").get<bool>()};
  return c;
}

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},     {"l_st", r.l_st},   {"l_reg", r.l_reg},
                      {"l_align", r.l_align}, {"total", r.total}, {"mean_diag_proto_cosine", r.mean_diag_proto_cosine}};
  j["pl_accuracy"] = r.pl_accuracy ? nlohmann::json(*r.pl_accuracy) : nlohmann::json(nullptr);
  j["test_accuracy"] = r.test_accuracy ? nlohmann::json(*r.test_accuracy) : nlohmann::json(nullptr);
  return j;
}

inline EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.l_st = j.at("l_st").get<double>();
  r.l_reg = j.at("l_reg").get<double>();
  r.l_align = j.at("l_align").get<double>();
  r.total = j.at("total").get<double>();
  r.mean_diag_proto_cosine = j.at("mean_diag_proto_cosine").get<double>();
  if (!j.at("pl_accuracy").is_null()) r.pl_accuracy = j["pl_accuracy"].get<double>();
  if (!j.at("test_accuracy").is_null()) r.test_accuracy = j["test_accuracy"].get<double>();
  return r;
}

}  // namespace dpa

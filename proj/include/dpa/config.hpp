// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "dpa/binary_io.hpp"
#include "dpa/error.hpp"
#include "dpa/synthgen.hpp"
#include "dpa/trainer.hpp"

namespace dpa {

/// Contents of a run configuration file: a `synth` section and a `train`
/// section, both optional. Missing keys keep their defaults; unknown keys are
/// rejected.
struct RunConfig {
  SynthConfig synth;
  TrainConfig train;
};

/// Applies one `--ablate` token to `cfg`.
inline void apply_ablation(TrainConfig& cfg, std::string_view token) {
  if (token == "no-fusion")
    cfg.ablation.fusion = false;
  else if (token == "no-weighting")
    cfg.ablation.weighting = false;
  else if (token == "no-align")
    cfg.ablation.alignment = false;
  else
    fail(ErrorCode::InvalidConfig, "unknown ablation '" + std::string(token) + "'");
}

namespace detail {

class Section {
 public:
  // An absent or null node (e.g. `train:` with no body) is an empty section.
  Section(const YAML::Node& node, std::string name)
      : node_(node), present_(node.IsDefined() && !node.IsNull()), name_(std::move(name)) {
    if (present_ && !node_.IsMap()) fail(ErrorCode::InvalidConfig, name_ + " must be a mapping");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!present_ || !node_[key]) return;
    try {
      out = node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      fail(ErrorCode::InvalidConfig, name_ + "." + key + " has the wrong type");
    }
  }

  YAML::Node child(const char* key) {
    seen_.insert(key);
    return present_ ? node_[key] : YAML::Node(YAML::NodeType::Null);
  }

  void reject_unknown() const {
    if (!present_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) fail(ErrorCode::InvalidConfig, "unknown key " + name_ + "." + key);
    }
  }

 private:
  YAML::Node node_;
  bool present_;
  std::string name_;
  std::set<std::string> seen_;
};

inline void read_optim(const YAML::Node& node, const std::string& name, AdamWHyper& h) {
  Section s(node, name);
  s.get("lr", h.lr_base);
  s.get("beta1", h.beta1);
  s.get("beta2", h.beta2);
  s.get("eps", h.eps);
  s.get("weight_decay", h.weight_decay);
  s.reject_unknown();
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("YAML: ") + e.what());
  }
  RunConfig cfg;
  if (root.IsNull()) return cfg;
  detail::Section top(root, "config");

  detail::Section synth(top.child("synth"), "synth");
  auto& sc = cfg.synth;
  synth.get("classes", sc.n_classes);
  synth.get("dim", sc.dim);
  synth.get("samples", sc.n_samples);
  synth.get("prompts_per_class", sc.n_prompts);
  synth.get("strong_views", sc.n_views);
  synth.get("intra_class_noise", sc.intra_class_noise);
  synth.get("prompt_noise", sc.prompt_noise);
  synth.get("modality_gap", sc.modality_gap);
  synth.get("gap_class_spread", sc.gap_class_spread);
  synth.get("strong_view_noise", sc.strong_view_noise);
  synth.get("seed", sc.seed);
  if (auto cb = synth.child("class_balance"); cb && !cb.IsNull()) {
    try {
      sc.class_balance = cb.as<std::vector<double>>();
    } catch (const YAML::Exception&) {
      fail(ErrorCode::InvalidConfig, "synth.class_balance must be a list of numbers");
    }
  }
  synth.reject_unknown();

  detail::Section train(top.child("train"), "train");
  auto& tc = cfg.train;
  train.get("epochs", tc.epochs);
  train.get("batch_size", tc.batch_size);
  train.get("beta", tc.beta);
  train.get("lambda_st", tc.lambdas.st);
  train.get("lambda_reg", tc.lambdas.reg);
  train.get("lambda_align", tc.lambdas.align);
  train.get("tau_logit", tc.tau_logit);
  train.get("tau_align", tc.tau_align);
  train.get("da_momentum", tc.da_momentum);
  train.get("adapter_enabled", tc.adapter_enabled);
  train.get("seed", tc.seed);
  train.get("eval_every", tc.eval_every);
  detail::read_optim(train.child("prototype_optim"), "train.prototype_optim", tc.prototype_optim);
  detail::read_optim(train.child("adapter_optim"), "train.adapter_optim", tc.adapter_optim);
  std::vector<std::string> ablate;
  train.get("ablate", ablate);
  for (const auto& token : ablate) apply_ablation(tc, token);
  train.reject_unknown();

  top.reject_unknown();
  sc.validate();
  tc.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(io::read_file(path.string()));
}

}  // namespace dpa

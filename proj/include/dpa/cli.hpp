// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/checkpoint.hpp"
#include "dpa/config.hpp"
#include "dpa/embedding_store.hpp"
#include "dpa/error.hpp"
#include "dpa/evaluator.hpp"
#include "dpa/synthgen.hpp"
#include "dpa/trainer.hpp"

namespace dpa::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kCorruptInput = 3,
  kContractViolation = 4,
  kNumericFailure = 5,
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NormViolation:
    case ErrorCode::CorruptFile:
    case ErrorCode::VersionMismatch:
    case ErrorCode::IoError:
      return kCorruptInput;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::DegenerateOutput:
    case ErrorCode::ZeroMeanVector:
    case ErrorCode::DegenerateRunningMean:
    case ErrorCode::InfeasibleSeparation:
      return kNumericFailure;
    default:
      return kContractViolation;
  }
}

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

inline std::string summary_csv(const TrainReport& report) {
  std::string s = "epoch,l_st,l_reg,l_align,total,pl_accuracy,test_accuracy,mean_diag_proto_cosine\n";
  for (const auto& r : report.epochs) {
    s += std::to_string(r.epoch) + ',' + fmt_double(r.l_st) + ',' + fmt_double(r.l_reg) + ',' +
         fmt_double(r.l_align) + ',' + fmt_double(r.total) + ',' + fmt_optional(r.pl_accuracy) + ',' +
         fmt_optional(r.test_accuracy) + ',' + fmt_double(r.mean_diag_proto_cosine) + '\n';
  }
  return s;
}

inline std::filesystem::path partial(const std::filesystem::path& p) { return p.string() + ".partial"; }

// Runs `body`, converting library errors into exit codes with a message.
template <typename Body>
int guarded(Streams io, const char* command, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    io.err << "dpa " << command << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    io.err << "dpa " << command << ": " << e.what() << '\n';
    return kContractViolation;
  }
}

}  // namespace detail

inline Labels read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "index,label", ErrorCode::CorruptFile, "predictions file must start with 'index,label'");
  Labels out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t index;
    char comma;
    int label;
    require(static_cast<bool>(row >> index >> comma >> label) && comma == ',' && index == out.size(),
            ErrorCode::CorruptFile, "bad predictions row: " + line);
    out.push_back(label);
  }
  return out;
}

inline std::string predictions_csv(const Labels& labels) {
  std::string s = "index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) s += std::to_string(i) + ',' + std::to_string(labels[i]) + '\n';
  return s;
}

struct SynthArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

inline int cmd_synth(const SynthArgs& args, Streams io = {}) {
  return detail::guarded(io, "synth", [&] {
    auto cfg = load_run_config(args.config).synth;
    if (args.seed) cfg.seed = *args.seed;
    const auto file = generate(cfg);
    save_dataset(args.out, file, {{"generator", to_json(cfg)}});
    const auto zs = zero_shot_labels(file.embeddings.weak, build_textual_prototypes(file.embeddings));
    io.out << "wrote " << args.out.string() << " (N=" << cfg.n_samples << ", d=" << cfg.dim << ", C=" << cfg.n_classes
           << ")\nzero-shot accuracy " << detail::fmt_double(top1_accuracy(zs, *file.true_labels)) << '\n';
    return kOk;
  });
}

struct AdaptArgs {
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> config{};  // required unless resuming
  std::filesystem::path out_dir{};
  std::optional<std::uint64_t> seed{};
  std::vector<std::string> ablate{};
  std::optional<std::filesystem::path> resume{};
  std::optional<std::size_t> stop_after{};  // epochs to run in this invocation
};

/// Output file names inside the adapt output directory.
struct AdaptOutputs {
  std::filesystem::path checkpoint, metrics, summary, diagnostics, pl_curve, proto_cosine;

  explicit AdaptOutputs(const std::filesystem::path& dir)
      : checkpoint(dir / "checkpoint.dpac"),
        metrics(dir / "metrics.jsonl"),
        summary(dir / "summary.csv"),
        diagnostics(dir / "diagnostics.json"),
        pl_curve(dir / "pl_curve.csv"),
        proto_cosine(dir / "proto_cosine.csv") {}
};

inline int cmd_adapt(const AdaptArgs& args, Streams io = {}) {
  return detail::guarded(io, "adapt", [&] {
    const auto file = load_dataset(args.dataset);
    const auto& ds = file.embeddings;

    std::optional<Checkpoint> resumed;
    TrainConfig cfg;
    if (args.resume) {
      resumed = load_checkpoint(*args.resume);
      cfg = resumed->config;
    } else {
      require(args.config.has_value(), ErrorCode::InvalidConfig, "--config is required unless --resume is given");
      cfg = load_run_config(*args.config).train;
      if (args.seed) cfg.seed = *args.seed;
      for (const auto& token : args.ablate) apply_ablation(cfg, token);
    }

    EpochEvaluator evaluator;
    if (file.true_labels) evaluator = make_label_evaluator(ds, *file.true_labels);
    Trainer trainer = resumed ? Trainer(ds, cfg, resumed->state, evaluator) : Trainer(ds, cfg, evaluator);

    std::filesystem::create_directories(args.out_dir);
    const AdaptOutputs outputs(args.out_dir);
    {
      std::ofstream metrics(detail::partial(outputs.metrics), std::ios::trunc);
      require(static_cast<bool>(metrics), ErrorCode::IoError, "cannot write metrics");
      for (const auto& rec : trainer.state().report.epochs) metrics << to_json(rec).dump() << '\n';
      std::size_t ran = 0;
      while (!trainer.finished() && (!args.stop_after || ran < *args.stop_after)) {
        trainer.run_epoch();
        ++ran;
        metrics << to_json(trainer.state().report.epochs.back()).dump() << '\n' << std::flush;
      }
    }

    const auto& state = trainer.state();
    save_checkpoint(detail::partial(outputs.checkpoint), Checkpoint{cfg, state});
    io::write_file(detail::partial(outputs.summary).string(), detail::summary_csv(state.report));

    const auto cosine = proto_cosine_matrix(state.image, state.textual);
    nlohmann::json diag = {{"epochs_done", state.epochs_done},
                           {"proto_cosine", nlohmann::json::array()},
                           {"diag_dominance", cosine.diag_dominance}};
    for (std::size_t j = 0; j < cosine.cosine.rows(); ++j)
      diag["proto_cosine"].push_back(std::vector<double>(cosine.cosine.row(j).begin(), cosine.cosine.row(j).end()));
    nlohmann::json series = nlohmann::json::array();
    for (const auto& r : state.report.epochs) series.push_back(to_json(r));
    diag["epochs"] = series;
    io::write_file(detail::partial(outputs.diagnostics).string(), diag.dump(2) + "\n");
    io::write_file(detail::partial(outputs.proto_cosine).string(), cosine_csv(cosine));

    std::vector<std::filesystem::path> done{outputs.metrics, outputs.checkpoint, outputs.summary,
                                            outputs.diagnostics, outputs.proto_cosine};
    const bool have_curve = !state.report.epochs.empty() &&
                            std::ranges::all_of(state.report.epochs, [](const auto& r) { return r.pl_accuracy.has_value(); });
    if (have_curve) {
      io::write_file(detail::partial(outputs.pl_curve).string(), curve_csv(pl_accuracy_curve(state.report)));
      done.push_back(outputs.pl_curve);
    }
    for (const auto& p : done) std::filesystem::rename(detail::partial(p), p);

    io.out << "epochs " << state.epochs_done << '/' << cfg.epochs << '\n';
    if (!state.report.epochs.empty()) {
      const auto& last = state.report.epochs.back();
      io.out << "final loss " << detail::fmt_double(last.total) << '\n';
      if (last.test_accuracy) io.out << "final accuracy " << detail::fmt_double(*last.test_accuracy) << '\n';
    }
    return kOk;
  });
}

struct PredictArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::filesystem::path out;
};

inline int cmd_predict(const PredictArgs& args, Streams io = {}) {
  return detail::guarded(io, "predict", [&] {
    const auto ck = load_checkpoint(args.checkpoint);
    const auto file = load_dataset(args.dataset);
    const auto& ds = file.embeddings;
    require(ck.state.textual.Z.rows() == ds.n_classes && ck.state.textual.Z.cols() == ds.dim,
            ErrorCode::DimensionMismatch, "checkpoint shape does not match dataset");
    const auto labels = predict(ck.state.textual, ck.state.adapter, ds.weak);
    io::write_file(args.out.string(), predictions_csv(labels));
    io.out << "wrote " << labels.size() << " predictions to " << args.out.string() << '\n';
    return kOk;
  });
}

struct EvalArgs {
  std::filesystem::path predictions;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> out;  // confusion CSV; JSON goes next to it
};

inline int cmd_eval(const EvalArgs& args, Streams io = {}) {
  return detail::guarded(io, "eval", [&] {
    const auto pred = read_predictions(args.predictions);
    const auto file = load_dataset(args.dataset);
    require(file.true_labels.has_value(), ErrorCode::MissingLabels, "dataset has no ground-truth labels");
    const double acc = top1_accuracy(pred, *file.true_labels);
    const auto cm = confusion(pred, *file.true_labels, file.embeddings.n_classes);
    auto csv_path = args.out.value_or(std::filesystem::path(args.predictions).replace_extension(".confusion.csv"));
    auto json_path = csv_path;
    json_path.replace_extension(".json");
    io::write_file(csv_path.string(), confusion_csv(cm, file.embeddings.class_names));
    io::write_file(json_path.string(), confusion_json(cm, file.embeddings.class_names, acc).dump(2) + "\n");
    io.out << "accuracy " << detail::fmt_double(acc) << '\n';
    return kOk;
  });
}

}  // namespace dpa::cli

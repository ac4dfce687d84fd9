// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/checkpoint.hpp"
#include "dpa/cli.hpp"
#include "dpa/evaluator.hpp"
#include "dpa/synthgen.hpp"
#include "dpa/trainer.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
    if (!ok) {
      pass = false;
      detail += " [x]";
    }
  }
};

// Frozen zero-shot accuracy of the reference fixture, derived once with the
// brute-force loop in test_synthgen.cpp.
constexpr double kFixtureBaseline = 0.805;

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  const dpa::TrainConfig defaults;
  const dpa::Temperatures temps{defaults.tau_logit, defaults.tau_align};
  const struct {
    const char* name;
    dpa::Lambdas mask;
  } losses[] = {{"st", {1, 0, 0}}, {"reg", {0, 1, 0}}, {"align", {0, 0, 1}}, {"total", {1, 1, 1}}};
  std::uint64_t seed = 100;
  for (const auto& l : losses) {
    const double worst = gradcheck::worst_over_points(seed++, 20, l.mask, temps);
    o.check(worst < 1e-4, std::string(l.name) + fmt(" %.1e", worst));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 10.0, fmt("%.2fs", secs));
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> label(0, 9);
  std::uniform_real_distribution<double> ud;
  const std::size_t n = 500, c = 10, d = 32, k = 4;
  double worst = 0.0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };

  // Textual prototypes.
  std::vector<oracle::Rows> prompts(c);
  dpa::Mat prompt_mat(c * k, d);
  for (std::size_t j = 0; j < c; ++j) {
    prompts[j] = oracle::random_unit_rows(gen, k, d);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t x = 0; x < d; ++x) prompt_mat(j * k + p, x) = prompts[j][p][x];
  }
  const auto tp = dpa::build_textual_prototypes(prompt_mat, c);
  const auto z = oracle::text_prototypes(prompts);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t x = 0; x < d; ++x) track(tp.Z(j, x), z[j][x]);

  // Image prototypes: grouped means with fallback, from a full bank.
  const auto feats = oracle::random_unit_rows(gen, n, d);
  dpa::Labels labels(n);
  for (auto& y : labels) y = label(gen) % 8;  // classes 8 and 9 stay empty
  dpa::MemoryBank bank(n, d);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  dpa::update_memory_bank(bank, all, oracle::to_mat(feats), labels, c);
  const dpa::ImagePrototypes prev{tp.Z, {}};
  const auto ip = dpa::refresh_image_prototypes(bank, prev);
  const auto p_oracle = oracle::grouped_means(feats, labels, z);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t x = 0; x < d; ++x) track(ip.P(j, x), p_oracle[j][x]);

  // Zero-shot init of P and the bank from the weak features.
  {
    dpa::EmbeddingDataset ds;
    ds.n_samples = n;
    ds.dim = d;
    ds.n_classes = c;
    ds.n_prompts = k;
    ds.n_views = 1;
    ds.weak = oracle::to_mat(feats);
    ds.strong = ds.weak;
    ds.prompts = prompt_mat;
    for (std::size_t j = 0; j < c; ++j) ds.class_names.push_back(std::to_string(j));
    const auto init = dpa::init_image_prototypes(ds, dpa::Adapter::identity(d), tp);
    dpa::Labels zs(n);
    for (std::size_t i = 0; i < n; ++i) {
      oracle::Vec s;
      for (const auto& zj : z) s.push_back(oracle::inner(feats[i], zj));
      zs[i] = static_cast<int>(oracle::first_argmax(s));
    }
    const auto want = oracle::grouped_means(feats, zs, z);
    bool same_labels = init.bank.labels == zs;
    o.check(same_labels, "init labels");
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t x = 0; x < d; ++x) track(init.image.P(j, x), want[j][x]);
  }

  // DA over a sequence of batches, then fusion and weights.
  std::vector<oracle::Rows> batches;
  for (int b = 0; b < 5; ++b) batches.push_back(oracle::softmax_scores(oracle::random_unit_rows(gen, 100, d), z, 0.05));
  oracle::Vec mean(c, 1.0 / static_cast<double>(c));
  const auto da_oracle = oracle::da_sequence(batches, mean, 0.9);
  auto da = dpa::DAState::uniform(c, 0.9);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto got = dpa::distribution_align(oracle::to_mat(batches[b]), da);
    for (std::size_t i = 0; i < batches[b].size(); ++i)
      for (std::size_t j = 0; j < c; ++j) track(got(i, j), da_oracle[b][i][j]);
  }
  for (std::size_t j = 0; j < c; ++j) track(da.running_mean[j], mean[j]);

  const double beta = ud(gen);
  const auto p_v = oracle::softmax_scores(feats, p_oracle, 0.05);
  const auto p_t = oracle::softmax_scores(feats, z, 0.05);
  const auto fused = dpa::fuse_and_label(oracle::to_mat(p_t), oracle::to_mat(p_v), beta);
  bool labels_ok = true;
  for (std::size_t i = 0; i < n; ++i) {
    oracle::Vec f(c);
    for (std::size_t j = 0; j < c; ++j) {
      f[j] = beta * p_t[i][j] + (1 - beta) * p_v[i][j];
      track(fused.fused(i, j), f[j]);
    }
    labels_ok = labels_ok && fused.labels[i] == static_cast<int>(oracle::first_argmax(f));
  }
  o.check(labels_ok, "fused labels");

  const auto w = dpa::sample_weights(oracle::to_mat(feats), fused.labels, tp, ip);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(fused.labels[i]);
    track(w[i], oracle::clamp01(oracle::inner(feats[i], z[y])) * oracle::clamp01(oracle::inner(feats[i], p_oracle[y])));
  }

  dpa::Labels truth(n);
  for (auto& y : truth) y = label(gen);
  const auto cm = dpa::confusion(fused.labels, truth, c);
  const auto cm_oracle = oracle::confusion(fused.labels, truth, c);
  bool cm_ok = true;
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p) cm_ok = cm_ok && cm(t, p) == cm_oracle[t][p];
  o.check(cm_ok, "confusion");
  o.check(worst < 1e-6, fmt("max abs diff %.1e", worst));
  return o;
}

Outcome ablation_algebra() {
  Outcome o;
  const auto file = dpa::generate(fixture::toy_synth(96));
  const auto& ds = file.embeddings;

  // beta = 1 and beta = 0 against direct argmaxes on a trained state.
  dpa::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.tau_logit = 0.05;
  dpa::Trainer trainer(ds, cfg);
  trainer.run();
  const auto& s = trainer.state();
  const auto weak = dpa::adapter_apply(s.adapter, ds.weak);
  auto da_text = s.da;
  auto da_copy = s.da;
  auto da_img = s.da;
  const auto text = dpa::generate_pseudo_labels(weak, s.textual, s.image, da_text, {1.0, cfg.tau_logit, true});
  const auto aligned = dpa::distribution_align(dpa::text_scores(weak, s.textual, cfg.tau_logit), da_copy);
  const auto image = dpa::generate_pseudo_labels(weak, s.textual, s.image, da_img, {0.0, cfg.tau_logit, true});
  bool beta1 = true, beta0 = true;
  for (std::size_t i = 0; i < ds.n_samples; ++i) {
    beta1 = beta1 && text.labels[i] == static_cast<int>(dpa::argmax(aligned.row(i)));
    beta0 = beta0 && image.labels[i] == static_cast<int>(dpa::argmax(dpa::matmul_transposed(weak, s.image.P).row(i)));
  }
  o.check(beta1, "beta=1 text-only");
  o.check(beta0, "beta=0 image-only");

  // All lambdas zero leaves every parameter bit-identical.
  auto frozen = cfg;
  frozen.lambdas = {0, 0, 0};
  dpa::Trainer noop(ds, frozen);
  const auto z0 = noop.state().textual;
  const auto a0 = noop.state().adapter;
  noop.run();
  o.check(noop.state().textual == z0 && noop.state().adapter == a0, "lambda=0 no-op");

  // Ablation flags against the explicit model definitions.
  auto run = [&](const dpa::TrainConfig& c) {
    dpa::Trainer t(ds, c);
    t.run();
    return t.state();
  };
  struct Variant {
    const char* name;
    std::vector<const char*> flags;
    std::function<void(dpa::TrainConfig&)> explicit_form;
  };
  const std::vector<Variant> variants = {
      {"Base", {"no-fusion", "no-weighting", "no-align"},
       [](dpa::TrainConfig& c) {
         c.beta = 1.0;
         c.lambdas.align = 0.0;
         c.ablation.weighting = false;
       }},
      {"Center", {"no-weighting", "no-align"},
       [](dpa::TrainConfig& c) {
         c.lambdas.align = 0.0;
         c.ablation.weighting = false;
       }},
      {"Center+w", {"no-align"}, [](dpa::TrainConfig& c) { c.lambdas.align = 0.0; }},
  };
  for (const auto& v : variants) {
    auto flagged = cfg;
    for (const char* f : v.flags) dpa::apply_ablation(flagged, f);
    auto manual = cfg;
    v.explicit_form(manual);
    o.check(run(flagged) == run(manual), v.name);
  }

  // Unweighted labeling gives every sample weight 1.
  auto da_w = s.da;
  const auto unweighted = dpa::generate_pseudo_labels(weak, s.textual, s.image, da_w, {cfg.beta, cfg.tau_logit, false});
  o.check(std::ranges::all_of(unweighted.weights, [](double w) { return w == 1.0; }), "no-weighting w=1");
  return o;
}

struct EndToEnd {
  dpa::TrainReport full;
  dpa::TrainReport no_fusion;
  double baseline = 0.0;
  double seconds = 0.0;
};

EndToEnd run_end_to_end() {
  EndToEnd e;
  const auto t0 = Clock::now();
  const auto file = dpa::generate(fixture::reference_synth());
  const auto& ds = file.embeddings;
  const auto zs = dpa::zero_shot_labels(ds.weak, dpa::build_textual_prototypes(ds));
  e.baseline = dpa::top1_accuracy(zs, *file.true_labels);
  const auto evaluator = dpa::make_label_evaluator(ds, *file.true_labels);
  const dpa::TrainConfig cfg;
  e.full = dpa::train(ds, cfg, evaluator).report;
  auto base = cfg;
  dpa::apply_ablation(base, "no-fusion");
  e.no_fusion = dpa::train(ds, base, evaluator).report;
  e.seconds = seconds_since(t0);
  return e;
}

Outcome end_to_end(const EndToEnd& e) {
  Outcome o;
  o.check(e.baseline == kFixtureBaseline, fmt("baseline %.4f", e.baseline));
  const auto& first = e.full.epochs.front();
  const auto& last = e.full.epochs.back();
  o.check(e.full.epochs.size() == 30, fmt("%.0f epochs", static_cast<double>(e.full.epochs.size())));
  o.check(*last.test_accuracy - e.baseline >= 0.10, fmt("(a) test %.4f", *last.test_accuracy));
  o.check(*last.pl_accuracy >= *first.pl_accuracy,
          fmt("(b) PL %.4f", *first.pl_accuracy) + fmt(" -> %.4f", *last.pl_accuracy));
  o.check(last.mean_diag_proto_cosine > first.mean_diag_proto_cosine,
          fmt("(c) diag cos %.4f", first.mean_diag_proto_cosine) + fmt(" -> %.4f", last.mean_diag_proto_cosine));
  const double base_acc = *e.no_fusion.epochs.back().test_accuracy;
  o.check(*last.test_accuracy >= base_acc, fmt("(d) no-fusion %.4f", base_acc));
  o.check(e.seconds < 120.0, fmt("%.1fs", e.seconds));
  return o;
}

Outcome fairness_effect() {
  Outcome o;
  auto sc = fixture::reference_synth();
  std::vector<double> w(10, 0.2 / 8.0);
  w[0] = w[1] = 0.4;
  sc.class_balance = w;
  const auto file = dpa::generate(sc);
  const auto& ds = file.embeddings;
  auto entropy_with = [&](double lambda_reg) {
    dpa::TrainConfig cfg;
    cfg.lambdas.reg = lambda_reg;
    const auto res = dpa::train(ds, cfg);
    return dpa::mean_prediction_entropy(
        dpa::text_scores(dpa::adapter_apply(res.adapter, ds.weak), res.textual, cfg.tau_logit));
  };
  const double with = entropy_with(1.0), without = entropy_with(0.0);
  o.check(with > without, fmt("H(lambda2=1) %.4f", with) + fmt(" vs H(lambda2=0) %.4f", without));
  return o;
}

Outcome determinism() {
  Outcome o;
  namespace fs = std::filesystem;
  const auto dir = fixture::scratch_dir("acceptance_determinism");
  dpa::save_dataset(dir / "fixture.dpae", dpa::generate(fixture::reference_synth()));
  dpa::io::write_file((dir / "run.yaml").string(), "train: {}\n");
  std::ostringstream sink;
  for (const char* out : {"a", "b"}) {
    const int rc = dpa::cli::cmd_adapt({.dataset = dir / "fixture.dpae", .config = dir / "run.yaml", .out_dir = dir / out},
                                       {sink, sink});
    o.check(rc == 0, std::string("run ") + out + " exit " + std::to_string(rc));
  }
  for (const char* name : {"checkpoint.dpac", "metrics.jsonl"}) {
    const bool same = dpa::io::read_file((dir / "a" / name).string()) == dpa::io::read_file((dir / "b" / name).string());
    o.check(same, std::string(name) + (same ? " identical" : " differs"));
  }
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& body) {
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report("gradient correctness", gradient_correctness);
  report("oracle equivalence", oracle_equivalence);
  report("identity/ablation algebra", ablation_algebra);
  report("synthetic end-to-end", [] { return end_to_end(run_end_to_end()); });
  report("fairness effect", fairness_effect);
  report("determinism", determinism);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

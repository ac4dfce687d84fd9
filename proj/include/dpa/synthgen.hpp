// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/embedding_store.hpp"
#include "dpa/error.hpp"
#include "dpa/matrix.hpp"
#include "dpa/random.hpp"

namespace dpa {

/// Synthetic two-modality dataset: image clusters around well-separated
/// anchors, prompt embeddings around the same anchors shifted by a modality
/// gap. The gap mixes one shared direction with a class-specific lean toward
/// another class's anchor; gap_class_spread = 0 leaves only the shared part.
/// Noise is per dimension: x += sigma * N(0, 1) before renormalization.
struct SynthConfig {
  std::size_t n_classes = 10;
  std::size_t dim = 64;
  std::size_t n_samples = 2000;
  std::size_t n_prompts = 4;
  std::size_t n_views = 4;
  double intra_class_noise = 0.25;  // sigma_v
  double prompt_noise = 0.05;       // sigma_t
  double modality_gap = 0.8;        // gamma
  double strong_view_noise = 0.1;   // sigma_s
  double gap_class_spread = 0.8;    // share of the gap's energy that is class specific
  std::optional<std::vector<double>> class_balance;
  std::uint64_t seed = 7;

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::InvalidConfig, what); };
    if (n_samples == 0) bad("n_samples must be positive");
    if (n_classes < 2 || n_classes > n_samples) bad("need 2 <= C <= N");
    if (dim < 2) bad("dim must be >= 2");
    if (n_prompts < 1 || n_views < 1) bad("n_prompts and n_views must be >= 1");
    for (double s : {intra_class_noise, prompt_noise, modality_gap, strong_view_noise})
      if (!(s >= 0.0) || !std::isfinite(s)) bad("noise levels and gap must be finite and >= 0");
    if (!(gap_class_spread >= 0.0 && gap_class_spread <= 1.0)) bad("gap_class_spread must lie in [0, 1]");
    if (class_balance) {
      if (class_balance->size() != n_classes) bad("class_balance needs one weight per class");
      double total = 0.0;
      for (double w : *class_balance) {
        if (!(w >= 0.0)) bad("class_balance weights must be >= 0");
        total += w;
      }
      if (std::abs(total - 1.0) > 1e-6) bad("class_balance weights must sum to 1");
    }
  }

  bool operator==(const SynthConfig&) const = default;
};

inline constexpr double kMaxAnchorCosine = 0.5;
inline constexpr int kAnchorAttempts = 1000;

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  do {
    for (auto& x : v) x = rng.normal();
  } while (normalize_in_place(v) < 1e-12);
  return v;
}

inline void add_noise(Rng& rng, std::span<double> v, double sigma) {
  if (sigma == 0.0) return;
  const double s = sigma;
  for (auto& x : v) x += s * rng.normal();
}

// Greedy farthest-point selection of C anchors from a pool of random unit
// vectors; retried until the largest pairwise cosine is at most 0.5.
inline Mat pick_anchors(Rng& rng, std::size_t c, std::size_t d) {
  const std::size_t pool_size = 8 * c;
  for (int attempt = 0; attempt < kAnchorAttempts; ++attempt) {
    Mat pool(pool_size, d);
    for (std::size_t i = 0; i < pool_size; ++i) {
      const auto v = random_unit(rng, d);
      std::ranges::copy(v, pool.row(i).begin());
    }
    std::vector<std::size_t> chosen{0};
    std::vector<double> closest(pool_size, -2.0);  // max cosine to any chosen anchor
    while (chosen.size() < c) {
      const auto last = chosen.back();
      for (std::size_t i = 0; i < pool_size; ++i) closest[i] = std::max(closest[i], dot(pool.row(i), pool.row(last)));
      std::size_t best = pool_size;
      for (std::size_t i = 0; i < pool_size; ++i) {
        if (std::ranges::find(chosen, i) != chosen.end()) continue;
        if (best == pool_size || closest[i] < closest[best]) best = i;
      }
      chosen.push_back(best);
    }
    Mat anchors(c, d);
    double worst = -1.0;
    for (std::size_t j = 0; j < c; ++j) {
      std::ranges::copy(pool.row(chosen[j]), anchors.row(j).begin());
      for (std::size_t r = 0; r < j; ++r) worst = std::max(worst, dot(anchors.row(j), anchors.row(r)));
    }
    if (worst <= kMaxAnchorCosine) return anchors;
  }
  fail(ErrorCode::InfeasibleSeparation,
       "no anchor set with pairwise cosine <= 0.5 for C=" + std::to_string(c) + ", d=" + std::to_string(d));
}

// Exact per-class counts (largest remainder), then a seeded shuffle.
inline Labels assign_labels(Rng& rng, const SynthConfig& cfg) {
  const std::size_t n = cfg.n_samples, c = cfg.n_classes;
  std::vector<double> weights = cfg.class_balance.value_or(std::vector<double>(c, 1.0 / static_cast<double>(c)));
  std::vector<std::size_t> counts(c);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < c; ++j) {
    const double exact = weights[j] * static_cast<double>(n);
    counts[j] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[j];
    remainders.emplace_back(exact - std::floor(exact), j);
  }
  std::ranges::stable_sort(remainders, [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % c].second];

  Labels labels;
  labels.reserve(n);
  for (std::size_t j = 0; j < c; ++j) labels.insert(labels.end(), counts[j], static_cast<int>(j));
  rng.shuffle(std::span<int>(labels));
  return labels;
}

// Rounds through float32 and renormalizes so rows are exactly what the file
// will hold.
inline void finalize_row(std::span<double> v) {
  normalize_in_place(v);
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace detail

inline DatasetFile generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_samples, c = cfg.n_classes, d = cfg.dim, k = cfg.n_prompts, v = cfg.n_views;
  Rng rng(cfg.seed);

  const Mat anchors = detail::pick_anchors(rng, c, d);
  const auto shared_gap = detail::random_unit(rng, d);
  Mat gaps(c, d);
  const double shared_w = std::sqrt(1.0 - cfg.gap_class_spread), own_w = std::sqrt(cfg.gap_class_spread);
  for (std::size_t j = 0; j < c; ++j) {
    // Class-specific part points at the anchor of one other, randomly chosen
    // class, so the prompt leans toward a cluster it should not claim.
    auto other = static_cast<std::size_t>(rng.below(c - 1));
    if (other >= j) ++other;
    std::vector<double> own(anchors.row(other).begin(), anchors.row(other).end());
    normalize_in_place(own);
    auto g = gaps.row(j);
    for (std::size_t x = 0; x < d; ++x) g[x] = shared_w * shared_gap[x] + own_w * own[x];
    normalize_in_place(g);
  }
  Labels labels = detail::assign_labels(rng, cfg);

  DatasetFile file;
  auto& ds = file.embeddings;
  ds.n_samples = n;
  ds.dim = d;
  ds.n_classes = c;
  ds.n_prompts = k;
  ds.n_views = v;
  ds.weak = Mat(n, d);
  ds.strong = Mat(n * v, d);
  ds.prompts = Mat(c * k, d);
  for (std::size_t j = 0; j < c; ++j) ds.class_names.push_back("class_" + std::to_string(j));

  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t p = 0; p < k; ++p) {
      auto row = ds.prompts.row(j * k + p);
      for (std::size_t x = 0; x < d; ++x) row[x] = anchors(j, x) + cfg.modality_gap * gaps(j, x);
      detail::add_noise(rng, row, cfg.prompt_noise);
      detail::finalize_row(row);
    }

  for (std::size_t i = 0; i < n; ++i) {
    auto weak = ds.weak.row(i);
    std::ranges::copy(anchors.row(static_cast<std::size_t>(labels[i])), weak.begin());
    detail::add_noise(rng, weak, cfg.intra_class_noise);
    normalize_in_place(weak);
    for (std::size_t s = 0; s < v; ++s) {
      auto strong = ds.strong.row(i * v + s);
      std::ranges::copy(weak, strong.begin());
      detail::add_noise(rng, strong, cfg.strong_view_noise);
      detail::finalize_row(strong);
    }
    detail::finalize_row(weak);
  }
  file.true_labels = std::move(labels);
  return file;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json j = {{"classes", c.n_classes},
                      {"dim", c.dim},
                      {"samples", c.n_samples},
                      {"prompts_per_class", c.n_prompts},
                      {"strong_views", c.n_views},
                      {"intra_class_noise", c.intra_class_noise},
                      {"prompt_noise", c.prompt_noise},
                      {"modality_gap", c.modality_gap},
                      {"gap_class_spread", c.gap_class_spread},
                      {"strong_view_noise", c.strong_view_noise},
                      {"seed", c.seed}};
  j["class_balance"] = c.class_balance ? nlohmann::json(*c.class_balance) : nlohmann::json(nullptr);
  return j;
}

}  // namespace dpa

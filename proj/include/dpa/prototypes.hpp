// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "dpa/embedding_store.hpp"
#include "dpa/error.hpp"
#include "dpa/matrix.hpp"
#include "dpa/optim.hpp"

namespace dpa {

inline constexpr double kZeroMeanNorm = 1e-8;

/// Learnable class prototypes built from prompt embeddings; the classifier
/// used at inference time. Rows are kept at unit norm.
struct TextualPrototypes {
  Mat Z;  // C x d

  std::size_t n_classes() const noexcept { return Z.rows(); }
  bool operator==(const TextualPrototypes&) const = default;
};

/// Non-parametric class means of pseudo-labeled image features.
struct ImagePrototypes {
  Mat P;                        // C x d, unit rows
  std::vector<std::size_t> counts;  // members per class at the last rebuild

  bool operator==(const ImagePrototypes&) const = default;
};

/// Latest adapter-output weak feature and pseudo-label for every sample.
struct MemoryBank {
  Mat features;  // N x d
  Labels labels;
  std::vector<bool> filled;

  MemoryBank() = default;
  MemoryBank(std::size_t n, std::size_t d) : features(n, d), labels(n, 0), filled(n, false) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool all_filled() const { return std::ranges::all_of(filled, [](bool f) { return f; }); }
  bool operator==(const MemoryBank&) const = default;
};

inline TextualPrototypes build_textual_prototypes(const Mat& prompts, std::size_t n_classes) {
  require(n_classes >= 1 && prompts.rows() % n_classes == 0 && prompts.rows() > 0, ErrorCode::ShapeMismatch,
          "prompt rows must be C*k");
  const std::size_t k = prompts.rows() / n_classes;
  TextualPrototypes out{Mat(n_classes, prompts.cols(), 0.0)};
  for (std::size_t j = 0; j < n_classes; ++j) {
    auto z = out.Z.row(j);
    for (std::size_t p = 0; p < k; ++p) {
      auto src = prompts.row(j * k + p);
      for (std::size_t c = 0; c < z.size(); ++c) z[c] += src[c];
    }
    for (auto& x : z) x /= static_cast<double>(k);
    const double n = normalize_in_place(z);
    if (!(n >= kZeroMeanNorm))
      fail(ErrorCode::ZeroMeanVector, "prompt mean of class " + std::to_string(j) + " vanishes");
  }
  return out;
}

inline TextualPrototypes build_textual_prototypes(const EmbeddingDataset& ds) {
  return build_textual_prototypes(ds.prompts, ds.n_classes);
}

namespace detail {

// Grouped mean of labeled rows, normalized. Rows of empty classes are taken
// from `fallback`.
inline ImagePrototypes grouped_prototypes(const Mat& features, std::span<const int> labels,
                                          std::size_t n_classes, const Mat& fallback) {
  ImagePrototypes out{Mat(n_classes, features.cols(), 0.0), std::vector<std::size_t>(n_classes, 0)};
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    auto dst = out.P.row(y);
    auto src = features.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    ++out.counts[y];
  }
  for (std::size_t j = 0; j < n_classes; ++j) {
    auto row = out.P.row(j);
    if (out.counts[j] == 0) {
      std::ranges::copy(fallback.row(j), row.begin());
      continue;
    }
    for (auto& x : row) x /= static_cast<double>(out.counts[j]);
    // Members pointing in opposite directions can cancel; keep the fallback then.
    if (!(normalize_in_place(row) >= kZeroMeanNorm)) std::ranges::copy(fallback.row(j), row.begin());
  }
  return out;
}

}  // namespace detail

/// Zero-shot labels: argmax of similarity to the textual prototypes.
inline Labels zero_shot_labels(const Mat& features, const TextualPrototypes& tp) {
  const Mat scores = matmul_transposed(features, tp.Z);
  Labels out(features.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(argmax(scores.row(i)));
  return out;
}

struct PrototypeInit {
  ImagePrototypes image;
  MemoryBank bank;
};

/// Seeds image prototypes and the memory bank from zero-shot pseudo-labels of
/// the adapted weak views. Classes nobody is assigned to start at Z_j.
inline PrototypeInit init_image_prototypes(const EmbeddingDataset& ds, const Adapter& adapter,
                                           const TextualPrototypes& tp) {
  PrototypeInit init;
  init.bank = MemoryBank(ds.n_samples, ds.dim);
  init.bank.features = adapter_apply(adapter, ds.weak);
  init.bank.labels = zero_shot_labels(init.bank.features, tp);
  init.bank.filled.assign(ds.n_samples, true);
  init.image = detail::grouped_prototypes(init.bank.features, init.bank.labels, tp.n_classes(), tp.Z);
  return init;
}

/// Overwrites exactly the slots named by `indices`.
inline void update_memory_bank(MemoryBank& mb, std::span<const std::size_t> indices, const Mat& features,
                               std::span<const int> pseudo_labels, std::size_t n_classes) {
  require(features.rows() == indices.size() && pseudo_labels.size() == indices.size(), ErrorCode::ShapeMismatch,
          "memory bank update sizes differ");
  require(indices.empty() || features.cols() == mb.features.cols(), ErrorCode::ShapeMismatch,
          "feature dimension");
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < mb.size(), ErrorCode::IndexOutOfRange, "memory bank slot " + std::to_string(indices[r]));
    require(pseudo_labels[r] >= 0 && static_cast<std::size_t>(pseudo_labels[r]) < n_classes,
            ErrorCode::LabelOutOfRange, "pseudo-label");
  }
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto slot = indices[r];
    std::ranges::copy(features.row(r), mb.features.row(slot).begin());
    mb.labels[slot] = pseudo_labels[r];
    mb.filled[slot] = true;
  }
}

inline void update_memory_bank(MemoryBank& mb, const Batch& batch, const Mat& features,
                               std::span<const int> pseudo_labels, std::size_t n_classes) {
  update_memory_bank(mb, batch.indices, features, pseudo_labels, n_classes);
}

/// Rebuilds P from the memory bank; empty classes carry their previous row.
inline ImagePrototypes refresh_image_prototypes(const MemoryBank& mb, const ImagePrototypes& prev) {
  for (std::size_t i = 0; i < mb.size(); ++i)
    require(mb.filled[i], ErrorCode::UnfilledSlot, "memory bank slot " + std::to_string(i) + " never written");
  return detail::grouped_prototypes(mb.features, mb.labels, prev.P.rows(), prev.P);
}

}  // namespace dpa

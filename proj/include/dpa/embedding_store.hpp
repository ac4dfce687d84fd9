// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/binary_io.hpp"
#include "dpa/error.hpp"
#include "dpa/matrix.hpp"
#include "dpa/random.hpp"

namespace dpa {

using Labels = std::vector<int>;

/// Frozen embeddings of an unlabeled target set. Ground truth is kept out of
/// this type on purpose: training code only ever sees an EmbeddingDataset.
struct EmbeddingDataset {
  std::size_t n_samples = 0;
  std::size_t dim = 0;
  std::size_t n_classes = 0;
  std::size_t n_prompts = 0;  // k prompt embeddings per class
  std::size_t n_views = 0;    // V strong views per sample

  Mat weak;     // N x d
  Mat strong;   // (N*V) x d, view v of sample i at row i*V + v
  Mat prompts;  // (C*k) x d, prompt p of class j at row j*k + p
  std::vector<std::string> class_names;

  std::span<const double> strong_view(std::size_t sample, std::size_t view) const {
    return strong.row(sample * n_views + view);
  }
  std::span<const double> prompt(std::size_t cls, std::size_t p) const {
    return prompts.row(cls * n_prompts + p);
  }

  bool operator==(const EmbeddingDataset&) const = default;
};

/// Contents of one dataset file: embeddings plus the optional held-back labels.
struct DatasetFile {
  EmbeddingDataset embeddings;
  std::optional<Labels> true_labels;

  bool operator==(const DatasetFile&) const = default;
};

namespace detail {

inline constexpr char kDatasetMagic[4] = {'D', 'P', 'A', 'E'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr double kNormReject = 1e-3;
inline constexpr double kNormExact = 1e-6;

// Renormalizes rows within tolerance and rounds back to float32 so that a
// reloaded dataset is still representable bit-exactly on disk.
inline void check_and_normalize(Mat& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = norm(row);
    if (!(std::abs(n - 1.0) <= kNormReject))
      fail(ErrorCode::NormViolation,
           std::string(what) + " row " + std::to_string(r) + " has norm " + std::to_string(n));
    if (std::abs(n - 1.0) > kNormExact)
      for (auto& x : row) x = static_cast<double>(static_cast<float>(x / n));
  }
}

inline void check_shapes(const EmbeddingDataset& ds) {
  require(ds.n_classes >= 2 && ds.n_samples >= ds.n_classes, ErrorCode::DimensionMismatch,
          "need N >= C >= 2");
  require(ds.dim >= 2, ErrorCode::DimensionMismatch, "need d >= 2");
  require(ds.n_prompts >= 1 && ds.n_views >= 1, ErrorCode::DimensionMismatch,
          "need k >= 1 and V >= 1");
  require(ds.weak.rows() == ds.n_samples && ds.weak.cols() == ds.dim, ErrorCode::DimensionMismatch,
          "weak array shape");
  require(ds.strong.rows() == ds.n_samples * ds.n_views && ds.strong.cols() == ds.dim,
          ErrorCode::DimensionMismatch, "strong array shape");
  require(ds.prompts.rows() == ds.n_classes * ds.n_prompts && ds.prompts.cols() == ds.dim,
          ErrorCode::DimensionMismatch, "prompt array shape");
  require(ds.class_names.size() == ds.n_classes, ErrorCode::DimensionMismatch,
          "class name count");
}

inline void check_labels(const Labels& labels, std::size_t n, std::size_t c) {
  require(labels.size() == n, ErrorCode::DimensionMismatch, "label count");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      fail(ErrorCode::LabelOutOfRange, "label of sample " + std::to_string(i));
}

}  // namespace detail

/// Serializes `file` to the DPAE byte layout.
inline std::string encode_dataset(const DatasetFile& file) {
  const auto& ds = file.embeddings;
  detail::check_shapes(ds);
  if (file.true_labels) detail::check_labels(*file.true_labels, ds.n_samples, ds.n_classes);

  io::ByteWriter w;
  w.bytes({detail::kDatasetMagic, 4});
  w.u32(detail::kDatasetVersion);
  for (auto v : {ds.n_samples, ds.dim, ds.n_classes, ds.n_prompts, ds.n_views})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(file.true_labels ? 1u : 0u);
  w.f32_array(ds.weak.flat());
  w.f32_array(ds.strong.flat());
  w.f32_array(ds.prompts.flat());
  if (file.true_labels)
    for (int y : *file.true_labels) w.u32(static_cast<std::uint32_t>(y));
  for (const auto& name : ds.class_names) w.string(name);
  return w.buffer();
}

/// Parses and validates a DPAE byte buffer.
inline DatasetFile decode_dataset(std::string_view bytes) {
  io::ByteReader r(bytes, ErrorCode::DimensionMismatch);
  require(bytes.size() >= 4 + 4 * 7 && bytes.substr(0, 4) == std::string_view(detail::kDatasetMagic, 4),
          ErrorCode::MalformedHeader, "missing DPAE magic");
  r.bytes(4);
  const auto version = r.u32();
  require(version == detail::kDatasetVersion, ErrorCode::MalformedHeader,
          "unsupported version " + std::to_string(version));

  DatasetFile file;
  auto& ds = file.embeddings;
  ds.n_samples = r.u32();
  ds.dim = r.u32();
  ds.n_classes = r.u32();
  ds.n_prompts = r.u32();
  ds.n_views = r.u32();
  const auto flags = r.u32();
  require((flags & ~1u) == 0, ErrorCode::MalformedHeader, "unknown flag bits");

  // All counts are u32, so these products fit in 64 bits.
  const std::uint64_t n = ds.n_samples, d = ds.dim;
  const std::uint64_t floats = n * d + n * ds.n_views * d + std::uint64_t(ds.n_classes) * ds.n_prompts * d;
  require(floats * 4 <= r.remaining(), ErrorCode::DimensionMismatch,
          "payload shorter than header shapes imply");

  ds.weak = Mat(ds.n_samples, ds.dim, r.f32_array(n * d));
  ds.strong = Mat(ds.n_samples * ds.n_views, ds.dim, r.f32_array(n * ds.n_views * d));
  ds.prompts = Mat(ds.n_classes * ds.n_prompts, ds.dim, r.f32_array(std::uint64_t(ds.n_classes) * ds.n_prompts * d));
  if (flags & 1u) {
    Labels labels(ds.n_samples);
    for (auto& y : labels) {
      const auto raw = r.u32();
      y = raw > static_cast<std::uint32_t>(INT32_MAX) ? -1 : static_cast<int>(raw);
    }
    file.true_labels = std::move(labels);
  }
  ds.class_names.reserve(ds.n_classes);
  for (std::size_t j = 0; j < ds.n_classes; ++j) ds.class_names.push_back(r.string());
  require(r.remaining() == 0, ErrorCode::DimensionMismatch, "trailing bytes after class names");

  detail::check_shapes(ds);
  detail::check_and_normalize(ds.weak, "weak");
  detail::check_and_normalize(ds.strong, "strong");
  detail::check_and_normalize(ds.prompts, "prompt");
  if (file.true_labels) detail::check_labels(*file.true_labels, ds.n_samples, ds.n_classes);
  return file;
}

/// `data/set.dpae` -> `data/set.meta.json`
inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto out = path;
  out.replace_extension(".meta.json");
  return out;
}

inline nlohmann::json dataset_metadata(const DatasetFile& file) {
  const auto& ds = file.embeddings;
  return {{"format", "DPAE"},
          {"version", detail::kDatasetVersion},
          {"n_samples", ds.n_samples},
          {"dim", ds.dim},
          {"n_classes", ds.n_classes},
          {"n_prompts", ds.n_prompts},
          {"n_views", ds.n_views},
          {"has_true_labels", file.true_labels.has_value()},
          {"class_names", ds.class_names}};
}

/// Writes the binary file and its JSON sidecar. `extra` is merged into the
/// sidecar (generators echo their configuration there).
inline void save_dataset(const std::filesystem::path& path, const DatasetFile& file,
                         const nlohmann::json& extra = nlohmann::json::object()) {
  io::write_file(path.string(), encode_dataset(file));
  auto meta = dataset_metadata(file);
  for (const auto& [key, value] : extra.items()) meta[key] = value;
  io::write_file(sidecar_path(path).string(), meta.dump(2) + "\n");
}

inline DatasetFile load_dataset(const std::filesystem::path& path) {
  return decode_dataset(io::read_file(path.string()));
}

struct Batch {
  std::vector<std::size_t> indices;
  Mat weak_rows;    // |B| x d
  Mat strong_rows;  // |B| x d, one view per sample for this epoch
};

/// Strong view used for `sample` in `epoch`; cycles through all V views.
inline std::size_t view_for(std::size_t sample, std::size_t epoch, std::size_t n_views) {
  return (epoch + sample) % n_views;
}

inline Batch make_batch(const EmbeddingDataset& ds, std::vector<std::size_t> indices, std::size_t epoch) {
  Batch b;
  b.weak_rows = Mat(indices.size(), ds.dim);
  b.strong_rows = Mat(indices.size(), ds.dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    require(i < ds.n_samples, ErrorCode::IndexOutOfRange, "batch index");
    std::ranges::copy(ds.weak.row(i), b.weak_rows.row(r).begin());
    std::ranges::copy(ds.strong_view(i, view_for(i, epoch, ds.n_views)), b.strong_rows.row(r).begin());
  }
  b.indices = std::move(indices);
  return b;
}

/// Seeded permutation of all samples cut into consecutive batches; the last
/// batch may be short. A pure function of (seed, epoch).
inline std::vector<Batch> epoch_batches(const EmbeddingDataset& ds, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t epoch) {
  require(batch_size >= 1 && batch_size <= ds.n_samples, ErrorCode::InvalidBatchSize,
          "batch size " + std::to_string(batch_size) + " for N=" + std::to_string(ds.n_samples));
  std::vector<std::size_t> order(ds.n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto stop = std::min(order.size(), start + batch_size);
    batches.push_back(make_batch(ds, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop)},
                                 epoch));
  }
  return batches;
}

}  // namespace dpa

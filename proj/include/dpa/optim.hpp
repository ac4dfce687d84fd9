// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dpa/error.hpp"
#include "dpa/matrix.hpp"

namespace dpa {

// ---------------------------------------------------------------------------
// Embedding adapter
// ---------------------------------------------------------------------------

/// Per-dimension affine map on frozen embeddings followed by renormalization:
/// out = normalize(scale * x + bias). Stands in for tuning the image
/// encoder's normalization layers.
struct Adapter {
  std::vector<double> scale;
  std::vector<double> bias;

  static Adapter identity(std::size_t dim) { return {std::vector<double>(dim, 1.0), std::vector<double>(dim, 0.0)}; }

  std::size_t dim() const noexcept { return scale.size(); }
  bool operator==(const Adapter&) const = default;
};

inline constexpr double kDegenerateNorm = 1e-8;

/// Adapter output together with what the backward pass needs.
struct AdapterForward {
  Mat out;                        // normalized outputs
  std::vector<double> pre_norms;  // ||scale * x + bias|| per row
};

inline AdapterForward adapter_forward(const Adapter& adapter, const Mat& rows) {
  require(adapter.scale.size() == rows.cols() && adapter.bias.size() == rows.cols(),
          ErrorCode::ShapeMismatch, "adapter dimension differs from rows");
  AdapterForward fwd{Mat(rows.rows(), rows.cols()), std::vector<double>(rows.rows())};
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto in = rows.row(i);
    auto out = fwd.out.row(i);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = adapter.scale[c] * in[c] + adapter.bias[c];
    const double n = normalize_in_place(out);
    if (!(n >= kDegenerateNorm))
      fail(ErrorCode::DegenerateOutput, "adapter output norm " + std::to_string(n) + " at row " + std::to_string(i));
    fwd.pre_norms[i] = n;
  }
  return fwd;
}

inline Mat adapter_apply(const Adapter& adapter, const Mat& rows) { return adapter_forward(adapter, rows).out; }

struct AdapterGrad {
  std::vector<double> d_scale;
  std::vector<double> d_bias;
};

/// Pulls d(loss)/d(out) back through normalize(scale * x + bias).
inline AdapterGrad adapter_backward(const Mat& rows, const AdapterForward& fwd, const Mat& d_out) {
  const std::size_t d = rows.cols();
  AdapterGrad g{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto h = fwd.out.row(i);
    auto dh = d_out.row(i);
    const double radial = dot(h, dh);
    const double inv = 1.0 / fwd.pre_norms[i];
    auto x = rows.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      const double du = (dh[c] - h[c] * radial) * inv;
      g.d_scale[c] += du * x[c];
      g.d_bias[c] += du;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// Cosine annealing from lr_base at step 0 to zero at total_steps, no warmup.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_base) {
  require(total_steps >= 1 && step <= total_steps, ErrorCode::StepOutOfRange,
          "step " + std::to_string(step) + " of " + std::to_string(total_steps));
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWHyper {
  double lr_base = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWHyper&) const = default;
};

struct AdamWState {
  AdamWHyper hyper;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  bool operator==(const AdamWState&) const = default;
};

/// One decoupled-weight-decay Adam update of `params` in place. Moment
/// buffers are sized lazily on the first call.
inline void adamw_step(AdamWState& state, std::span<double> params, std::span<const double> grads, double lr) {
  require(params.size() == grads.size(), ErrorCode::ShapeMismatch, "gradient size differs from parameters");
  if (state.step == 0 && state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorCode::ShapeMismatch,
          "optimizer state size differs from parameters");
  require(all_finite(grads), ErrorCode::NonFiniteGradient, "gradient has NaN or Inf");

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * params[i]);
  }
}

}  // namespace dpa

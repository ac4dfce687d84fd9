// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations used only by the tests. They work on
// nested std::vector and deliberately avoid every helper in include/dpa so a
// bug there cannot hide in the expected values.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dpa/matrix.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

inline Rows to_rows(const dpa::Mat& m) {
  Rows out(m.rows(), Vec(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline dpa::Mat to_mat(const Rows& rows) {
  dpa::Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline Vec unit(Vec v) {
  long double s = 0;
  for (double x : v) s += static_cast<long double>(x) * x;
  const double n = static_cast<double>(std::sqrt(s));
  for (auto& x : v) x /= n;
  return v;
}

inline double inner(const Vec& a, const Vec& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

/// Random unit rows from a std::normal_distribution (independent of dpa::Rng).
inline Rows random_unit_rows(std::mt19937_64& gen, std::size_t n, std::size_t d) {
  std::normal_distribution<double> nd;
  Rows out(n, Vec(d));
  for (auto& r : out) {
    for (auto& x : r) x = nd(gen);
    r = unit(r);
  }
  return out;
}

/// prompts[j][p] -> normalize(mean_p prompts[j][p])
inline Rows text_prototypes(const std::vector<Rows>& prompts) {
  Rows out;
  for (const auto& cls : prompts) {
    Vec m(cls[0].size(), 0.0);
    for (const auto& z : cls)
      for (std::size_t c = 0; c < z.size(); ++c) m[c] += z[c];
    for (auto& x : m) x /= static_cast<double>(cls.size());
    out.push_back(unit(m));
  }
  return out;
}

inline std::size_t first_argmax(const Vec& v) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Grouped normalized means; empty groups take `fallback`.
inline Rows grouped_means(const Rows& feats, const std::vector<int>& labels, const Rows& fallback) {
  Rows out;
  for (std::size_t j = 0; j < fallback.size(); ++j) {
    Vec sum(feats[0].size(), 0.0);
    int count = 0;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      if (labels[i] != static_cast<int>(j)) continue;
      for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += feats[i][c];
      ++count;
    }
    out.push_back(count ? unit(sum) : fallback[j]);
  }
  return out;
}

/// Plain exp/sum softmax of (f . protos) / tau, no max shift.
inline Rows softmax_scores(const Rows& f, const Rows& protos, double tau) {
  Rows out;
  for (const auto& x : f) {
    Vec e;
    double total = 0;
    for (const auto& p : protos) {
      e.push_back(std::exp(inner(x, p) / tau));
      total += e.back();
    }
    for (auto& v : e) v /= total;
    out.push_back(e);
  }
  return out;
}

/// Replays distribution alignment over a sequence of batches. Returns the
/// aligned batches; `mean` is updated in place.
inline std::vector<Rows> da_sequence(const std::vector<Rows>& batches, Vec& mean, double momentum) {
  std::vector<Rows> out;
  for (const auto& b : batches) {
    Rows aligned;
    for (const auto& row : b) {
      Vec a(row.size());
      double s = 0;
      for (std::size_t j = 0; j < row.size(); ++j) s += (a[j] = row[j] / mean[j]);
      for (auto& x : a) x /= s;
      aligned.push_back(a);
    }
    for (std::size_t j = 0; j < mean.size(); ++j) {
      double col = 0;
      for (const auto& row : b) col += row[j];
      mean[j] = momentum * mean[j] + (1 - momentum) * col / static_cast<double>(b.size());
    }
    out.push_back(aligned);
  }
  return out;
}

inline double clamp01(double x) { return x < 0 ? 0 : (x > 1 ? 1 : x); }

inline std::vector<std::vector<std::uint64_t>> confusion(const std::vector<int>& pred, const std::vector<int>& truth,
                                                         std::size_t c) {
  std::vector<std::vector<std::uint64_t>> m(c, std::vector<std::uint64_t>(c, 0));
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p)
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (truth[i] == static_cast<int>(t) && pred[i] == static_cast<int>(p)) ++m[t][p];
  return m;
}

/// Central finite differences of a scalar function of a flat parameter vector.
inline Vec central_differences(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - n|| / max(||a||, ||n||, floor). The floor turns the check into an
/// absolute one for gradient blocks that are numerically zero.
inline double relative_error(const Vec& analytic, const Vec& numeric, double floor = 1e-8) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

}  // namespace oracle

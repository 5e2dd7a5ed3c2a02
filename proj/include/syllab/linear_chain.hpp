#pragma once

// Two-label linear-chain inference shared by the feature CRF and the neural
// CRF head. Emissions are row-major [length x 2]; transitions[a][b] scores
// label a followed by label b.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace syllab::chain {

template <typename T>
using Transitions = std::array<std::array<T, 2>, 2>;

template <typename T>
inline T log_add(T a, T b) {
  const T m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename T>
T sequence_score(std::span<const T> emit, const Transitions<T>& trans, std::span<const std::uint8_t> labels) {
  T s = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    s += emit[2 * t + labels[t]];
    if (t > 0) s += trans[labels[t - 1]][labels[t]];
  }
  return s;
}

/// Forward recursion; alpha is filled with [length x 2] log values if given.
template <typename T>
T log_partition(std::span<const T> emit, const Transitions<T>& trans, std::vector<T>* alpha = nullptr) {
  const std::size_t n = emit.size() / 2;
  if (n == 0) return 0;
  std::vector<T> local;
  std::vector<T>& a = alpha ? *alpha : local;
  a.assign(2 * n, T(0));
  a[0] = emit[0];
  a[1] = emit[1];
  for (std::size_t t = 1; t < n; ++t) {
    for (int y = 0; y < 2; ++y) {
      a[2 * t + y] = emit[2 * t + y] + log_add(a[2 * (t - 1)] + trans[0][y], a[2 * (t - 1) + 1] + trans[1][y]);
    }
  }
  return log_add(a[2 * (n - 1)], a[2 * (n - 1) + 1]);
}

/// Posterior marginals. node is [length x 2]; edge accumulates the expected
/// transition counts summed over positions. Returns log Z.
template <typename T>
T marginals(std::span<const T> emit, const Transitions<T>& trans, std::span<T> node, Transitions<T>& edge) {
  const std::size_t n = emit.size() / 2;
  edge = {};
  if (n == 0) return 0;
  std::vector<T> alpha;
  const T log_z = log_partition(emit, trans, &alpha);
  std::vector<T> beta(2 * n, T(0));
  for (std::size_t t = n - 1; t-- > 0;) {
    for (int y = 0; y < 2; ++y) {
      beta[2 * t + y] = log_add(trans[y][0] + emit[2 * (t + 1)] + beta[2 * (t + 1)],
                                trans[y][1] + emit[2 * (t + 1) + 1] + beta[2 * (t + 1) + 1]);
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    for (int y = 0; y < 2; ++y) node[2 * t + y] = std::exp(alpha[2 * t + y] + beta[2 * t + y] - log_z);
  }
  for (std::size_t t = 1; t < n; ++t) {
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        edge[a][b] += std::exp(alpha[2 * (t - 1) + a] + trans[a][b] + emit[2 * t + b] + beta[2 * t + b] - log_z);
      }
    }
  }
  return log_z;
}

/// Best label sequence; ties prefer label 0.
template <typename T>
std::vector<std::uint8_t> viterbi(std::span<const T> emit, const Transitions<T>& trans) {
  const std::size_t n = emit.size() / 2;
  std::vector<std::uint8_t> out(n, 0);
  if (n == 0) return out;
  std::vector<T> delta(2 * n);
  std::vector<std::uint8_t> back(2 * n, 0);
  delta[0] = emit[0];
  delta[1] = emit[1];
  for (std::size_t t = 1; t < n; ++t) {
    for (int y = 0; y < 2; ++y) {
      const T from0 = delta[2 * (t - 1)] + trans[0][y];
      const T from1 = delta[2 * (t - 1) + 1] + trans[1][y];
      back[2 * t + y] = from1 > from0 ? 1 : 0;
      delta[2 * t + y] = emit[2 * t + y] + std::max(from0, from1);
    }
  }
  std::uint8_t y = delta[2 * (n - 1) + 1] > delta[2 * (n - 1)] ? 1 : 0;
  for (std::size_t t = n; t-- > 0;) {
    out[t] = y;
    y = back[2 * t + y];
  }
  return out;
}

}  // namespace syllab::chain

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace spatial_diar {

/// Maximum-weight one-to-one assignment between rows and columns of a (possibly
/// rectangular) weight matrix, solved exactly with the Hungarian method on integer weights.
/// Returns, for each row, its column or -1 when the row is left unassigned.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<std::int64_t>>& weights) {
  const std::size_t rows = weights.size();
  const std::size_t cols = rows ? weights.front().size() : 0;
  for (const auto& r : weights) {
    if (r.size() != cols) throw std::invalid_argument("assignment: ragged weight matrix");
  }
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);

  const std::size_t n = std::max(rows, cols);
  std::int64_t top = 0;
  for (const auto& r : weights) {
    for (auto w : r) top = std::max(top, w);
  }
  // cost[i][j] = top - weight, padded entries cost top (weight 0)
  auto cost = [&](std::size_t i, std::size_t j) -> std::int64_t {
    return (i < rows && j < cols) ? top - weights[i][j] : top;
  };

  constexpr std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      std::int64_t delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) out[i] = int(j - 1);
  }
  return out;
}

/// Total weight of an assignment produced by max_weight_assignment.
inline std::int64_t assignment_weight(const std::vector<std::vector<std::int64_t>>& weights,
                                      const std::vector<int>& assignment) {
  std::int64_t total = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= 0) total += weights[i][std::size_t(assignment[i])];
  }
  return total;
}

}  // namespace spatial_diar

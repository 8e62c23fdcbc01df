#pragma once

// Graph diagnostics for the item-item co-occurrence graph: the top-k sampling
// weights ω_ij, algebraic connectivity of the sampled graph, and modularity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fpsr/error.hpp"
#include "fpsr/sparse_core.hpp"
#include "fpsr/spectral.hpp"

namespace fpsr {

namespace detail {

inline double co_occurrence(const InteractionMatrix& m, Index i, Index j) {
  auto a = m.item_users(i);
  auto b = m.item_users(j);
  double c = 0.0;
  for (auto x = a.begin(), y = b.begin(); x != a.end() && y != b.end();) {
    if (*x < *y) {
      ++x;
    } else if (*y < *x) {
      ++y;
    } else {
      c += 1.0;
      ++x;
      ++y;
    }
  }
  return c;
}

/// p_i = Σ_k Q_ik = Σ_{u ∋ i} deg(u).
inline double row_mass(const InteractionMatrix& m, Index i) {
  double p = 0.0;
  for (Index u : m.item_users(i)) p += m.user_degrees()[u];
  return p;
}

inline double omega_from(double q_ij, double p_i, double p_j, double q_ii) {
  return q_ij / std::sqrt(p_j) * std::sqrt(p_i) / (p_i - q_ii);
}

}  // namespace detail

/// ω_ij = (Q_ij / √p_j) · (√p_i / (p_i − Q_ii)) with Q = RᵀR unnormalized.
inline double omega(const InteractionMatrix& m, Index i, Index j) {
  require(i != j, ErrorCode::InvalidArgument, "omega needs two distinct items");
  require(i >= 0 && j >= 0 && i < m.n_items() && j < m.n_items(), ErrorCode::ShapeError, "item out of range");
  const double p_i = detail::row_mass(m, i);
  const double q_ii = m.item_degrees()[i];
  require(p_i > q_ii, ErrorCode::OmegaUndefined, "item " + std::to_string(i) + " co-occurs with no other item");
  return detail::omega_from(detail::co_occurrence(m, i, j), p_i, detail::row_mass(m, j), q_ii);
}

enum class Symmetrization {
  Max,  // union of directed edges, weight max(ω_ij, ω_ji) over the selected directions
  Sum,  // A + Aᵀ of the directed selection
};

struct SampledItemGraph {
  int k_neighbors = 0;
  CsrMatrix<double> directed;  // row i: the ≤ k selected neighbours of i with weights ω_ij
  CsrMatrix<double> edges;     // symmetrized adjacency used for Laplacian analysis

  Index n_nodes() const { return edges.rows; }
};

namespace detail {

inline CsrMatrix<double> from_rows(Index n, std::vector<std::vector<std::pair<Index, double>>>& rows) {
  CsrMatrix<double> g;
  g.rows = g.cols = n;
  g.indptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (Index i = 0; i < n; ++i) {
    std::sort(rows[i].begin(), rows[i].end());
    for (auto [j, w] : rows[i]) {
      g.indices.push_back(j);
      g.values.push_back(w);
    }
    g.indptr[i + 1] = g.nnz();
  }
  return g;
}

}  // namespace detail

/// Symmetrizes a directed weighted graph.
inline CsrMatrix<double> symmetrize(const CsrMatrix<double>& directed, Symmetrization mode) {
  const Index n = directed.rows;
  std::vector<std::vector<std::pair<Index, double>>> rows(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto idx = directed.row_indices(i);
    auto val = directed.row_values(i);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      rows[i].emplace_back(idx[k], val[k]);
      rows[idx[k]].emplace_back(i, val[k]);
    }
  }
  for (auto& row : rows) {
    std::sort(row.begin(), row.end());
    std::vector<std::pair<Index, double>> merged;
    for (auto [j, w] : row) {
      if (!merged.empty() && merged.back().first == j) {
        merged.back().second = mode == Symmetrization::Max ? std::max(merged.back().second, w) : merged.back().second + w;
      } else {
        merged.emplace_back(j, w);
      }
    }
    row = std::move(merged);
  }
  return detail::from_rows(n, rows);
}

/// Keeps the k largest-ω neighbours of each item (ties: smaller item id first), then
/// symmetrizes. Items that co-occur with nothing keep no edges.
inline SampledItemGraph sample_graph(const InteractionMatrix& m, int k_neighbors,
                                     Symmetrization mode = Symmetrization::Max) {
  require(k_neighbors >= 1, ErrorCode::InvalidArgument, "k_neighbors must be >= 1");
  const Index n = m.n_items();
  std::vector<double> mass(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) mass[i] = detail::row_mass(m, i);

  std::vector<std::vector<std::pair<Index, double>>> rows(static_cast<std::size_t>(n));
#pragma omp parallel
  {
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    std::vector<Index> touched;
#pragma omp for schedule(dynamic, 64)
    for (Index i = 0; i < n; ++i) {
      const double q_ii = m.item_degrees()[i];
      if (!(mass[i] > q_ii)) continue;
      touched.clear();
      for (Index u : m.item_users(i))
        for (Index j : m.user_items(u)) {
          if (j == i) continue;
          if (acc[j] == 0.0) touched.push_back(j);
          acc[j] += 1.0;
        }
      auto& row = rows[i];
      for (Index j : touched) {
        row.emplace_back(j, detail::omega_from(acc[j], mass[i], mass[j], q_ii));
        acc[j] = 0.0;
      }
      const auto keep = std::min<std::size_t>(row.size(), static_cast<std::size_t>(k_neighbors));
      std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(keep), row.end(),
                        [](auto& a, auto& b) { return a.second > b.second || (a.second == b.second && a.first < b.first); });
      row.resize(keep);
    }
  }
  SampledItemGraph g;
  g.k_neighbors = k_neighbors;
  g.directed = detail::from_rows(n, rows);
  g.edges = symmetrize(g.directed, mode);
  return g;
}

/// Number of connected components of a symmetric adjacency.
inline int connected_components(const CsrMatrix<double>& adj) {
  const Index n = adj.rows;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  int comps = 0;
  std::vector<Index> stack;
  for (Index s = 0; s < n; ++s) {
    if (seen[s]) continue;
    ++comps;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      Index v = stack.back();
      stack.pop_back();
      for (Index w : adj.row_indices(v))
        if (!seen[w]) {
          seen[w] = 1;
          stack.push_back(w);
        }
    }
  }
  return comps;
}

/// Second-smallest eigenvalue of L = I − D^{-1/2} A D^{-1/2}. Exactly 0 for a
/// disconnected graph; otherwise the top eigenvalue of the deflated, shifted
/// operator D^{-1/2} A D^{-1/2} + I gives λ₂ = 2 − μ.
inline double connectivity(const CsrMatrix<double>& adj, const EigensolverOptions& opt = {}) {
  const Index n = adj.rows;
  require(n >= 1 && adj.cols == n, ErrorCode::InvalidArgument, "graph must be square and nonempty");
  if (n == 1) return 0.0;
  if (connected_components(adj) > 1) return 0.0;

  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i)
    for (double w : adj.row_values(i)) d[i] += w;
  Eigen::VectorXd s = d.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd lead = d.cwiseSqrt();
  lead /= lead.norm();

  auto op = [&](const Eigen::MatrixXd& x) {
    RowBlock xb = x;
    RowBlock y(n, x.cols());
#pragma omp parallel for schedule(dynamic, 256)
    for (Index i = 0; i < n; ++i) {
      auto row = y.row(i);
      row = xb.row(i);
      auto idx = adj.row_indices(i);
      auto val = adj.row_values(i);
      for (std::size_t k = 0; k < idx.size(); ++k) row.noalias() += (s[i] * val[k] * s[idx[k]]) * xb.row(idx[k]);
    }
    return Eigen::MatrixXd(y);
  };
  auto pairs = subspace_iteration(op, n, 1, lead, opt, 2.0);
  return std::max(0.0, 2.0 - pairs.values[0]);
}

inline double connectivity(const SampledItemGraph& g, const EigensolverOptions& opt = {}) {
  return connectivity(g.edges, opt);
}

/// (1/2W) Σ_ij [A_ij − d_i d_j / 2W] 1[c_i = c_j] for a symmetric weighted adjacency
/// (both directions stored, so Σ_ij A_ij = 2W).
inline double modularity(const CsrMatrix<double>& adj, std::span<const Index> communities) {
  const Index n = adj.rows;
  require(static_cast<Index>(communities.size()) == n, ErrorCode::InvalidArgument,
          "community assignment must cover every node");
  double two_w = 0.0;
  for (double w : adj.values) two_w += w;
  require(two_w > 0.0, ErrorCode::ModularityUndefined, "graph has no edge weight");
  Index n_comm = 0;
  for (Index c : communities) {
    require(c >= 0, ErrorCode::InvalidArgument, "negative community id");
    n_comm = std::max(n_comm, c + 1);
  }
  std::vector<double> internal(static_cast<std::size_t>(n_comm), 0.0), total(static_cast<std::size_t>(n_comm), 0.0);
  for (Index i = 0; i < n; ++i) {
    auto idx = adj.row_indices(i);
    auto val = adj.row_values(i);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      total[communities[i]] += val[k];
      if (communities[idx[k]] == communities[i]) internal[communities[i]] += val[k];
    }
  }
  double q = 0.0;
  for (Index c = 0; c < n_comm; ++c) q += internal[c] / two_w - (total[c] / two_w) * (total[c] / two_w);
  return q;
}

}  // namespace fpsr

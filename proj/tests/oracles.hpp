#pragma once

// Dense reference implementations. Nothing here calls into the library's
// solvers; only the data containers are shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fpsr/sparse_core.hpp"

namespace oracle {

using fpsr::Index;
using fpsr::InteractionMatrix;

/// Seeded random interaction matrix; every user and item has at least one entry.
inline InteractionMatrix random_matrix(std::uint64_t seed, int n_users, int n_items, double density) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<Index, Index>> pairs;
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < n_items; ++i)
      if (unif(rng) < density) pairs.emplace_back(u, i);
  // Guarantee coverage of both axes.
  for (int u = 0; u < n_users; ++u) pairs.emplace_back(u, static_cast<Index>(rng() % n_items));
  for (int i = 0; i < n_items; ++i) pairs.emplace_back(static_cast<Index>(rng() % n_users), i);
  return InteractionMatrix::from_pairs(n_users, n_items, std::move(pairs));
}

/// Users in `groups` disjoint item blocks; each user mostly stays in one block.
inline InteractionMatrix clustered_matrix(std::uint64_t seed, int n_users, int n_items, int groups, int per_user,
                                          double cross = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<Index, Index>> pairs;
  const int block = n_items / groups;
  for (int u = 0; u < n_users; ++u) {
    const int g = u % groups;
    for (int t = 0; t < per_user; ++t) {
      int i;
      if (unif(rng) < cross) {
        i = static_cast<int>(rng() % n_items);
      } else {
        i = g * block + static_cast<int>(rng() % block);
      }
      pairs.emplace_back(u, i);
    }
  }
  for (int i = 0; i < n_items; ++i) {
    const int g = std::min(i / block, groups - 1);
    pairs.emplace_back(g + groups * static_cast<int>(rng() % (n_users / groups)), i);
  }
  return InteractionMatrix::from_pairs(n_users, n_items, std::move(pairs));
}

inline Eigen::MatrixXd dense(const InteractionMatrix& m) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(m.n_users(), m.n_items());
  for (Index u = 0; u < m.n_users(); ++u)
    for (Index i : m.user_items(u)) r(u, i) = 1.0;
  return r;
}

inline Eigen::MatrixXd normalized(const Eigen::MatrixXd& r) {
  Eigen::VectorXd du = r.rowwise().sum();
  Eigen::VectorXd di = r.colwise().sum().transpose();
  Eigen::MatrixXd out = r;
  for (Eigen::Index u = 0; u < r.rows(); ++u)
    for (Eigen::Index i = 0; i < r.cols(); ++i)
      if (r(u, i) != 0.0) out(u, i) = 1.0 / std::sqrt(du[u] * di[i]);
  return out;
}

/// Co-occurrence counts by explicit enumeration over users.
inline Eigen::MatrixXd brute_gram(const Eigen::MatrixXd& r, const std::vector<Index>& items) {
  const auto p = static_cast<Eigen::Index>(items.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index u = 0; u < r.rows(); ++u)
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b)
        if (r(u, items[a]) != 0.0 && r(u, items[b]) != 0.0) g(a, b) += 1.0;
  return g;
}

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues();
}

/// Right singular vectors via the eigendecomposition of AᵀA, descending.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> right_singular(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  return {svd.singularValues(), svd.matrixV()};
}

struct DenseFiedler {
  double value;          // second-smallest eigenvalue of I − Q̃
  double gap;            // distance to the next eigenvalue
  Eigen::VectorXd vector;
};

/// Second-smallest eigenpair of L = I − R̃ᵀR̃ by a dense symmetric eigensolve.
inline DenseFiedler fiedler(const Eigen::MatrixXd& r) {
  Eigen::MatrixXd rn = normalized(r);
  const auto n = rn.cols();
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n) - rn.transpose() * rn;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
  DenseFiedler f;
  f.value = es.eigenvalues()[1];
  f.gap = std::min(es.eigenvalues()[1] - es.eigenvalues()[0],
                   n > 2 ? es.eigenvalues()[2] - es.eigenvalues()[1] : 1.0);
  f.vector = es.eigenvectors().col(1);
  return f;
}

/// Second-smallest eigenvalue of I − D^{-1/2} A D^{-1/2} for a dense adjacency.
inline double normalized_laplacian_lambda2(const Eigen::MatrixXd& a) {
  const auto n = a.rows();
  Eigen::VectorXd d = a.rowwise().sum();
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (a(i, j) != 0.0) l(i, j) -= a(i, j) / std::sqrt(d[i] * d[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
  return es.eigenvalues()[1];
}

/// W = D^{-1/2} V_k V_kᵀ D^{1/2} from a dense SVD of R̃.
inline Eigen::MatrixXd global_w(const Eigen::MatrixXd& r, int k) {
  auto [sigma, v] = right_singular(normalized(r));
  Eigen::MatrixXd vk = v.leftCols(k);
  Eigen::VectorXd di = r.colwise().sum().transpose();
  Eigen::MatrixXd w = vk * vk.transpose();
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) *= std::sqrt(di[j]) / std::sqrt(di[i]);
  return w;
}

inline Eigen::MatrixXd qhat(const Eigen::MatrixXd& gram, const Eigen::VectorXd& degrees, double theta2, double eta) {
  Eigen::MatrixXd q = gram + theta2 * Eigen::MatrixXd(degrees.asDiagonal());
  q += eta * Eigen::MatrixXd::Ones(gram.rows(), gram.cols());
  return q;
}

/// Column-by-column evaluation of ½ Σ_j e_jᵀ Q̂ e_j + θ₁ Σ S with e_j the j-th column
/// of I − λW − S.
inline double objective(const Eigen::MatrixXd& q, const Eigen::MatrixXd& w, const Eigen::MatrixXd& s, double lambda,
                        double theta1) {
  const auto p = q.rows();
  double f = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    Eigen::VectorXd e = -lambda * w.col(j) - s.col(j);
    e[j] += 1.0;
    f += 0.5 * e.dot(q * e);
  }
  return f + theta1 * s.sum();
}

/// Accelerated projected gradient on the same QP: S ≥ 0, diag(S) = 0.
inline Eigen::MatrixXd projected_gradient(const Eigen::MatrixXd& q, const Eigen::MatrixXd& w, double lambda,
                                          double theta1, int iters = 100000) {
  const auto p = q.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  const double step = 1.0 / es.eigenvalues().maxCoeff();
  Eigen::MatrixXd target = Eigen::MatrixXd::Identity(p, p) - lambda * w;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p), y = s, prev = s;
  double t = 1.0;
  auto project = [](Eigen::MatrixXd& x) {
    x = x.cwiseMax(0.0);
    x.diagonal().setZero();
  };
  for (int it = 0; it < iters; ++it) {
    Eigen::MatrixXd grad = -q * (target - y);
    grad.array() += theta1;
    Eigen::MatrixXd next = y - step * grad;
    project(next);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tn) * (next - s);
    prev = s;
    s = next;
    t = tn;
    if (it > 100 && (s - prev).cwiseAbs().maxCoeff() < 1e-15) break;
  }
  return s;
}

/// (1/2W) Σ_ij [A_ij − d_i d_j / 2W] δ(c_i, c_j) summed term by term.
inline double modularity(const Eigen::MatrixXd& a, const std::vector<Index>& c) {
  const double two_w = a.sum();
  Eigen::VectorXd d = a.rowwise().sum();
  double q = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (c[i] == c[j]) q += a(i, j) - d[i] * d[j] / two_w;
  return q / two_w;
}

inline double omega(const Eigen::MatrixXd& r, Index i, Index j) {
  Eigen::MatrixXd q = r.transpose() * r;
  const double p_i = q.row(i).sum();
  const double p_j = q.row(j).sum();
  return q(i, j) / std::sqrt(p_j) * std::sqrt(p_i) / (p_i - q(i, i));
}

/// Full sort of every item by (score desc, id asc).
inline std::vector<Index> full_sort(const Eigen::VectorXd& s, const std::set<Index>& exclude) {
  std::vector<Index> ids;
  for (Index i = 0; i < s.size(); ++i)
    if (!exclude.count(i)) ids.push_back(i);
  std::sort(ids.begin(), ids.end(), [&](Index a, Index b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
  return ids;
}

inline double recall(const std::vector<Index>& ranked, const std::set<Index>& rel, int K) {
  int hits = 0;
  for (int r = 0; r < K && r < static_cast<int>(ranked.size()); ++r) hits += rel.count(ranked[r]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

inline double ndcg(const std::vector<Index>& ranked, const std::set<Index>& rel, int K) {
  double dcg = 0.0, idcg = 0.0;
  for (int r = 0; r < K && r < static_cast<int>(ranked.size()); ++r)
    if (rel.count(ranked[r])) dcg += 1.0 / std::log2(r + 2.0);
  for (int r = 0; r < K && r < static_cast<int>(rel.size()); ++r) idcg += 1.0 / std::log2(r + 2.0);
  return dcg / idcg;
}

}  // namespace oracle

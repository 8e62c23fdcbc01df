#pragma once

// Recall@K / NDCG@K over full-item ranking with training items masked.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fpsr/error.hpp"
#include "fpsr/model.hpp"
#include "fpsr/sparse_core.hpp"

namespace fpsr {

/// Held-out interactions keyed by the training model's internal user ids.
struct TestSet {
  std::vector<IndexList> relevant;          // per user, sorted known item ids
  std::vector<Index> unknown_items;         // per user, relevant items never seen in training
  std::size_t skipped_unknown_users = 0;    // interactions whose user is not in the training map
  std::size_t n_interactions = 0;

  Index n_users() const { return static_cast<Index>(relevant.size()); }
  std::size_t n_relevant(Index u) const { return relevant[u].size() + static_cast<std::size_t>(unknown_items[u]); }
};

/// Maps external (user, item) pairs onto a training id space. Unknown users are
/// skipped and counted; unknown items stay relevant but can never be ranked.
inline TestSet build_test_set(std::span<const std::pair<std::string, std::string>> pairs, const IdMap& users,
                              const IdMap& items) {
  TestSet t;
  t.relevant.assign(static_cast<std::size_t>(users.size()), {});
  t.unknown_items.assign(static_cast<std::size_t>(users.size()), 0);
  std::vector<std::unordered_set<std::string>> unknown(static_cast<std::size_t>(users.size()));
  for (const auto& [user, item] : pairs) {
    const Index u = users.find(user);
    if (u < 0) {
      ++t.skipped_unknown_users;
      continue;
    }
    ++t.n_interactions;
    const Index i = items.find(item);
    if (i < 0) {
      unknown[u].insert(item);
    } else {
      t.relevant[u].push_back(i);
    }
  }
  for (Index u = 0; u < users.size(); ++u) {
    auto& rel = t.relevant[u];
    std::sort(rel.begin(), rel.end());
    rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
    t.unknown_items[u] = static_cast<Index>(unknown[u].size());
  }
  return t;
}

inline TestSet read_test_set(std::istream& in, const IdMap& users, const IdMap& items) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for_each_record(in, [&](const Record& r, std::size_t) { pairs.emplace_back(r.user, r.item); });
  return build_test_set(pairs, users, items);
}

namespace detail {

inline std::size_t count_hits(std::span<const Index> ranked, std::span<const Index> relevant_sorted, int K,
                              std::vector<char>* hit_at = nullptr) {
  const auto depth = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(K));
  std::size_t hits = 0;
  for (std::size_t r = 0; r < depth; ++r) {
    const bool hit = std::binary_search(relevant_sorted.begin(), relevant_sorted.end(), ranked[r]);
    hits += hit;
    if (hit_at) hit_at->push_back(hit);
  }
  return hits;
}

inline IndexList sorted_unique(std::span<const Index> v) {
  IndexList s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

}  // namespace detail

/// |top-K ∩ relevant| / |relevant|; nullopt when nothing is relevant. `unseen_relevant`
/// counts relevant items that cannot appear in `ranked` (always misses).
inline std::optional<double> recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant, int K,
                                         std::size_t unseen_relevant = 0) {
  require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  IndexList rel = detail::sorted_unique(relevant);
  const std::size_t total = rel.size() + unseen_relevant;
  if (total == 0) return std::nullopt;
  return static_cast<double>(detail::count_hits(ranked, rel, K)) / static_cast<double>(total);
}

/// Binary-gain NDCG with log₂(r+1) discount; the ideal DCG places min(K, |relevant|) hits first.
inline std::optional<double> ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant, int K,
                                       std::size_t unseen_relevant = 0) {
  require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  IndexList rel = detail::sorted_unique(relevant);
  const std::size_t total = rel.size() + unseen_relevant;
  if (total == 0) return std::nullopt;
  std::vector<char> hit_at;
  detail::count_hits(ranked, rel, K, &hit_at);
  double dcg = 0.0;
  for (std::size_t r = 0; r < hit_at.size(); ++r)
    if (hit_at[r]) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  const auto ideal = std::min<std::size_t>(total, static_cast<std::size_t>(K));
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

/// Storage in the CSR convention: values + column indices for S, plus the dense basis.
struct ParameterCount {
  std::int64_t sparse = 0;    // 2·NNZ(S)
  std::int64_t basis = 0;     // |V| + |σ|
  std::int64_t overhead = 0;  // row pointers and degree scalings
  std::int64_t total() const { return sparse + basis + overhead; }
};

inline ParameterCount count_parameters(const SimilarityModel& m) {
  ParameterCount c;
  c.sparse = 2 * m.S.nnz();
  c.basis = static_cast<std::int64_t>(m.basis.V.size() + m.basis.sigma.size());
  c.overhead = static_cast<std::int64_t>(m.S.indptr.size() + m.basis.d_inv_sqrt.size() + m.basis.d_sqrt.size());
  return c;
}

struct EvalReport {
  int K = 20;
  double recall_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::size_t n_users_evaluated = 0;
  std::size_t n_users_skipped = 0;  // test interactions from users unknown to the model
  std::vector<Index> per_user_id;
  std::vector<double> per_user_recall;
  std::vector<double> per_user_ndcg;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  std::int64_t n_parameters = 0;
  std::int64_t n_sparse_parameters = 0;
};

struct EvalOptions {
  int K = 20;
  bool per_user = false;
  Index batch_size = 256;
};

/// Ranks every test user's items with the training rows masked and averages the
/// metrics over users with a non-empty test set.
template <Scorer M>
EvalReport evaluate(const M& model, const InteractionMatrix& train, const TestSet& test, const EvalOptions& opt = {}) {
  require(opt.K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Index> users;
  for (Index u = 0; u < std::min(test.n_users(), train.n_users()); ++u)
    if (test.n_relevant(u) > 0) users.push_back(u);
  require(!users.empty(), ErrorCode::EvalEmpty, "no user with held-out interactions");

  std::vector<double> rec(users.size()), ndcg(users.size());
  const auto n_batches = (static_cast<Index>(users.size()) + opt.batch_size - 1) / opt.batch_size;
#pragma omp parallel for schedule(dynamic, 1)
  for (Index b = 0; b < n_batches; ++b) {
    const auto begin = static_cast<std::size_t>(b) * static_cast<std::size_t>(opt.batch_size);
    const auto end = std::min(users.size(), begin + static_cast<std::size_t>(opt.batch_size));
    std::vector<SparseVector> rows;
    for (auto k = begin; k < end; ++k) rows.push_back(SparseVector::ones(train.user_items(users[k])));
    Eigen::MatrixXd scores = score_batch(model, rows);
    for (auto k = begin; k < end; ++k) {
      const Index u = users[k];
      Eigen::VectorXd s = scores.row(static_cast<Eigen::Index>(k - begin)).transpose();
      auto top = top_k(s, opt.K, train.user_items(u));
      IndexList ranked;
      for (const auto& r : top) ranked.push_back(r.item);
      const auto unseen = static_cast<std::size_t>(test.unknown_items[u]);
      rec[k] = *recall_at_k(ranked, test.relevant[u], opt.K, unseen);
      ndcg[k] = *ndcg_at_k(ranked, test.relevant[u], opt.K, unseen);
    }
  }

  EvalReport r;
  r.K = opt.K;
  r.n_users_evaluated = users.size();
  r.n_users_skipped = test.skipped_unknown_users;
  // Sequential sums keep the aggregate independent of the thread count.
  for (std::size_t k = 0; k < users.size(); ++k) {
    r.recall_at_k += rec[k];
    r.ndcg_at_k += ndcg[k];
  }
  r.recall_at_k /= static_cast<double>(users.size());
  r.ndcg_at_k /= static_cast<double>(users.size());
  if (opt.per_user) {
    r.per_user_id = users;
    r.per_user_recall = std::move(rec);
    r.per_user_ndcg = std::move(ndcg);
  }
  r.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Cosine item-item neighbourhood model; a reference point for the harness.
struct ItemKnnModel {
  CsrMatrix<double> sim;  // row i: top neighbours of item i

  Index n_items() const { return sim.rows; }
};

inline ItemKnnModel build_itemknn(const InteractionMatrix& m, int neighbors = 100) {
  const Index n = m.n_items();
  std::vector<std::vector<std::pair<Index, double>>> rows(static_cast<std::size_t>(n));
#pragma omp parallel
  {
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    std::vector<Index> touched;
#pragma omp for schedule(dynamic, 64)
    for (Index i = 0; i < n; ++i) {
      touched.clear();
      for (Index u : m.item_users(i))
        for (Index j : m.user_items(u)) {
          if (j == i) continue;
          if (acc[j] == 0.0) touched.push_back(j);
          acc[j] += 1.0;
        }
      auto& row = rows[i];
      for (Index j : touched) {
        row.emplace_back(j, acc[j] / std::sqrt(m.item_degrees()[i] * m.item_degrees()[j]));
        acc[j] = 0.0;
      }
      const auto keep = std::min<std::size_t>(row.size(), static_cast<std::size_t>(neighbors));
      std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(keep), row.end(),
                        [](auto& a, auto& b) { return a.second > b.second || (a.second == b.second && a.first < b.first); });
      row.resize(keep);
      std::sort(row.begin(), row.end());
    }
  }
  ItemKnnModel knn;
  knn.sim.rows = knn.sim.cols = n;
  knn.sim.indptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (Index i = 0; i < n; ++i) {
    for (auto [j, v] : rows[i]) {
      knn.sim.indices.push_back(j);
      knn.sim.values.push_back(v);
    }
    knn.sim.indptr[i + 1] = knn.sim.nnz();
  }
  return knn;
}

inline Eigen::MatrixXd score_batch(const ItemKnnModel& knn, std::span<const SparseVector> rows) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), knn.n_items());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t a = 0; a < rows[r].size(); ++a) {
      auto idx = knn.sim.row_indices(rows[r].indices[a]);
      auto val = knn.sim.row_values(rows[r].indices[a]);
      for (std::size_t k = 0; k < idx.size(); ++k)
        out(static_cast<Eigen::Index>(r), idx[k]) += rows[r].values[a] * val[k];
    }
  return out;
}

}  // namespace fpsr

#pragma once

// Interaction-matrix construction, degree bookkeeping and the sparse kernels
// every other module consumes. R is stored twice (user-major CSR and
// item-major CSR) so both R·X and Rᵀ·Y are row-parallel without atomics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fpsr/error.hpp"

namespace fpsr {

using Index = std::int32_t;
using IndexList = std::vector<Index>;
using RowBlock = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Compressed sparse rows with explicit values.
template <typename Value = double>
struct CsrMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<std::int64_t> indptr{0};
  std::vector<Index> indices;
  std::vector<Value> values;

  std::int64_t nnz() const { return static_cast<std::int64_t>(indices.size()); }

  std::span<const Index> row_indices(Index r) const {
    return {indices.data() + indptr[r], static_cast<std::size_t>(indptr[r + 1] - indptr[r])};
  }
  std::span<const Value> row_values(Index r) const {
    return {values.data() + indptr[r], static_cast<std::size_t>(indptr[r + 1] - indptr[r])};
  }

  Value at(Index r, Index c) const {
    auto idx = row_indices(r);
    auto it = std::lower_bound(idx.begin(), idx.end(), c);
    if (it == idx.end() || *it != c) return Value{};
    return values[indptr[r] + (it - idx.begin())];
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (auto k = indptr[r]; k < indptr[r + 1]; ++k) d(r, indices[k]) = static_cast<double>(values[k]);
    return d;
  }

  bool operator==(const CsrMatrix&) const = default;
};

/// Sparse row vector (a user's interaction row, or a weighted combination of rows).
struct SparseVector {
  IndexList indices;
  std::vector<double> values;

  static SparseVector ones(std::span<const Index> idx) {
    return {IndexList(idx.begin(), idx.end()), std::vector<double>(idx.size(), 1.0)};
  }
  std::size_t size() const { return indices.size(); }
};

/// Bidirectional map between external string ids and dense internal ids, assigned by first appearance.
class IdMap {
 public:
  Index intern(std::string_view id) {
    auto [it, inserted] = lookup_.try_emplace(std::string(id), static_cast<Index>(ids_.size()));
    if (inserted) ids_.emplace_back(id);
    return it->second;
  }

  /// Internal id, or -1 when the id was never seen.
  Index find(std::string_view id) const {
    auto it = lookup_.find(std::string(id));
    return it == lookup_.end() ? Index{-1} : it->second;
  }

  const std::string& external(Index internal) const { return ids_.at(static_cast<std::size_t>(internal)); }
  const std::vector<std::string>& ids() const { return ids_; }
  Index size() const { return static_cast<Index>(ids_.size()); }

  static IdMap from_ids(std::vector<std::string> ids) {
    IdMap m;
    for (auto& id : ids) m.intern(id);
    return m;
  }

  bool operator==(const IdMap& o) const { return ids_ == o.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Index> lookup_;
};

/// Binary users×items implicit-feedback matrix R with cached degrees D_U, D_I.
/// All stored values are 1.0, so only the sparsity pattern is kept.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;

  /// Builds the canonical CSR form: entries sorted, duplicates removed.
  static InteractionMatrix from_pairs(Index n_users, Index n_items,
                                      std::vector<std::pair<Index, Index>> entries) {
    for (auto [u, i] : entries)
      require(u >= 0 && u < n_users && i >= 0 && i < n_items, ErrorCode::ShapeError,
              "interaction (" + std::to_string(u) + "," + std::to_string(i) + ") outside " +
                  std::to_string(n_users) + "x" + std::to_string(n_items));
    std::sort(entries.begin(), entries.end());
    entries.erase(std::unique(entries.begin(), entries.end()), entries.end());

    InteractionMatrix m;
    m.n_users_ = n_users;
    m.n_items_ = n_items;
    m.user_ptr_.assign(static_cast<std::size_t>(n_users) + 1, 0);
    m.user_idx_.reserve(entries.size());
    for (auto [u, i] : entries) {
      ++m.user_ptr_[u + 1];
      m.user_idx_.push_back(i);
    }
    std::partial_sum(m.user_ptr_.begin(), m.user_ptr_.end(), m.user_ptr_.begin());
    m.build_transpose();
    return m;
  }

  /// Same as from_pairs but from a dense 0/1 pattern; handy for small fixtures.
  static InteractionMatrix from_dense(const Eigen::MatrixXd& dense) {
    std::vector<std::pair<Index, Index>> e;
    for (Index u = 0; u < dense.rows(); ++u)
      for (Index i = 0; i < dense.cols(); ++i)
        if (dense(u, i) != 0.0) e.emplace_back(u, i);
    return from_pairs(static_cast<Index>(dense.rows()), static_cast<Index>(dense.cols()), std::move(e));
  }

  Index n_users() const { return n_users_; }
  Index n_items() const { return n_items_; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(user_idx_.size()); }

  std::span<const Index> user_items(Index u) const {
    return {user_idx_.data() + user_ptr_[u], static_cast<std::size_t>(user_ptr_[u + 1] - user_ptr_[u])};
  }
  std::span<const Index> item_users(Index i) const {
    return {item_idx_.data() + item_ptr_[i], static_cast<std::size_t>(item_ptr_[i + 1] - item_ptr_[i])};
  }

  const std::vector<double>& user_degrees() const { return user_deg_; }
  const std::vector<double>& item_degrees() const { return item_deg_; }
  const std::vector<std::int64_t>& row_pointers() const { return user_ptr_; }
  const std::vector<Index>& column_indices() const { return user_idx_; }

  bool contains(Index u, Index i) const {
    auto row = user_items(u);
    return std::binary_search(row.begin(), row.end(), i);
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_users_, n_items_);
    for (Index u = 0; u < n_users_; ++u)
      for (Index i : user_items(u)) d(u, i) = 1.0;
    return d;
  }

  /// R restricted to the columns `items` (relabelled 0..|items|-1 in the given order).
  /// Users left without interactions are dropped, so user degrees are recomputed on the subset.
  InteractionMatrix restrict_items(std::span<const Index> items) const {
    std::vector<Index> local(static_cast<std::size_t>(n_items_), -1);
    for (std::size_t a = 0; a < items.size(); ++a) {
      require(items[a] >= 0 && items[a] < n_items_, ErrorCode::ShapeError, "item index out of range");
      require(local[items[a]] < 0, ErrorCode::InvalidArgument, "duplicate item in index list");
      local[items[a]] = static_cast<Index>(a);
    }
    std::vector<std::pair<Index, Index>> e;
    std::vector<Index> user_map(static_cast<std::size_t>(n_users_), -1);
    Index next_user = 0;
    for (Index u = 0; u < n_users_; ++u) {
      for (Index i : user_items(u)) {
        if (local[i] < 0) continue;
        if (user_map[u] < 0) user_map[u] = next_user++;
        e.emplace_back(user_map[u], local[i]);
      }
    }
    return from_pairs(next_user, static_cast<Index>(items.size()), std::move(e));
  }

  bool operator==(const InteractionMatrix& o) const {
    return n_users_ == o.n_users_ && n_items_ == o.n_items_ && user_ptr_ == o.user_ptr_ && user_idx_ == o.user_idx_;
  }

 private:
  void build_transpose() {
    item_ptr_.assign(static_cast<std::size_t>(n_items_) + 1, 0);
    for (Index i : user_idx_) ++item_ptr_[i + 1];
    std::partial_sum(item_ptr_.begin(), item_ptr_.end(), item_ptr_.begin());
    item_idx_.resize(user_idx_.size());
    std::vector<std::int64_t> fill(item_ptr_.begin(), item_ptr_.end() - 1);
    for (Index u = 0; u < n_users_; ++u)
      for (Index i : user_items(u)) item_idx_[fill[i]++] = u;

    user_deg_.resize(n_users_);
    for (Index u = 0; u < n_users_; ++u) user_deg_[u] = static_cast<double>(user_ptr_[u + 1] - user_ptr_[u]);
    item_deg_.resize(n_items_);
    for (Index i = 0; i < n_items_; ++i) item_deg_[i] = static_cast<double>(item_ptr_[i + 1] - item_ptr_[i]);
  }

  Index n_users_ = 0;
  Index n_items_ = 0;
  std::vector<std::int64_t> user_ptr_{0};
  std::vector<Index> user_idx_;
  std::vector<std::int64_t> item_ptr_{0};
  std::vector<Index> item_idx_;
  std::vector<double> user_deg_;
  std::vector<double> item_deg_;
};

/// An interaction matrix together with the external id maps it was ingested with.
struct Dataset {
  InteractionMatrix matrix;
  IdMap users;
  IdMap items;
  std::size_t lines_with_extra_fields = 0;  // e.g. ratings, which are ignored
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// One parsed interaction line.
struct Record {
  std::string_view user;
  std::string_view item;
  bool extra_fields = false;
};

/// Calls `fn(record, line_number)` for every interaction line of `in`.
/// Accepts `user<TAB or comma>item[<sep>ignored...]`; blank and `#` lines are skipped.
template <typename Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    auto sep = s.find_first_of("\t,");
    if (sep == std::string_view::npos)
      throw Error(ErrorCode::IngestParse, "line " + std::to_string(line_no) + ": expected user<sep>item");
    std::string_view user = detail::trim(s.substr(0, sep));
    std::string_view rest = s.substr(sep + 1);
    auto sep2 = rest.find_first_of("\t,");
    std::string_view item = detail::trim(rest.substr(0, sep2));
    if (user.empty() || item.empty())
      throw Error(ErrorCode::IngestParse, "line " + std::to_string(line_no) + ": empty user or item field");
    fn(Record{user, item, sep2 != std::string_view::npos}, line_no);
  }
}

/// Ingests (user, item) pairs with arbitrary string ids into a canonical interaction matrix.
inline Dataset ingest(std::span<const std::pair<std::string, std::string>> records) {
  require(!records.empty(), ErrorCode::IngestEmpty, "no interactions");
  Dataset d;
  std::vector<std::pair<Index, Index>> e;
  e.reserve(records.size());
  for (const auto& [u, i] : records) e.emplace_back(d.users.intern(u), d.items.intern(i));
  d.matrix = InteractionMatrix::from_pairs(d.users.size(), d.items.size(), std::move(e));
  return d;
}

inline Dataset ingest(std::istream& in) {
  Dataset d;
  std::vector<std::pair<Index, Index>> e;
  for_each_record(in, [&](const Record& r, std::size_t) {
    e.emplace_back(d.users.intern(r.user), d.items.intern(r.item));
    if (r.extra_fields) ++d.lines_with_extra_fields;
  });
  require(!e.empty(), ErrorCode::IngestEmpty, "no interactions");
  d.matrix = InteractionMatrix::from_pairs(d.users.size(), d.items.size(), std::move(e));
  return d;
}

/// R̃ = D_U^{-1/2} R D_I^{-1/2}, kept implicit over the CSR pattern.
class NormalizedView {
 public:
  explicit NormalizedView(const InteractionMatrix& m) : m_(&m), user_scale_(m.n_users()), item_scale_(m.n_items()) {
    for (Index u = 0; u < m.n_users(); ++u) {
      require(m.user_degrees()[u] > 0, ErrorCode::DegreeZero, "user " + std::to_string(u) + " has no interactions");
      user_scale_[u] = 1.0 / std::sqrt(m.user_degrees()[u]);
    }
    for (Index i = 0; i < m.n_items(); ++i) {
      require(m.item_degrees()[i] > 0, ErrorCode::DegreeZero, "item " + std::to_string(i) + " has no interactions");
      item_scale_[i] = 1.0 / std::sqrt(m.item_degrees()[i]);
    }
  }

  const InteractionMatrix& matrix() const { return *m_; }
  Index n_users() const { return m_->n_users(); }
  Index n_items() const { return m_->n_items(); }
  const Eigen::VectorXd& user_scale() const { return user_scale_; }
  const Eigen::VectorXd& item_scale() const { return item_scale_; }

  double entry(Index u, Index i) const { return m_->contains(u, i) ? user_scale_[u] * item_scale_[i] : 0.0; }

  /// Y = R̃ X  (X: items×b, Y: users×b).
  RowBlock apply(const RowBlock& x) const {
    RowBlock y(n_users(), x.cols());
#pragma omp parallel for schedule(dynamic, 256)
    for (Index u = 0; u < n_users(); ++u) {
      auto row = y.row(u);
      row.setZero();
      for (Index i : m_->user_items(u)) row.noalias() += item_scale_[i] * x.row(i);
      row *= user_scale_[u];
    }
    return y;
  }

  /// X = R̃ᵀ Y  (Y: users×b, X: items×b).
  RowBlock apply_transpose(const RowBlock& y) const {
    RowBlock x(n_items(), y.cols());
#pragma omp parallel for schedule(dynamic, 256)
    for (Index i = 0; i < n_items(); ++i) {
      auto row = x.row(i);
      row.setZero();
      for (Index u : m_->item_users(i)) row.noalias() += user_scale_[u] * y.row(u);
      row *= item_scale_[i];
    }
    return x;
  }

  /// Q̃ X = R̃ᵀ R̃ X without forming Q̃.
  RowBlock apply_gram(const RowBlock& x) const { return apply_transpose(apply(x)); }

  Eigen::MatrixXd to_dense() const {
    return user_scale_.asDiagonal() * m_->to_dense() * item_scale_.asDiagonal();
  }

 private:
  const InteractionMatrix* m_;
  Eigen::VectorXd user_scale_;
  Eigen::VectorXd item_scale_;
};

inline NormalizedView normalize(const InteractionMatrix& m) { return NormalizedView(m); }

/// Bytes allowed for one dense per-partition matrix; default 4 GiB.
inline constexpr std::size_t kDefaultDenseBudget = std::size_t{4} << 30;

inline void check_dense_budget(std::size_t p, std::size_t budget_bytes) {
  const std::size_t bytes = p * p * sizeof(double);
  require(bytes <= budget_bytes, ErrorCode::PartitionTooLarge,
          "dense " + std::to_string(p) + "x" + std::to_string(p) + " block needs " + std::to_string(bytes) +
              " bytes, budget " + std::to_string(budget_bytes));
}

/// Co-occurrence counts Rᵀ R restricted to `items`; the diagonal holds item degrees.
inline Eigen::MatrixXd gram(const InteractionMatrix& m, std::span<const Index> items,
                            std::size_t budget_bytes = kDefaultDenseBudget) {
  check_dense_budget(items.size(), budget_bytes);
  const Index p = static_cast<Index>(items.size());
  std::vector<Index> local(static_cast<std::size_t>(m.n_items()), -1);
  for (Index a = 0; a < p; ++a) {
    require(items[a] >= 0 && items[a] < m.n_items(), ErrorCode::ShapeError, "item index out of range");
    require(local[items[a]] < 0, ErrorCode::InvalidArgument, "duplicate item in index list");
    local[items[a]] = a;
  }
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  // Column a of G only touches g.col(a), so columns are race-free.
#pragma omp parallel for schedule(dynamic, 16)
  for (Index a = 0; a < p; ++a) {
    double* col = g.col(a).data();
    for (Index u : m.item_users(items[a]))
      for (Index j : m.user_items(u))
        if (local[j] >= 0) col[local[j]] += 1.0;
  }
  return g;
}

}  // namespace fpsr

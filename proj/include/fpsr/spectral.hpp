#pragma once

// Truncated SVD of the normalized interaction matrix and the Fiedler vector of
// its item graph, both via block subspace iteration with Rayleigh-Ritz over
// CSR products. Q̃ = R̃ᵀR̃ is never formed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fpsr/error.hpp"
#include "fpsr/sparse_core.hpp"

namespace fpsr {

struct EigensolverOptions {
  double tol = 1e-7;      // relative residual ‖Av − θv‖ / θ_max
  int max_iter = 1000;
  std::uint64_t seed = 0;
  int oversample = -1;    // extra block columns; -1 picks max(8, nev/4)
};

/// Top-k right singular vectors of R̃ plus the degree scalings that turn them into
/// W = D_I^{-1/2} V Vᵀ D_I^{1/2}.
struct SpectralBasis {
  Eigen::MatrixXd V;           // n_items × k, orthonormal columns
  Eigen::VectorXd sigma;       // descending
  Eigen::VectorXd d_inv_sqrt;  // item degrees^{-1/2}
  Eigen::VectorXd d_sqrt;      // item degrees^{1/2}
  int iterations = 0;

  int k() const { return static_cast<int>(V.cols()); }
  Index n_items() const { return static_cast<Index>(V.rows()); }
};

struct FiedlerResult {
  double value = 0.0;      // 1 − σ₂²
  Eigen::VectorXd vector;  // unit norm, over the item sublist
  double sigma2 = 0.0;
  int iterations = 0;
};

/// Converged eigenpairs of a symmetric PSD operator, descending.
struct EigenPairs {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  int iterations = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace detail {

inline void fill_gaussian(Eigen::Ref<Eigen::VectorXd> v, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = nd(rng);
}

/// Orthonormalizes the columns of X against `locked` and each other (classical
/// Gram-Schmidt, two passes). Columns that collapse numerically are replaced by
/// fresh random directions so the block keeps full rank.
inline void orthonormalize(Eigen::MatrixXd& x, const Eigen::MatrixXd& locked, std::mt19937_64& rng) {
  const Eigen::Index b = x.cols();
  for (Eigen::Index j = 0; j < b; ++j) {
    auto v = x.col(j);
    for (int attempt = 0;; ++attempt) {
      const double norm0 = v.norm();
      for (int pass = 0; pass < 2; ++pass) {
        if (locked.cols() > 0) v -= locked * (locked.transpose() * v);
        if (j > 0) v -= x.leftCols(j) * (x.leftCols(j).transpose() * v);
      }
      const double norm = v.norm();
      if (norm0 > 0 && norm > 1e-10 * norm0 && std::isfinite(norm)) {
        v /= norm;
        break;
      }
      require(attempt < 16, ErrorCode::ShapeError, "block size exceeds the dimension of the search space");
      fill_gaussian(v, rng);
    }
  }
}

/// Flips each column so its largest-magnitude entry (first on ties) is positive.
inline void canonicalize_signs(Eigen::MatrixXd& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0) v.col(c) = -v.col(c);
  }
}

/// Replaces the basis of every run of (numerically) equal eigenvalues by a canonical
/// one: pivoted QR of the run's rows picks the same vectors whatever rotation the
/// solver returned, e.g. ±e_i for an identity block.
inline void canonicalize_clusters(Eigen::MatrixXd& v, const Eigen::VectorXd& values, double tol) {
  const Eigen::Index k = v.cols();
  const double scale = k > 0 ? std::max(values.cwiseAbs().maxCoeff(), 1e-300) : 1.0;
  for (Eigen::Index a = 0; a < k;) {
    Eigen::Index b = a + 1;
    while (b < k && std::abs(values[b - 1] - values[b]) <= tol * scale) ++b;
    if (b - a > 1) {
      Eigen::MatrixXd block = v.middleCols(a, b - a).transpose();
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(block);
      Eigen::MatrixXd r = qr.matrixR().topRows(b - a).triangularView<Eigen::Upper>();
      v.middleCols(a, b - a) = qr.colsPermutation() * r.transpose();
    }
    a = b;
  }
}

}  // namespace detail

/// Block subspace iteration with Rayleigh-Ritz for the `nev` largest eigenpairs of
/// a symmetric PSD operator `op` (Eigen::MatrixXd → Eigen::MatrixXd) restricted to
/// the orthogonal complement of `locked`. `scale_floor` bounds the residual
/// normalizer from below (the largest eigenvalue of the undeflated operator).
template <typename Op>
EigenPairs subspace_iteration(Op&& op, Eigen::Index n, int nev, const Eigen::MatrixXd& locked,
                              const EigensolverOptions& opt, double scale_floor = 0.0) {
  const Eigen::Index free_dim = n - locked.cols();
  require(nev >= 1 && nev <= free_dim, ErrorCode::InvalidArgument,
          "requested " + std::to_string(nev) + " eigenpairs from a space of dimension " + std::to_string(free_dim));
  require(opt.tol > 0, ErrorCode::InvalidArgument, "tolerance must be positive");
  const int extra = opt.oversample >= 0 ? opt.oversample : std::max(8, nev / 4);
  const Eigen::Index b = std::min<Eigen::Index>(free_dim, nev + extra);

  std::mt19937_64 rng(opt.seed);
  Eigen::MatrixXd x(n, b);
  for (Eigen::Index j = 0; j < b; ++j) detail::fill_gaussian(x.col(j), rng);
  detail::orthonormalize(x, locked, rng);

  double best = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opt.max_iter; ++it) {
    Eigen::MatrixXd ax = op(x);
    if (locked.cols() > 0) ax -= locked * (locked.transpose() * ax);

    Eigen::MatrixXd h = x.transpose() * ax;
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    // Eigen returns ascending order.
    Eigen::VectorXd theta = es.eigenvalues().reverse();
    Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    Eigen::MatrixXd xr = x * u;
    Eigen::MatrixXd axr = ax * u;

    const double scale = std::max({theta[0], scale_floor, std::numeric_limits<double>::min()});
    double worst = 0.0;
    for (int j = 0; j < nev; ++j) worst = std::max(worst, (axr.col(j) - theta[j] * xr.col(j)).norm() / scale);
    if (!std::isfinite(worst)) break;
    best = std::min(best, worst);
    if (worst <= opt.tol) {
      EigenPairs out;
      out.values = theta.head(nev).cwiseMax(0.0);
      out.vectors = xr.leftCols(nev);
      out.iterations = it;
      return out;
    }
    x = std::move(axr);
    detail::orthonormalize(x, locked, rng);
  }
  throw SvdNoConverge(best, opt.max_iter);
}

namespace detail {

inline Eigen::MatrixXd gram_operator(const NormalizedView& view, const Eigen::MatrixXd& x) {
  RowBlock xb = x;
  return Eigen::MatrixXd(view.apply_gram(xb));
}

inline bool is_identity_list(std::span<const Index> items, Index n) {
  if (static_cast<Index>(items.size()) != n) return false;
  for (Index a = 0; a < n; ++a)
    if (items[a] != a) return false;
  return true;
}

inline SpectralBasis truncated_svd_full(const NormalizedView& view, int k, const EigensolverOptions& opt) {
  const Index n = view.n_items();
  require(k >= 1 && k <= std::min(view.n_users(), n), ErrorCode::InvalidArgument,
          "rank k=" + std::to_string(k) + " exceeds min(n_users, n_items)");
  auto pairs = subspace_iteration([&](const Eigen::MatrixXd& x) { return gram_operator(view, x); }, n, k,
                                  Eigen::MatrixXd(n, 0), opt);
  SpectralBasis basis;
  basis.V = std::move(pairs.vectors);
  detail::canonicalize_clusters(basis.V, pairs.values, std::max(opt.tol, 1e-10));
  detail::canonicalize_signs(basis.V);
  basis.sigma = pairs.values.cwiseSqrt();
  basis.d_inv_sqrt = view.item_scale();
  basis.d_sqrt = view.item_scale().cwiseInverse();
  basis.iterations = pairs.iterations;
  return basis;
}

inline FiedlerResult fiedler_full(const NormalizedView& view, const EigensolverOptions& opt) {
  const Index n = view.n_items();
  require(n >= 2, ErrorCode::InvalidArgument, "Fiedler vector needs at least two items");
  // The leading right singular vector of R̃ is D_I^{1/2}1 / ‖·‖ with σ₁ = 1, so it
  // is deflated exactly and the solver targets σ₂ directly.
  Eigen::MatrixXd lead = view.item_scale().cwiseInverse();
  lead /= lead.norm();
  auto pairs = subspace_iteration([&](const Eigen::MatrixXd& x) { return gram_operator(view, x); }, n, 1, lead, opt,
                                  1.0);
  FiedlerResult r;
  r.sigma2 = std::sqrt(pairs.values[0]);
  r.value = std::max(0.0, 1.0 - pairs.values[0]);
  Eigen::MatrixXd v = pairs.vectors;
  detail::canonicalize_signs(v);
  r.vector = v.col(0);
  r.iterations = pairs.iterations;
  return r;
}

}  // namespace detail

/// Top-k right singular triplets of R̃ restricted to `items`. A proper subset is
/// re-normalized on its own column-restricted matrix (users without interactions
/// in the subset drop out).
inline SpectralBasis truncated_svd(const NormalizedView& view, std::span<const Index> items, int k,
                                   const EigensolverOptions& opt = {}) {
  if (detail::is_identity_list(items, view.n_items())) return detail::truncated_svd_full(view, k, opt);
  InteractionMatrix sub = view.matrix().restrict_items(items);
  return detail::truncated_svd_full(NormalizedView(sub), k, opt);
}

inline SpectralBasis truncated_svd(const NormalizedView& view, int k, const EigensolverOptions& opt = {}) {
  return detail::truncated_svd_full(view, k, opt);
}

/// Second right singular vector of R̃ over `items` and the Fiedler value 1 − σ₂².
inline FiedlerResult fiedler(const NormalizedView& view, std::span<const Index> items,
                             const EigensolverOptions& opt = {}) {
  if (detail::is_identity_list(items, view.n_items())) return detail::fiedler_full(view, opt);
  InteractionMatrix sub = view.matrix().restrict_items(items);
  return detail::fiedler_full(NormalizedView(sub), opt);
}

inline FiedlerResult fiedler(const NormalizedView& view, const EigensolverOptions& opt = {}) {
  return detail::fiedler_full(view, opt);
}

/// r_u·W over the basis' items, applied as two thin products:
/// ((r_u ⊙ d^{-1/2}) V) Vᵀ ⊙ d^{1/2}.
inline Eigen::VectorXd score_global(const SpectralBasis& basis, const SparseVector& user_row) {
  require(user_row.indices.size() == user_row.values.size(), ErrorCode::ShapeError, "sparse row size mismatch");
  Eigen::VectorXd t = Eigen::VectorXd::Zero(basis.k());
  for (std::size_t a = 0; a < user_row.size(); ++a) {
    const Index i = user_row.indices[a];
    require(i >= 0 && i < basis.n_items(), ErrorCode::ShapeError,
            "item " + std::to_string(i) + " outside basis of " + std::to_string(basis.n_items()) + " items");
    t.noalias() += (user_row.values[a] * basis.d_inv_sqrt[i]) * basis.V.row(i).transpose();
  }
  Eigen::VectorXd out = basis.V * t;
  return out.cwiseProduct(basis.d_sqrt);
}

/// Dense slice W[items, items] of the global similarity.
inline Eigen::MatrixXd global_similarity_block(const SpectralBasis& basis, std::span<const Index> items) {
  const Index p = static_cast<Index>(items.size());
  Eigen::MatrixXd left(p, basis.k());
  Eigen::MatrixXd right(p, basis.k());
  for (Index a = 0; a < p; ++a) {
    require(items[a] >= 0 && items[a] < basis.n_items(), ErrorCode::ShapeError, "item index out of range");
    left.row(a) = basis.d_inv_sqrt[items[a]] * basis.V.row(items[a]);
    right.row(a) = basis.d_sqrt[items[a]] * basis.V.row(items[a]);
  }
  return left * right.transpose();
}

}  // namespace fpsr

#include <catch_amalgamated.hpp>

#include <numeric>

#include "fpsr/spectral.hpp"
#include "oracles.hpp"

using namespace fpsr;

namespace {

EigensolverOptions tight(std::uint64_t seed = 0) {
  EigensolverOptions o;
  o.tol = 1e-12;
  o.max_iter = 20000;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("svd of the identity") {
  auto m = InteractionMatrix::from_dense(Eigen::MatrixXd::Identity(2, 2));
  auto b = truncated_svd(NormalizedView(m), 2, tight());
  CHECK(std::abs(b.sigma[0] - 1.0) < 1e-12);
  CHECK(std::abs(b.sigma[1] - 1.0) < 1e-12);
  Eigen::MatrixXd a = b.V.cwiseAbs();
  CHECK(((a - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8 ||
         (a - Eigen::MatrixXd::Identity(2, 2).rowwise().reverse()).cwiseAbs().maxCoeff() < 1e-8));
}

TEST_CASE("truncated svd matches a dense svd") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = oracle::random_matrix(seed, 20, 15, 0.2);
    NormalizedView v(m);
    auto b = truncated_svd(v, 5, tight(seed));
    Eigen::VectorXd want = oracle::singular_values(oracle::normalized(oracle::dense(m)));
    for (int j = 0; j < 5; ++j) CHECK(std::abs(b.sigma[j] - want[j]) < 1e-8);
    CHECK((b.V.transpose() * b.V - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-6);
    for (int j = 0; j + 1 < 5; ++j) CHECK(b.sigma[j] >= b.sigma[j + 1]);
    // Sign convention: the largest-magnitude entry of each column is positive.
    for (int j = 0; j < 5; ++j) {
      Eigen::Index at;
      b.V.col(j).cwiseAbs().maxCoeff(&at);
      CHECK(b.V(at, j) > 0);
    }
  }
}

TEST_CASE("leading singular value of the normalized matrix is one") {
  auto m = oracle::random_matrix(4, 30, 20, 0.2);
  auto b = truncated_svd(NormalizedView(m), 3, tight());
  CHECK(std::abs(b.sigma[0] - 1.0) < 1e-10);
}

TEST_CASE("svd ranks agree on shared singular values") {
  auto m = oracle::random_matrix(11, 40, 30, 0.15);
  NormalizedView v(m);
  auto a = truncated_svd(v, 4, tight(3));
  auto b = truncated_svd(v, 9, tight(3));
  for (int j = 0; j < 4; ++j) CHECK(std::abs(a.sigma[j] - b.sigma[j]) < 1e-6);
}

TEST_CASE("svd rejects a rank above min dimension") {
  auto m = oracle::random_matrix(1, 5, 8, 0.3);
  CHECK_THROWS_AS(truncated_svd(NormalizedView(m), 6), Error);
}

TEST_CASE("svd reports non-convergence with its best residual") {
  auto m = oracle::random_matrix(2, 40, 35, 0.2);
  EigensolverOptions o;
  o.tol = 1e-14;
  o.max_iter = 1;
  o.oversample = 0;
  try {
    truncated_svd(NormalizedView(m), 3, o);
    FAIL("expected SvdNoConverge");
  } catch (const SvdNoConverge& e) {
    CHECK(e.code() == ErrorCode::SvdNoConverge);
    CHECK(e.best_residual() > 0);
  }
}

TEST_CASE("fiedler of two disconnected groups is zero") {
  Eigen::MatrixXd r(4, 4);
  r << 1, 1, 0, 0,  //
      1, 1, 0, 0,   //
      0, 0, 1, 1,   //
      0, 0, 1, 1;
  auto f = fiedler(NormalizedView(InteractionMatrix::from_dense(r)), tight());
  CHECK(std::abs(f.value) < 1e-10);
  CHECK(std::abs(f.vector.norm() - 1.0) < 1e-12);
}

TEST_CASE("fiedler of a path graph matches the dense laplacian") {
  // Users bridge consecutive items: 0-1, 1-2, 2-3.
  Eigen::MatrixXd r(3, 4);
  r << 1, 1, 0, 0,  //
      0, 1, 1, 0,   //
      0, 0, 1, 1;
  auto f = fiedler(NormalizedView(InteractionMatrix::from_dense(r)), tight());
  auto want = oracle::fiedler(r);
  CHECK(std::abs(f.value - want.value) < 1e-8);
  CHECK(std::min((f.vector - want.vector).norm(), (f.vector + want.vector).norm()) < 1e-8);
}

TEST_CASE("fiedler matches the dense laplacian on random instances") {
  int compared = 0;
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    auto m = oracle::random_matrix(seed, 50, 40, 0.08);
    Eigen::MatrixXd r = oracle::dense(m);
    NormalizedView v(m);
    auto f = fiedler(v, tight(seed));
    auto want = oracle::fiedler(r);
    CHECK(std::abs(f.value - want.value) < 1e-8);
    CHECK(f.value >= -1e-8);
    Eigen::VectorXd lead = Eigen::Map<const Eigen::VectorXd>(m.item_degrees().data(), 40).cwiseSqrt();
    CHECK(std::abs(lead.normalized().dot(f.vector)) < 1e-6);
    if (want.gap > 1e-3) {
      ++compared;
      CHECK(std::min((f.vector - want.vector).norm(), (f.vector + want.vector).norm()) < 1e-8);
    }
  }
  CHECK(compared >= 20);
}

TEST_CASE("fiedler vector orders outer products by sign") {
  auto m = oracle::random_matrix(5, 50, 40, 0.08);
  auto f = fiedler(NormalizedView(m), tight());
  const auto& x = f.vector;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      if (x[i] == 0 || x[j] == 0) continue;
      if ((x[i] > 0) == (x[j] > 0)) {
        CHECK(x[i] * x[j] > 0);
      } else {
        CHECK(x[i] * x[j] < 0);
      }
    }
}

TEST_CASE("fiedler on a subset uses the restricted matrix") {
  auto m = oracle::random_matrix(8, 40, 30, 0.12);
  NormalizedView v(m);
  IndexList items{2, 5, 7, 11, 13, 17, 19, 23, 29};
  auto f = fiedler(v, items, tight());
  auto sub = m.restrict_items(items);
  auto want = oracle::fiedler(oracle::dense(sub));
  CHECK(std::abs(f.value - want.value) < 1e-8);
}

TEST_CASE("score_global at full rank is the identity") {
  auto m = oracle::random_matrix(3, 20, 8, 0.3);
  auto b = truncated_svd(NormalizedView(m), 8, tight());
  SparseVector r{{1, 4, 6}, {1.0, 1.0, 1.0}};
  Eigen::VectorXd s = score_global(b, r);
  Eigen::VectorXd want = Eigen::VectorXd::Zero(8);
  for (Index i : r.indices) want[i] = 1.0;
  CHECK((s - want).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("score_global matches a dense W") {
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = oracle::random_matrix(seed, 30, 25, 0.15);
    Eigen::MatrixXd r = oracle::dense(m);
    Eigen::VectorXd sv = oracle::singular_values(oracle::normalized(r));
    if (sv[1] - sv[2] < 1e-4) continue;  // W is only defined for a separated rank-2 subspace
    ++compared;
    auto b = truncated_svd(NormalizedView(m), 2, tight(seed));
    Eigen::MatrixXd w = oracle::global_w(r, 2);
    SparseVector row{{0, 3, 9}, {1.0, 1.0, 1.0}};
    Eigen::VectorXd want = w.row(0) + w.row(3) + w.row(9);
    CHECK((score_global(b, row) - want).cwiseAbs().maxCoeff() < 1e-8);
    IndexList items{1, 3, 4};
    Eigen::MatrixXd blk = global_similarity_block(b, items);
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 3; ++c) CHECK(std::abs(blk(a, c) - w(items[a], items[c])) < 1e-8);
  }
  CHECK(compared >= 10);
}

TEST_CASE("score_global is linear and handles empty rows") {
  auto m = oracle::random_matrix(6, 30, 20, 0.2);
  auto b = truncated_svd(NormalizedView(m), 4, tight());
  SparseVector r1{{1, 2}, {1.0, 1.0}}, r2{{2, 7, 9}, {1.0, 1.0, 1.0}};
  SparseVector mix{{1, 2, 7, 9}, {2.0, 2.0 - 3.0, -3.0, -3.0}};
  Eigen::VectorXd lhs = score_global(b, mix);
  Eigen::VectorXd rhs = 2.0 * score_global(b, r1) - 3.0 * score_global(b, r2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(score_global(b, SparseVector{}).cwiseAbs().maxCoeff() == 0.0);
  SparseVector bad{{25}, {1.0}};
  CHECK_THROWS_AS(score_global(b, bad), Error);
}

TEST_CASE("svd is deterministic for a fixed seed") {
  auto m = oracle::random_matrix(9, 40, 30, 0.15);
  NormalizedView v(m);
  EigensolverOptions o;
  o.seed = 42;
  auto a = truncated_svd(v, 6, o);
  auto b = truncated_svd(v, 6, o);
  CHECK(a.V == b.V);
  CHECK(a.sigma == b.sigma);
}

TEST_CASE("repeated singular values get a rotation-free basis") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(9, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::MatrixXd v = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() * Eigen::MatrixXd::Identity(9, 3);
  Eigen::VectorXd values(3);
  values << 0.9, 0.5, 0.5;
  // Rotate the repeated pair by an arbitrary angle.
  Eigen::MatrixXd u = v;
  const double t = 0.7;
  u.col(1) = std::cos(t) * v.col(1) + std::sin(t) * v.col(2);
  u.col(2) = -std::sin(t) * v.col(1) + std::cos(t) * v.col(2);
  detail::canonicalize_clusters(v, values, 1e-10);
  detail::canonicalize_clusters(u, values, 1e-10);
  detail::canonicalize_signs(v);
  detail::canonicalize_signs(u);
  CHECK((v - u).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((v.transpose() * v - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

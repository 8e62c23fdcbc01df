#pragma once

// Per-partition fine-tuning of the sparse non-negative similarity block S_n:
//
//   min_S ½‖X(I − λW_n − S)‖²_F + θ₁‖S‖₁   s.t. diag(S) = 0, S ≥ 0
//
// where XᵀX = Q̂ = R_nᵀR_n + θ₂·D_I + η·J. ADMM splits S into the smooth
// variable Z (diag constraint via the multiplier μ) and the projected S.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpsr/error.hpp"
#include "fpsr/sparse_core.hpp"

namespace fpsr {

struct AdmmConfig {
  double theta1 = 0.5;   // ℓ1 weight
  double theta2 = 1.0;   // degree-weighted ℓ2 weight
  double eta = 1.0;      // partition augmentation weight
  double lambda = 0.5;   // global similarity mix
  double rho = 5000.0;   // ADMM penalty
  int max_iter = 50;
  double tol = 1e-4;     // max-norm stopping threshold on ‖Z − S‖ and ‖S⁺ − S‖
  double prune_threshold = 2e-3;

  void validate() const {
    require(theta1 > 0, ErrorCode::InvalidArgument, "theta1 must be > 0");
    // θ₂ = 0 and η = 0 are the ablation variants; ρI keeps Q̂ + ρI definite regardless.
    require(theta2 >= 0, ErrorCode::InvalidArgument, "theta2 must be >= 0");
    require(eta >= 0, ErrorCode::InvalidArgument, "eta must be >= 0");
    require(rho > 0, ErrorCode::InvalidArgument, "rho must be > 0");
    require(lambda >= 0 && lambda < 1, ErrorCode::InvalidArgument, "lambda must lie in [0, 1)");
    require(max_iter >= 1, ErrorCode::InvalidArgument, "max_iter must be >= 1");
    require(tol > 0, ErrorCode::InvalidArgument, "tol must be > 0");
    require(prune_threshold >= 0, ErrorCode::InvalidArgument, "prune_threshold must be >= 0");
  }
};

/// Q̂ = G + θ₂·diag(degrees) + η·J from a precomputed co-occurrence block G.
/// Parameters are read directly so ablations with θ₂ = 0 or η = 0 are expressible.
inline Eigen::MatrixXd build_qhat(const Eigen::MatrixXd& gram_block, std::span<const double> degrees,
                                  const AdmmConfig& cfg) {
  const auto p = gram_block.rows();
  require(gram_block.cols() == p && static_cast<Eigen::Index>(degrees.size()) == p, ErrorCode::ShapeError,
          "gram block and degree vector disagree");
  Eigen::MatrixXd q = gram_block;
  q.array() += cfg.eta;
  for (Eigen::Index a = 0; a < p; ++a) q(a, a) += cfg.theta2 * degrees[a];
  return q;
}

inline Eigen::MatrixXd build_qhat(const InteractionMatrix& m, std::span<const Index> items, const AdmmConfig& cfg,
                                  std::size_t budget_bytes = kDefaultDenseBudget) {
  Eigen::MatrixXd g = gram(m, items, budget_bytes);
  std::vector<double> deg(items.size());
  for (std::size_t a = 0; a < items.size(); ++a) deg[a] = m.item_degrees()[items[a]];
  return build_qhat(g, deg, cfg);
}

/// ½ tr((I − λW − S)ᵀ Q̂ (I − λW − S)) + θ₁ Σ|S|.
inline double partition_objective(const Eigen::MatrixXd& qhat, const Eigen::MatrixXd& w_block,
                                  const Eigen::MatrixXd& s, const AdmmConfig& cfg) {
  const auto p = qhat.rows();
  Eigen::MatrixXd e = Eigen::MatrixXd::Identity(p, p) - cfg.lambda * w_block - s;
  Eigen::MatrixXd qe = qhat * e;
  return 0.5 * (e.array() * qe.array()).sum() + cfg.theta1 * s.cwiseAbs().sum();
}

/// Live/peak byte accounting for dense per-partition buffers.
class MemoryTracker {
 public:
  void acquire(std::int64_t bytes) {
    auto now = live_.fetch_add(bytes) + bytes;
    auto prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }
  void release(std::int64_t bytes) { live_.fetch_sub(bytes); }
  std::int64_t live() const { return live_.load(); }
  std::int64_t peak() const { return peak_.load(); }
  void reset() {
    live_ = 0;
    peak_ = 0;
  }

 private:
  std::atomic<std::int64_t> live_{0};
  std::atomic<std::int64_t> peak_{0};
};

struct AdmmState {
  Eigen::MatrixXd Z;
  Eigen::MatrixXd S;
  Eigen::MatrixXd Phi;
  int iter = 0;
};

struct AdmmIterationLog {
  int iteration = 0;
  double primal_residual = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

/// Iterates the ADMM updates on one partition. (Q̂ + ρI) is factored once; its
/// inverse P and the constant term P·Q̂(I − λW_n) = (I − ρP)(I − λW_n) are cached.
class AdmmSolver {
 public:
  /// Dense p×p buffers held while a partition is being solved (caller's Q̂ and W_n included).
  static constexpr int kDenseBuffers = 8;

  AdmmSolver(const Eigen::MatrixXd& qhat, const Eigen::MatrixXd& w_block, const AdmmConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto p = qhat.rows();
    require(qhat.cols() == p && w_block.rows() == p && w_block.cols() == p, ErrorCode::ShapeError,
            "Q̂ and W_n must be square of equal size");
    p_.resize(p, p);
    p_ = qhat;
    p_.diagonal().array() += cfg_.rho;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(p_);
    require(llt.info() == Eigen::Success, ErrorCode::InvalidArgument, "Q̂ + ρI is not positive definite");
    Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(p, p);
    llt.solveInPlace(inv);
    p_ = std::move(inv);
    p_ = (0.5 * (p_ + p_.transpose())).eval();
    p_diag_ = p_.diagonal();

    p0_ = Eigen::MatrixXd::Identity(p, p) - cfg_.lambda * w_block;
    p0_ -= cfg_.rho * (p_ * p0_);

    st_.Z = Eigen::MatrixXd::Zero(p, p);
    st_.S = Eigen::MatrixXd::Zero(p, p);
    st_.Phi = Eigen::MatrixXd::Zero(p, p);
    tmp_.resize(p, p);
  }

  const AdmmState& state() const { return st_; }
  const AdmmConfig& config() const { return cfg_; }
  Eigen::Index size() const { return p_.rows(); }

  /// Overrides S and Φ, e.g. to probe a single Z-update.
  void set_state(const Eigen::MatrixXd& s, const Eigen::MatrixXd& phi) {
    st_.S = s;
    st_.Phi = phi;
  }

  /// Z ← (Q̂+ρI)⁻¹(Q̂(I−λW) + ρ(S−Φ) − diagMat(μ)), with μ chosen so diag(Z) = 0.
  void update_z() {
    tmp_ = st_.S - st_.Phi;
    st_.Z = p0_;
    st_.Z.noalias() += cfg_.rho * (p_ * tmp_);
    Eigen::VectorXd mu = st_.Z.diagonal().cwiseQuotient(p_diag_);
    for (Eigen::Index j = 0; j < st_.Z.cols(); ++j) st_.Z.col(j) -= mu[j] * p_.col(j);
  }

  /// S ← (Z + Φ − θ₁/ρ)₊ with zero diagonal. Returns max |S_new − S_old|.
  double update_s() {
    const double shift = cfg_.theta1 / cfg_.rho;
    tmp_ = (st_.Z + st_.Phi).array() - shift;
    tmp_ = tmp_.cwiseMax(0.0);
    tmp_.diagonal().setZero();
    const double change = (tmp_ - st_.S).cwiseAbs().maxCoeff<Eigen::PropagateNaN>();
    st_.S.swap(tmp_);
    return change;
  }

  /// Φ ← Φ + Z − S. Returns the primal residual max |Z − S|.
  double update_dual() {
    tmp_ = st_.Z - st_.S;
    st_.Phi += tmp_;
    return tmp_.cwiseAbs().maxCoeff<Eigen::PropagateNaN>();
  }

  struct StepResult {
    double primal_residual;
    double s_change;
  };

  StepResult step() {
    update_z();
    const double change = update_s();
    const double primal = update_dual();
    ++st_.iter;
    return {primal, change};
  }

 private:
  AdmmConfig cfg_;
  Eigen::MatrixXd p_;   // (Q̂ + ρI)⁻¹
  Eigen::VectorXd p_diag_;
  Eigen::MatrixXd p0_;  // (Q̂ + ρI)⁻¹ Q̂ (I − λW_n)
  Eigen::MatrixXd tmp_;
  AdmmState st_;
};

struct PartitionSolution {
  CsrMatrix<double> S;  // p×p in the partition's local item order, pruned
  int iterations = 0;
  double primal_residual = 0.0;
  bool converged = false;
  std::vector<AdmmIterationLog> log;
};

/// Keeps entries of a dense non-negative block that reach `threshold` (diagonal excluded).
inline CsrMatrix<double> prune_to_csr(const Eigen::MatrixXd& s, double threshold) {
  CsrMatrix<double> out;
  out.rows = static_cast<Index>(s.rows());
  out.cols = static_cast<Index>(s.cols());
  out.indptr.assign(static_cast<std::size_t>(out.rows) + 1, 0);
  for (Index r = 0; r < out.rows; ++r) {
    for (Index c = 0; c < out.cols; ++c) {
      const double v = s(r, c);
      if (r != c && v > 0.0 && v >= threshold) {
        out.indices.push_back(c);
        out.values.push_back(v);
      }
    }
    out.indptr[r + 1] = out.nnz();
  }
  return out;
}

struct SolveOptions {
  bool log_objective = false;  // costs one extra p³ product per iteration
};

/// Runs ADMM on one partition until both max-norm residuals drop below cfg.tol or
/// cfg.max_iter is reached, then prunes entries below cfg.prune_threshold.
inline PartitionSolution solve_partition(const Eigen::MatrixXd& qhat, const Eigen::MatrixXd& w_block,
                                         const AdmmConfig& cfg, const SolveOptions& opt = {}) {
  AdmmSolver solver(qhat, w_block, cfg);
  PartitionSolution out;
  double min_primal = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= cfg.max_iter; ++t) {
    auto r = solver.step();
    out.iterations = t;
    out.primal_residual = r.primal_residual;
    AdmmIterationLog entry{t, r.primal_residual};
    if (opt.log_objective) entry.objective = partition_objective(qhat, w_block, solver.state().S, cfg);
    out.log.push_back(entry);
    // Residuals below 1e-2 are never treated as divergence: early iterates can
    // dip far below the steady-state level.
    if (!std::isfinite(r.primal_residual) || r.primal_residual > 10.0 * std::max(min_primal, 1e-2)) {
      std::string trail;
      for (const auto& e : out.log) trail += " " + std::to_string(e.primal_residual);
      throw Error(ErrorCode::AdmmDiverged, "primal residual " + std::to_string(r.primal_residual) + " at iteration " +
                                               std::to_string(t) + " (minimum " + std::to_string(min_primal) +
                                               "); residual log:" + trail);
    }
    min_primal = std::min(min_primal, r.primal_residual);
    if (r.primal_residual <= cfg.tol && r.s_change <= cfg.tol) {
      out.converged = true;
      break;
    }
  }
  out.S = prune_to_csr(solver.state().S, cfg.prune_threshold);
  return out;
}

/// CSV rows: partition_id,iteration,primal_residual,objective
inline void write_convergence_csv(std::ostream& os, int partition_id, const std::vector<AdmmIterationLog>& log,
                                  bool header) {
  if (header) os << "partition_id,iteration,primal_residual,objective\n";
  for (const auto& e : log)
    os << partition_id << ',' << e.iteration << ',' << e.primal_residual << ',' << e.objective << '\n';
}

}  // namespace fpsr

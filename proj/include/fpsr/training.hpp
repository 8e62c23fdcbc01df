#pragma once

// End-to-end training: truncated SVD → recursive partitioning → per-partition
// Q̂ + ADMM → block-diagonal assembly. Also the validation-split grid search and
// the four-variant ablation runner.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "fpsr/admm.hpp"
#include "fpsr/error.hpp"
#include "fpsr/eval.hpp"
#include "fpsr/model.hpp"
#include "fpsr/parallel.hpp"
#include "fpsr/partitioner.hpp"
#include "fpsr/sparse_core.hpp"
#include "fpsr/spectral.hpp"

namespace fpsr {

struct TrainConfig {
  AdmmConfig admm{};
  int k = 256;
  double tau = 0.25;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: all cores
  EigensolverOptions svd{};
  PartitionOptions partition{};
  std::size_t dense_block_budget = kDefaultDenseBudget;
  std::int64_t stage_memory_budget = 0;  // bytes; 0 derives kDenseBuffers·8·τ·|I|²
  bool log_objective = false;

  void validate() const {
    admm.validate();
    require(tau > 0 && tau <= 1, ErrorCode::InvalidArgument, "tau must lie in (0, 1]");
    require(k >= 2, ErrorCode::InvalidArgument, "k must be >= 2");
  }
};

struct StageTimings {
  double svd = 0.0;
  double partition = 0.0;
  double admm = 0.0;
  double assemble = 0.0;
  double total() const { return svd + partition + admm + assemble; }
};

struct PartitionStats {
  int id = 0;
  Index size = 0;
  int iterations = 0;
  double primal_residual = 0.0;
  bool converged = false;
  std::int64_t nnz = 0;
};

struct TrainResult {
  SimilarityModel model;
  StageTimings timings;
  std::int64_t admm_peak_bytes = 0;
  std::int64_t admm_budget_bytes = 0;
  std::vector<PartitionStats> partitions;
  std::vector<std::vector<AdmmIterationLog>> logs;  // per partition
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
auto run_stage(std::string_view stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "[" + std::string(stage) + "] " + e.message());
  }
}

inline std::int64_t partition_bytes(std::size_t p) {
  return static_cast<std::int64_t>(AdmmSolver::kDenseBuffers) * static_cast<std::int64_t>(p * p * sizeof(double));
}

}  // namespace detail

/// Solves every partition. Partitions are taken largest first by a pool of
/// workers; a partition starts only while the reserved dense bytes stay within
/// `budget` (one partition may always run alone).
inline std::vector<PartitionSolution> solve_partitions(const InteractionMatrix& m, const SpectralBasis& basis,
                                                       const PartitionAssignment& parts, const TrainConfig& cfg,
                                                       std::int64_t budget, MemoryTracker& tracker) {
  const auto n_parts = parts.partitions.size();
  std::vector<PartitionSolution> out(n_parts);
  std::vector<std::size_t> order(n_parts);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return parts.partitions[a].size() > parts.partitions[b].size(); });

  const int budget_threads = cfg.threads > 0 ? cfg.threads : hardware_threads();
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(budget_threads), n_parts));

  std::mutex mu;
  std::condition_variable cv;
  std::size_t next = 0;
  std::int64_t reserved = 0;
  std::exception_ptr failure;

  auto solve_one = [&](std::size_t pid) {
    const auto& items = parts.partitions[pid];
    Eigen::MatrixXd q = build_qhat(m, items, cfg.admm, cfg.dense_block_budget);
    Eigen::MatrixXd w = global_similarity_block(basis, items);
    SolveOptions so;
    so.log_objective = cfg.log_objective;
    try {
      out[pid] = solve_partition(q, w, cfg.admm, so);
    } catch (const Error& e) {
      throw Error(e.code(), "partition " + std::to_string(pid) + ": " + e.message());
    }
  };

  auto worker = [&](bool nested) {
#ifdef _OPENMP
    if (nested) omp_set_num_threads(1);
#endif
    for (;;) {
      std::size_t pid;
      std::int64_t need;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] {
          if (failure || next >= n_parts) return true;
          const auto want = detail::partition_bytes(parts.partitions[order[next]].size());
          return reserved == 0 || reserved + want <= budget;
        });
        if (failure || next >= n_parts) return;
        pid = order[next++];
        need = detail::partition_bytes(parts.partitions[pid].size());
        reserved += need;
        tracker.acquire(need);
      }
      try {
        solve_one(pid);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
      {
        std::lock_guard lock(mu);
        reserved -= need;
        tracker.release(need);
      }
      cv.notify_all();
    }
  };

  if (workers <= 1) {
    worker(false);
  } else {
    // One partition per thread; the dense kernels inside run single-threaded.
    const int eigen_threads = Eigen::nbThreads();
    Eigen::setNbThreads(1);
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker, true);
    for (auto& th : pool) th.join();
    Eigen::setNbThreads(eigen_threads);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

/// Runs the full pipeline on an interaction matrix.
inline TrainResult train(const InteractionMatrix& m, const TrainConfig& cfg) {
  cfg.validate();
  set_thread_budget(cfg.threads);
  TrainResult res;
  const NormalizedView view = detail::run_stage("normalize", [&] { return NormalizedView(m); });

  auto t0 = detail::Clock::now();
  EigensolverOptions svd_opt = cfg.svd;
  svd_opt.seed = splitmix64(cfg.seed ^ 0x5356440000000001ULL);
  SpectralBasis basis = detail::run_stage("svd", [&] { return truncated_svd(view, cfg.k, svd_opt); });
  res.timings.svd = detail::seconds_since(t0);

  t0 = detail::Clock::now();
  PartitionOptions popt = cfg.partition;
  popt.eig.seed = splitmix64(cfg.seed ^ 0x5041525400000002ULL);
  PartitionAssignment parts = detail::run_stage("partition", [&] { return partition(view, cfg.tau, popt); });
  res.timings.partition = detail::seconds_since(t0);

  t0 = detail::Clock::now();
  const double n = static_cast<double>(m.n_items());
  res.admm_budget_bytes =
      cfg.stage_memory_budget > 0
          ? cfg.stage_memory_budget
          : static_cast<std::int64_t>(AdmmSolver::kDenseBuffers * sizeof(double) * cfg.tau * n * n);
  MemoryTracker tracker;
  auto solutions = detail::run_stage(
      "admm", [&] { return solve_partitions(m, basis, parts, cfg, res.admm_budget_bytes, tracker); });
  res.admm_peak_bytes = tracker.peak();
  res.timings.admm = detail::seconds_since(t0);

  t0 = detail::Clock::now();
  std::vector<std::pair<IndexList, CsrMatrix<double>>> blocks;
  for (std::size_t p = 0; p < solutions.size(); ++p) {
    PartitionStats st;
    st.id = static_cast<int>(p);
    st.size = static_cast<Index>(parts.partitions[p].size());
    st.iterations = solutions[p].iterations;
    st.primal_residual = solutions[p].primal_residual;
    st.converged = solutions[p].converged;
    st.nnz = solutions[p].S.nnz();
    res.partitions.push_back(st);
    res.logs.push_back(std::move(solutions[p].log));
    blocks.emplace_back(parts.partitions[p], std::move(solutions[p].S));
  }
  res.model = detail::run_stage("assemble",
                                [&] { return assemble(blocks, std::move(basis), cfg.admm.lambda, std::move(parts)); });
  res.model.header.admm = cfg.admm;
  res.model.header.seed = cfg.seed;
  res.model.header.n_users = m.n_users();
  res.model.header.dataset_fingerprint = fingerprint(m);
  res.timings.assemble = detail::seconds_since(t0);
  return res;
}

/// Same as train() on a matrix, with the dataset's id maps attached to the model.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  TrainResult r = train(data.matrix, cfg);
  r.model.users = data.users;
  r.model.items = data.items;
  return r;
}

// ---------------------------------------------------------------------------
// Validation splits, grid search, ablation.

struct HoldoutSplit {
  Dataset train;
  TestSet validation;
};

/// Carves a validation split out of a training set. With folds == 1 a seeded
/// `fraction` of interactions is held out; with folds > 1 interactions are dealt
/// into `folds` groups and group `fold` is held out. Every user keeps at least one
/// training interaction.
inline HoldoutSplit split_holdout(const Dataset& data, double fraction, std::uint64_t seed, int fold = 0,
                                  int folds = 1) {
  require(folds >= 1 && fold >= 0 && fold < folds, ErrorCode::InvalidArgument, "invalid fold selection");
  require(folds > 1 || (fraction > 0 && fraction < 1), ErrorCode::InvalidArgument, "fraction must lie in (0, 1)");
  const auto& m = data.matrix;
  const auto nnz = static_cast<std::size_t>(m.nnz());
  std::mt19937_64 rng(seed);
  std::vector<char> held(nnz, 0);
  if (folds == 1) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (auto& h : held) h = unif(rng) < fraction;
  } else {
    std::vector<std::size_t> perm(nnz);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < nnz; ++k) held[perm[k]] = static_cast<int>(k % folds) == fold;
  }
  std::vector<std::pair<std::string, std::string>> train_pairs, val_pairs;
  for (Index u = 0; u < m.n_users(); ++u) {
    const auto begin = static_cast<std::size_t>(m.row_pointers()[u]);
    auto row = m.user_items(u);
    bool any_train = false;
    for (std::size_t k = 0; k < row.size(); ++k) any_train |= !held[begin + k];
    if (!any_train && !row.empty()) held[begin] = 0;
    for (std::size_t k = 0; k < row.size(); ++k)
      (held[begin + k] ? val_pairs : train_pairs).emplace_back(data.users.external(u), data.items.external(row[k]));
  }
  HoldoutSplit s;
  s.train = ingest(train_pairs);
  s.validation = build_test_set(val_pairs, s.train.users, s.train.items);
  return s;
}

/// Sets a named hyperparameter; names match the CLI/config keys.
inline void set_hyperparameter(TrainConfig& cfg, std::string_view name, double value) {
  if (name == "theta1") cfg.admm.theta1 = value;
  else if (name == "theta2") cfg.admm.theta2 = value;
  else if (name == "eta") cfg.admm.eta = value;
  else if (name == "lambda") cfg.admm.lambda = value;
  else if (name == "rho") cfg.admm.rho = value;
  else if (name == "prune_threshold") cfg.admm.prune_threshold = value;
  else if (name == "tau") cfg.tau = value;
  else if (name == "k") cfg.k = static_cast<int>(value);
  else throw Error(ErrorCode::InvalidArgument, "unknown hyperparameter '" + std::string(name) + "'");
}

struct GridSpec {
  std::vector<std::pair<std::string, std::vector<double>>> axes;

  /// Parses "theta1=0.1,0.2;lambda=0.3,0.5".
  static GridSpec parse(std::string_view text) {
    GridSpec g;
    std::stringstream ss{std::string(text)};
    std::string axis;
    while (std::getline(ss, axis, ';')) {
      axis = std::string(detail::trim(axis));
      if (axis.empty()) continue;
      const auto eq = axis.find('=');
      require(eq != std::string::npos, ErrorCode::InvalidArgument, "grid axis '" + axis + "' lacks '='");
      std::pair<std::string, std::vector<double>> entry{std::string(detail::trim(axis.substr(0, eq))), {}};
      std::stringstream vs(axis.substr(eq + 1));
      std::string v;
      while (std::getline(vs, v, ',')) {
        try {
          entry.second.push_back(std::stod(v));
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidArgument, "bad grid value '" + v + "'");
        }
      }
      require(!entry.second.empty(), ErrorCode::InvalidArgument, "grid axis '" + entry.first + "' has no values");
      TrainConfig probe;
      set_hyperparameter(probe, entry.first, entry.second.front());
      g.axes.push_back(std::move(entry));
    }
    return g;
  }

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& [name, values] : axes) n *= values.size();
    return n;
  }

  /// The `index`-th point of the cartesian product (last axis fastest).
  std::vector<double> point(std::size_t index) const {
    std::vector<double> p(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      p[a] = axes[a].second[index % axes[a].second.size()];
      index /= axes[a].second.size();
    }
    return p;
  }
};

struct GridRow {
  std::vector<double> values;
  double recall = 0.0;
  double ndcg = 0.0;
  double train_seconds = 0.0;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::size_t best = 0;
  TrainConfig best_config;
};

struct GridOptions {
  double validation_fraction = 0.1;
  int folds = 1;
  int K = 20;
  bool by_ndcg = false;  // rank points by NDCG instead of Recall
};

/// Exhaustive search over `grid`, scoring each point on held-out validation
/// interactions carved from `data` (averaged over folds when folds > 1).
inline GridResult grid_search(const Dataset& data, const TrainConfig& base, const GridSpec& grid,
                              const GridOptions& opt = {}) {
  std::vector<HoldoutSplit> splits;
  for (int f = 0; f < opt.folds; ++f)
    splits.push_back(split_holdout(data, opt.validation_fraction, splitmix64(base.seed ^ 0x4752494400000003ULL), f,
                                   opt.folds));
  GridResult out;
  double best_score = -1.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    TrainConfig cfg = base;
    GridRow row;
    row.values = grid.point(g);
    for (std::size_t a = 0; a < grid.axes.size(); ++a) set_hyperparameter(cfg, grid.axes[a].first, row.values[a]);
    for (const auto& split : splits) {
      TrainConfig fold_cfg = cfg;
      fold_cfg.k = std::min({cfg.k, split.train.matrix.n_users(), split.train.matrix.n_items()});
      auto t = train(split.train.matrix, fold_cfg);
      auto rep = evaluate(t.model, split.train.matrix, split.validation, EvalOptions{opt.K});
      row.recall += rep.recall_at_k / static_cast<double>(splits.size());
      row.ndcg += rep.ndcg_at_k / static_cast<double>(splits.size());
      row.train_seconds += t.timings.total();
    }
    const double score = opt.by_ndcg ? row.ndcg : row.recall;
    if (score > best_score) {
      best_score = score;
      out.best = g;
      out.best_config = cfg;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

struct AblationRow {
  std::string variant;
  EvalReport report;
  StageTimings timings;
  int n_partitions = 0;
};

/// The four variants: full, η = 0, λ = 0, θ₂ = 0.
inline std::vector<AblationRow> ablate(const Dataset& train_data, const TestSet& test, const TrainConfig& cfg,
                                       int K = 20) {
  std::vector<std::pair<std::string, TrainConfig>> variants;
  variants.emplace_back("full", cfg);
  variants.emplace_back("eta=0", cfg);
  variants.back().second.admm.eta = 0.0;
  variants.emplace_back("lambda=0", cfg);
  variants.back().second.admm.lambda = 0.0;
  variants.emplace_back("theta2=0", cfg);
  variants.back().second.admm.theta2 = 0.0;

  std::vector<AblationRow> rows;
  for (auto& [name, vcfg] : variants) {
    auto t = train(train_data, vcfg);
    AblationRow row;
    row.variant = name;
    row.report = evaluate(t.model, train_data.matrix, test, EvalOptions{K});
    row.report.train_seconds = t.timings.total();
    auto pc = count_parameters(t.model);
    row.report.n_parameters = pc.total();
    row.report.n_sparse_parameters = pc.sparse;
    row.timings = t.timings;
    row.n_partitions = t.model.assignment.n_partitions();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fpsr

#pragma once

// Recursive spectral bisection of the item set. A subset is split by the sign of
// its Fiedler vector; children of size ≥ τ·|I| (root item count) are split again.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "fpsr/error.hpp"
#include "fpsr/sparse_core.hpp"
#include "fpsr/spectral.hpp"

namespace fpsr {

struct PartitionNode {
  int id = 0;
  int parent = -1;
  int depth = 0;
  Index size = 0;
  double fiedler_value = 0.0;
  Index left_size = 0;
  Index right_size = 0;
  int attempts = 0;
  bool leaf = false;
  bool unsplittable = false;  // leaf that could not be bisected
};

struct PartitionAssignment {
  std::vector<Index> assignment;        // item → partition id
  std::vector<IndexList> partitions;    // ascending item ids, ordered by first item
  std::vector<bool> unsplittable;       // per partition
  double tau = 1.0;
  std::vector<PartitionNode> trace;     // recursion tree in creation order

  int n_partitions() const { return static_cast<int>(partitions.size()); }

  std::size_t max_partition_size() const {
    std::size_t m = 0;
    for (const auto& p : partitions) m = std::max(m, p.size());
    return m;
  }

  /// Throws ShapeError unless the partitions are disjoint, cover all items, are
  /// ordered by first item, and every non-flagged leaf is smaller than τ·|I|.
  void validate() const {
    const auto n = assignment.size();
    std::vector<int> seen(n, 0);
    require(unsplittable.size() == partitions.size(), ErrorCode::ShapeError, "flag vector size mismatch");
    for (std::size_t p = 0; p < partitions.size(); ++p) {
      const auto& part = partitions[p];
      require(!part.empty(), ErrorCode::ShapeError, "empty partition");
      require(std::is_sorted(part.begin(), part.end()), ErrorCode::ShapeError, "partition items not sorted");
      if (p > 0) require(partitions[p - 1].front() < part.front(), ErrorCode::ShapeError, "partition order");
      for (Index i : part) {
        require(i >= 0 && static_cast<std::size_t>(i) < n, ErrorCode::ShapeError, "item out of range");
        require(assignment[i] == static_cast<Index>(p), ErrorCode::ShapeError, "assignment disagrees");
        ++seen[i];
      }
      if (!unsplittable[p])
        require(static_cast<double>(part.size()) < tau * static_cast<double>(n), ErrorCode::ShapeError,
                "partition of size " + std::to_string(part.size()) + " not below tau*|I|");
    }
    for (std::size_t i = 0; i < n; ++i) require(seen[i] == 1, ErrorCode::ShapeError, "items not covered exactly once");
  }

  /// CSV rows: node_id,parent,depth,size,fiedler_value,left_size,right_size,leaf,unsplittable
  void write_trace_csv(std::ostream& os) const {
    os << "node_id,parent,depth,size,fiedler_value,left_size,right_size,leaf,unsplittable\n";
    for (const auto& t : trace)
      os << t.id << ',' << t.parent << ',' << t.depth << ',' << t.size << ',' << t.fiedler_value << ','
         << t.left_size << ',' << t.right_size << ',' << int(t.leaf) << ',' << int(t.unsplittable) << '\n';
  }
};

struct PartitionOptions {
  EigensolverOptions eig{};
  int max_attempts = 3;  // reseeded retries for a split with an empty side
};

struct Bisection {
  IndexList left;   // Fiedler entry ≥ 0
  IndexList right;  // Fiedler entry < 0
  double fiedler_value = 0.0;
  int attempts = 0;
};

namespace detail {

// `sub` is R restricted to `items` (column a of sub ↔ items[a]).
inline Bisection bisect_restricted(const InteractionMatrix& sub, std::span<const Index> items,
                                   const EigensolverOptions& base, int max_attempts) {
  require(items.size() >= 2, ErrorCode::InvalidArgument, "bisection needs at least two items");
  NormalizedView view(sub);
  Bisection out;
  for (int attempt = 0; attempt < std::max(1, max_attempts); ++attempt) {
    EigensolverOptions opt = base;
    opt.seed = splitmix64(base.seed + static_cast<std::uint64_t>(attempt));
    FiedlerResult f = fiedler(view, opt);
    out = {};
    out.attempts = attempt + 1;
    out.fiedler_value = f.value;
    for (std::size_t a = 0; a < items.size(); ++a)
      (f.vector[static_cast<Eigen::Index>(a)] >= 0.0 ? out.left : out.right).push_back(items[a]);
    if (!out.left.empty() && !out.right.empty()) break;
  }
  return out;
}

}  // namespace detail

/// Splits `items` by the sign of the Fiedler vector of R̃ restricted to them.
/// Zero entries go to the left (non-negative) side.
inline Bisection bisect(const NormalizedView& view, std::span<const Index> items, const EigensolverOptions& opt = {},
                        int max_attempts = 3) {
  InteractionMatrix sub = view.matrix().restrict_items(items);
  return detail::bisect_restricted(sub, items, opt, max_attempts);
}

/// Recursive bisection with size cap τ·|I|. The root is always split; the node
/// seeds depend only on the node's position in the tree, so lowering τ only
/// refines the tree produced by a larger τ.
inline PartitionAssignment partition(const NormalizedView& view, double tau, const PartitionOptions& opt = {}) {
  require(tau > 0.0 && tau <= 1.0, ErrorCode::InvalidArgument, "tau must lie in (0, 1]");
  const Index n = view.n_items();
  require(n >= 1, ErrorCode::InvalidArgument, "no items to partition");
  const double cap = tau * static_cast<double>(n);

  PartitionAssignment out;
  out.tau = tau;
  std::vector<std::pair<IndexList, bool>> leaves;

  struct Frame {
    IndexList items;
    InteractionMatrix sub;
    int parent;
    int depth;
    std::uint64_t path;  // heap numbering: root 1, children 2p and 2p+1
  };

  auto emit_leaf = [&](IndexList items, int parent, int depth, bool unsplittable) {
    PartitionNode node;
    node.id = static_cast<int>(out.trace.size());
    node.parent = parent;
    node.depth = depth;
    node.size = static_cast<Index>(items.size());
    node.leaf = true;
    node.unsplittable = unsplittable;
    out.trace.push_back(node);
    leaves.emplace_back(std::move(items), unsplittable);
  };

  IndexList all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  std::vector<Frame> stack;
  if (n < 2) {
    emit_leaf(std::move(all), -1, 0, true);
  } else {
    stack.push_back({std::move(all), view.matrix(), -1, 0, 1});
  }

  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    EigensolverOptions eig = opt.eig;
    eig.seed = splitmix64(opt.eig.seed ^ splitmix64(f.path));
    Bisection b = detail::bisect_restricted(f.sub, f.items, eig, opt.max_attempts);

    PartitionNode node;
    node.id = static_cast<int>(out.trace.size());
    node.parent = f.parent;
    node.depth = f.depth;
    node.size = static_cast<Index>(f.items.size());
    node.fiedler_value = b.fiedler_value;
    node.left_size = static_cast<Index>(b.left.size());
    node.right_size = static_cast<Index>(b.right.size());
    node.attempts = b.attempts;
    if (b.left.empty() || b.right.empty()) {
      node.leaf = true;
      node.unsplittable = true;
      out.trace.push_back(node);
      leaves.emplace_back(std::move(f.items), true);
      continue;
    }
    out.trace.push_back(node);

    // Map global ids back to columns of f.sub for the child restriction.
    std::vector<Index> local(static_cast<std::size_t>(n), -1);
    for (std::size_t a = 0; a < f.items.size(); ++a) local[f.items[a]] = static_cast<Index>(a);

    // Push right first so the left child is processed first.
    std::pair<IndexList*, std::uint64_t> children[2] = {{&b.right, 2 * f.path + 1}, {&b.left, 2 * f.path}};
    for (auto& [child, path] : children) {
      if (static_cast<double>(child->size()) >= cap) {
        if (child->size() < 2) {
          emit_leaf(std::move(*child), node.id, f.depth + 1, true);
          continue;
        }
        IndexList cols(child->size());
        for (std::size_t a = 0; a < child->size(); ++a) cols[a] = local[(*child)[a]];
        InteractionMatrix sub = f.sub.restrict_items(cols);
        stack.push_back({std::move(*child), std::move(sub), node.id, f.depth + 1, path});
      } else {
        emit_leaf(std::move(*child), node.id, f.depth + 1, false);
      }
    }
  }

  for (auto& [items, flag] : leaves) std::sort(items.begin(), items.end());
  std::sort(leaves.begin(), leaves.end(), [](const auto& a, const auto& b) { return a.first.front() < b.first.front(); });
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    for (Index i : leaves[p].first) out.assignment[i] = static_cast<Index>(p);
    out.partitions.push_back(std::move(leaves[p].first));
    out.unsplittable.push_back(leaves[p].second);
  }
  return out;
}

}  // namespace fpsr

#pragma once

// C = λW + S with W kept as thin spectral factors and S as a block-diagonal CSR
// matrix. Scoring, top-K ranking and the binary model container live here.

#include <algorithm>
#include <bit>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "fpsr/admm.hpp"
#include "fpsr/error.hpp"
#include "fpsr/partitioner.hpp"
#include "fpsr/sparse_core.hpp"
#include "fpsr/spectral.hpp"

namespace fpsr {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[8] = {'F', 'P', 'S', 'R', 'M', 'O', 'D', 'L'};

struct ModelHeader {
  std::uint32_t version = kModelFormatVersion;
  AdmmConfig admm{};
  int k = 0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  Index n_users = 0;
  Index n_items = 0;
  std::uint32_t dataset_fingerprint = 0;
};

inline std::uint32_t crc32_bytes(const void* data, std::size_t len, std::uint32_t crc = 0) {
  const auto* p = static_cast<const Bytef*>(data);
  uLong c = crc;
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    c = ::crc32(c, p, chunk);
    p += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

/// CRC32 of the interaction pattern; identifies the training data a model came from.
inline std::uint32_t fingerprint(const InteractionMatrix& m) {
  std::uint32_t c = crc32_bytes(m.row_pointers().data(), m.row_pointers().size() * sizeof(std::int64_t));
  return crc32_bytes(m.column_indices().data(), m.column_indices().size() * sizeof(Index), c);
}

struct SimilarityModel {
  ModelHeader header;
  double lambda = 0.0;
  SpectralBasis basis;
  CsrMatrix<double> S;  // n_items × n_items, block diagonal
  PartitionAssignment assignment;
  IdMap users;
  IdMap items;

  Index n_items() const { return S.rows; }

  /// Throws ShapeError unless S is square, non-negative, zero-diagonal and block diagonal.
  void validate() const {
    require(S.rows == S.cols && S.rows == basis.n_items(), ErrorCode::ShapeError, "S and basis disagree on |I|");
    require(static_cast<Index>(assignment.assignment.size()) == S.rows, ErrorCode::ShapeError,
            "assignment does not cover S");
    for (Index r = 0; r < S.rows; ++r) {
      auto idx = S.row_indices(r);
      auto val = S.row_values(r);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        require(idx[k] != r, ErrorCode::ShapeError, "non-zero diagonal in S");
        require(val[k] >= 0.0, ErrorCode::ShapeError, "negative entry in S");
        require(assignment.assignment[r] == assignment.assignment[idx[k]], ErrorCode::ShapeError,
                "S entry crosses partitions");
      }
    }
  }
};

/// Places each partition block S_n (local order = that partition's item list) into the
/// global S. Blocks must correspond one-to-one with assignment.partitions.
inline SimilarityModel assemble(const std::vector<std::pair<IndexList, CsrMatrix<double>>>& parts,
                                SpectralBasis basis, double lambda, PartitionAssignment assignment) {
  const Index n = static_cast<Index>(assignment.assignment.size());
  require(basis.n_items() == n, ErrorCode::AssemblyMismatch, "basis covers a different item count");
  require(parts.size() == assignment.partitions.size(), ErrorCode::AssemblyMismatch,
          std::to_string(parts.size()) + " blocks for " + std::to_string(assignment.partitions.size()) +
              " partitions");
  std::vector<int> used(assignment.partitions.size(), 0);
  std::vector<std::vector<std::pair<Index, double>>> rows(static_cast<std::size_t>(n));
  for (const auto& [items, block] : parts) {
    require(!items.empty(), ErrorCode::AssemblyMismatch, "empty block");
    require(items[0] >= 0 && items[0] < n, ErrorCode::AssemblyMismatch, "item out of range");
    const Index pid = assignment.assignment[items[0]];
    IndexList sorted = items;
    std::sort(sorted.begin(), sorted.end());
    require(sorted == assignment.partitions[pid], ErrorCode::AssemblyMismatch,
            "block items do not match partition " + std::to_string(pid));
    require(used[pid]++ == 0, ErrorCode::AssemblyMismatch, "partition " + std::to_string(pid) + " supplied twice");
    require(block.rows == static_cast<Index>(items.size()) && block.cols == block.rows, ErrorCode::AssemblyMismatch,
            "block shape disagrees with its item list");
    for (Index r = 0; r < block.rows; ++r) {
      auto idx = block.row_indices(r);
      auto val = block.row_values(r);
      for (std::size_t k = 0; k < idx.size(); ++k) rows[items[r]].emplace_back(items[idx[k]], val[k]);
    }
  }
  SimilarityModel model;
  model.S.rows = n;
  model.S.cols = n;
  model.S.indptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (Index r = 0; r < n; ++r) {
    auto& row = rows[r];
    std::sort(row.begin(), row.end());
    for (auto [c, v] : row) {
      model.S.indices.push_back(c);
      model.S.values.push_back(v);
    }
    model.S.indptr[r + 1] = model.S.nnz();
  }
  model.lambda = lambda;
  model.basis = std::move(basis);
  model.assignment = std::move(assignment);
  model.header.k = model.basis.k();
  model.header.tau = model.assignment.tau;
  model.header.n_items = n;
  return model;
}

/// r_u·C = λ·r_u·W + r_u·S, dense over all items.
inline Eigen::VectorXd score(const SimilarityModel& model, const SparseVector& user_row) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(model.n_items());
  if (model.lambda != 0.0) out = model.lambda * score_global(model.basis, user_row);
  for (std::size_t a = 0; a < user_row.size(); ++a) {
    const Index i = user_row.indices[a];
    require(i >= 0 && i < model.n_items(), ErrorCode::ShapeError, "item outside model");
    auto idx = model.S.row_indices(i);
    auto val = model.S.row_values(i);
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] += user_row.values[a] * val[k];
  }
  return out;
}

/// Scores for a batch of users (rows of the result), using one GEMM for the λW term.
inline Eigen::MatrixXd score_batch(const SimilarityModel& model, std::span<const SparseVector> rows) {
  const auto b = static_cast<Eigen::Index>(rows.size());
  const auto& basis = model.basis;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(b, model.n_items());
  if (model.lambda != 0.0) {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(b, basis.k());
    for (Eigen::Index r = 0; r < b; ++r)
      for (std::size_t a = 0; a < rows[r].size(); ++a) {
        const Index i = rows[r].indices[a];
        t.row(r) += (rows[r].values[a] * basis.d_inv_sqrt[i]) * basis.V.row(i);
      }
    out.noalias() = t * basis.V.transpose();
    out = model.lambda * (out * basis.d_sqrt.asDiagonal());
  }
  for (Eigen::Index r = 0; r < b; ++r)
    for (std::size_t a = 0; a < rows[r].size(); ++a) {
      auto idx = model.S.row_indices(rows[r].indices[a]);
      auto val = model.S.row_values(rows[r].indices[a]);
      for (std::size_t k = 0; k < idx.size(); ++k) out(r, idx[k]) += rows[r].values[a] * val[k];
    }
  return out;
}

/// Anything that scores a user row against all items.
template <typename M>
concept Scorer = requires(const M& m, std::span<const SparseVector> rows) {
  { score_batch(m, rows) } -> std::convertible_to<Eigen::MatrixXd>;
};

struct Recommendation {
  Index item;
  double score;
  bool operator==(const Recommendation&) const = default;
};

/// Top-K of a dense score vector: descending score, ascending id on ties. Items in
/// `exclude` are skipped. Returns fewer than K when candidates run out.
inline std::vector<Recommendation> top_k(const Eigen::Ref<const Eigen::VectorXd>& scores, int K,
                                         std::span<const Index> exclude = {}) {
  require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  std::vector<char> masked(static_cast<std::size_t>(scores.size()), 0);
  for (Index i : exclude)
    if (i >= 0 && i < scores.size()) masked[i] = 1;
  std::vector<Index> cand;
  cand.reserve(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.size(); ++i)
    if (!masked[i]) cand.push_back(i);
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(K), cand.size());
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
  std::vector<Recommendation> out;
  out.reserve(keep);
  for (std::size_t r = 0; r < keep; ++r) out.push_back({cand[r], scores[cand[r]]});
  return out;
}

/// Top-K items for one user. With mask_seen the user's own row is excluded.
template <Scorer M>
std::vector<Recommendation> recommend(const M& model, const SparseVector& user_row, int K, bool mask_seen = true) {
  Eigen::MatrixXd s = score_batch(model, std::span<const SparseVector>(&user_row, 1));
  Eigen::VectorXd row = s.row(0).transpose();
  return top_k(row, K, mask_seen ? std::span<const Index>(user_row.indices) : std::span<const Index>{});
}

// ---------------------------------------------------------------------------
// Binary container: magic, u32 version, header, length-prefixed little-endian
// arrays, u32 CRC32 trailer over everything before it.

namespace detail {

class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    buf_.append(reinterpret_cast<const char*>(b), sizeof(T));
  }

  template <typename T>
  void put_array(std::span<const T> a) {
    put<std::uint64_t>(a.size());
    if constexpr (std::endian::native == std::endian::little) {
      buf_.append(reinterpret_cast<const char*>(a.data()), a.size_bytes());
    } else {
      for (const T& v : a) put(v);
    }
  }

  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_.append(s);
  }

  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  template <typename T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    require(n <= (data_.size() - pos_) / sizeof(T), ErrorCode::ModelCorrupt, "array length exceeds file");
    std::vector<T> out(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), data_.data() + pos_, n * sizeof(T));
      pos_ += n * sizeof(T);
    } else {
      for (auto& v : out) v = get<T>();
    }
    return out;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    require(n <= data_.size() - pos_, ErrorCode::ModelCorrupt, "unexpected end of model data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline void put_matrix(ByteWriter& w, const Eigen::MatrixXd& m) {
  w.put<std::int64_t>(m.rows());
  w.put<std::int64_t>(m.cols());
  w.put_array(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

inline Eigen::MatrixXd get_matrix(ByteReader& r) {
  const auto rows = r.get<std::int64_t>();
  const auto cols = r.get<std::int64_t>();
  auto data = r.get_array<double>();
  require(rows >= 0 && cols >= 0 && static_cast<std::uint64_t>(rows * cols) == data.size(), ErrorCode::ModelCorrupt,
          "matrix shape disagrees with payload");
  return Eigen::Map<Eigen::MatrixXd>(data.data(), rows, cols);
}

inline void put_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.put_array(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

inline Eigen::VectorXd get_vector(ByteReader& r) {
  auto data = r.get_array<double>();
  return Eigen::Map<Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

inline void put_ids(ByteWriter& w, const IdMap& ids) {
  w.put<std::uint64_t>(ids.ids().size());
  for (const auto& s : ids.ids()) w.put_string(s);
}

inline IdMap get_ids(ByteReader& r) {
  const auto n = r.get<std::uint64_t>();
  std::vector<std::string> ids;
  for (std::uint64_t k = 0; k < n; ++k) ids.push_back(r.get_string());
  return IdMap::from_ids(std::move(ids));
}

}  // namespace detail

inline std::string serialize(const SimilarityModel& m) {
  detail::ByteWriter w;
  w.buffer().append(kModelMagic, sizeof(kModelMagic));
  w.put<std::uint32_t>(m.header.version);

  const auto& h = m.header;
  w.put<double>(m.lambda);
  w.put<double>(h.admm.theta1);
  w.put<double>(h.admm.theta2);
  w.put<double>(h.admm.eta);
  w.put<double>(h.admm.lambda);
  w.put<double>(h.admm.rho);
  w.put<std::int32_t>(h.admm.max_iter);
  w.put<double>(h.admm.tol);
  w.put<double>(h.admm.prune_threshold);
  w.put<std::int32_t>(h.k);
  w.put<double>(h.tau);
  w.put<std::uint64_t>(h.seed);
  w.put<std::int32_t>(h.n_users);
  w.put<std::int32_t>(h.n_items);
  w.put<std::uint32_t>(h.dataset_fingerprint);

  detail::put_matrix(w, m.basis.V);
  detail::put_vector(w, m.basis.sigma);
  detail::put_vector(w, m.basis.d_inv_sqrt);
  detail::put_vector(w, m.basis.d_sqrt);
  w.put<std::int32_t>(m.basis.iterations);

  w.put<std::int32_t>(m.S.rows);
  w.put<std::int32_t>(m.S.cols);
  w.put_array(std::span<const std::int64_t>(m.S.indptr));
  w.put_array(std::span<const Index>(m.S.indices));
  w.put_array(std::span<const double>(m.S.values));

  const auto& a = m.assignment;
  w.put<double>(a.tau);
  w.put_array(std::span<const Index>(a.assignment));
  std::vector<std::uint8_t> flags(a.unsplittable.begin(), a.unsplittable.end());
  w.put_array(std::span<const std::uint8_t>(flags));
  w.put<std::uint64_t>(a.trace.size());
  for (const auto& t : a.trace) {
    w.put<std::int32_t>(t.id);
    w.put<std::int32_t>(t.parent);
    w.put<std::int32_t>(t.depth);
    w.put<std::int32_t>(t.size);
    w.put<double>(t.fiedler_value);
    w.put<std::int32_t>(t.left_size);
    w.put<std::int32_t>(t.right_size);
    w.put<std::int32_t>(t.attempts);
    w.put<std::uint8_t>(t.leaf);
    w.put<std::uint8_t>(t.unsplittable);
  }

  detail::put_ids(w, m.users);
  detail::put_ids(w, m.items);

  const std::uint32_t crc = crc32_bytes(w.buffer().data(), w.buffer().size());
  w.put<std::uint32_t>(crc);
  return std::move(w.buffer());
}

inline SimilarityModel deserialize(std::string_view bytes) {
  require(bytes.size() >= sizeof(kModelMagic) + 8 && std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) == 0,
          ErrorCode::ModelCorrupt, "not a model file");
  detail::ByteReader head(bytes.substr(sizeof(kModelMagic), 4));
  const auto version = head.get<std::uint32_t>();
  require(version == kModelFormatVersion, ErrorCode::ModelVersionError,
          "model format version " + std::to_string(version) + ", expected " + std::to_string(kModelFormatVersion));
  const auto body = bytes.substr(0, bytes.size() - 4);
  detail::ByteReader tail(bytes.substr(bytes.size() - 4));
  require(tail.get<std::uint32_t>() == crc32_bytes(body.data(), body.size()), ErrorCode::ModelCorrupt,
          "checksum mismatch");

  detail::ByteReader r(body.substr(sizeof(kModelMagic) + 4));
  SimilarityModel m;
  auto& h = m.header;
  h.version = version;
  m.lambda = r.get<double>();
  h.admm.theta1 = r.get<double>();
  h.admm.theta2 = r.get<double>();
  h.admm.eta = r.get<double>();
  h.admm.lambda = r.get<double>();
  h.admm.rho = r.get<double>();
  h.admm.max_iter = r.get<std::int32_t>();
  h.admm.tol = r.get<double>();
  h.admm.prune_threshold = r.get<double>();
  h.k = r.get<std::int32_t>();
  h.tau = r.get<double>();
  h.seed = r.get<std::uint64_t>();
  h.n_users = r.get<std::int32_t>();
  h.n_items = r.get<std::int32_t>();
  h.dataset_fingerprint = r.get<std::uint32_t>();

  m.basis.V = detail::get_matrix(r);
  m.basis.sigma = detail::get_vector(r);
  m.basis.d_inv_sqrt = detail::get_vector(r);
  m.basis.d_sqrt = detail::get_vector(r);
  m.basis.iterations = r.get<std::int32_t>();

  m.S.rows = r.get<std::int32_t>();
  m.S.cols = r.get<std::int32_t>();
  m.S.indptr = r.get_array<std::int64_t>();
  m.S.indices = r.get_array<Index>();
  m.S.values = r.get_array<double>();
  require(m.S.rows >= 0 && m.S.indptr.size() == static_cast<std::size_t>(m.S.rows) + 1 &&
              m.S.indices.size() == m.S.values.size() &&
              static_cast<std::int64_t>(m.S.indices.size()) == m.S.indptr.back(),
          ErrorCode::ModelCorrupt, "inconsistent CSR arrays");

  auto& a = m.assignment;
  a.tau = r.get<double>();
  a.assignment = r.get_array<Index>();
  auto flags = r.get_array<std::uint8_t>();
  a.unsplittable.assign(flags.begin(), flags.end());
  a.partitions.assign(flags.size(), {});
  for (Index i = 0; i < static_cast<Index>(a.assignment.size()); ++i) {
    const Index p = a.assignment[i];
    require(p >= 0 && static_cast<std::size_t>(p) < a.partitions.size(), ErrorCode::ModelCorrupt,
            "partition id out of range");
    a.partitions[p].push_back(i);
  }
  const auto n_trace = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < n_trace; ++k) {
    PartitionNode t;
    t.id = r.get<std::int32_t>();
    t.parent = r.get<std::int32_t>();
    t.depth = r.get<std::int32_t>();
    t.size = r.get<std::int32_t>();
    t.fiedler_value = r.get<double>();
    t.left_size = r.get<std::int32_t>();
    t.right_size = r.get<std::int32_t>();
    t.attempts = r.get<std::int32_t>();
    t.leaf = r.get<std::uint8_t>() != 0;
    t.unsplittable = r.get<std::uint8_t>() != 0;
    a.trace.push_back(t);
  }

  m.users = detail::get_ids(r);
  m.items = detail::get_ids(r);
  require(r.at_end(), ErrorCode::ModelCorrupt, "trailing bytes before checksum");
  return m;
}

inline void save(const SimilarityModel& model, const std::string& path) {
  const std::string bytes = serialize(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path);
}

inline SimilarityModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fpsr

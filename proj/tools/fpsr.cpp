// fpsr command-line front end.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef FPSR_HAVE_CURL
#include <curl/curl.h>
#endif

#include "fpsr/diagnostics.hpp"
#include "fpsr/eval.hpp"
#include "fpsr/model.hpp"
#include "fpsr/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fpsr;

namespace {

struct Options {
  TrainConfig train;
  int K = 20;
  bool as_json = false;
  bool quiet = false;
};

void log(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << "[fpsr] " << msg << '\n';
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + path + " for writing");
  return out;
}

Dataset read_dataset(const Options& o, const std::string& path) {
  auto in = open_input(path);
  Dataset d = ingest(in);
  if (d.lines_with_extra_fields > 0)
    log(o, "warning: ignored extra fields (e.g. ratings) on " + std::to_string(d.lines_with_extra_fields) + " lines");
  log(o, path + ": " + std::to_string(d.matrix.n_users()) + " users, " + std::to_string(d.matrix.n_items()) +
             " items, " + std::to_string(d.matrix.nnz()) + " interactions");
  return d;
}

/// Training interactions re-expressed in a saved model's id space; pairs with an
/// id the model does not know are dropped.
InteractionMatrix model_space(const SimilarityModel& model, const std::string& path, std::size_t* dropped) {
  auto in = open_input(path);
  std::vector<std::pair<Index, Index>> e;
  *dropped = 0;
  for_each_record(in, [&](const Record& r, std::size_t) {
    const Index u = model.users.find(r.user);
    const Index i = model.items.find(r.item);
    if (u < 0 || i < 0) {
      ++*dropped;
      return;
    }
    e.emplace_back(u, i);
  });
  return InteractionMatrix::from_pairs(model.users.size(), model.items.size(), std::move(e));
}

json admm_json(const AdmmConfig& c) {
  return {{"theta1", c.theta1}, {"theta2", c.theta2}, {"eta", c.eta},         {"lambda", c.lambda},
          {"rho", c.rho},       {"max_iter", c.max_iter}, {"tol", c.tol}, {"prune_threshold", c.prune_threshold}};
}

json timings_json(const StageTimings& t) {
  return {{"svd", t.svd}, {"partition", t.partition}, {"admm", t.admm}, {"assemble", t.assemble}, {"total", t.total()}};
}

json report_json(const EvalReport& r) {
  return {{"K", r.K},
          {"recall_at_k", r.recall_at_k},
          {"ndcg_at_k", r.ndcg_at_k},
          {"n_users_evaluated", r.n_users_evaluated},
          {"n_users_skipped", r.n_users_skipped},
          {"train_seconds", r.train_seconds},
          {"eval_seconds", r.eval_seconds},
          {"n_parameters", r.n_parameters},
          {"n_sparse_parameters", r.n_sparse_parameters}};
}

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c)
      std::cout << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << r[c];
    std::cout << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Options& o, const std::string& input, const std::string& output) {
  Dataset d = read_dataset(o, input);
  if (!output.empty()) {
    auto out = open_output(output);
    for (Index u = 0; u < d.matrix.n_users(); ++u)
      for (Index i : d.matrix.user_items(u)) out << d.users.external(u) << '\t' << d.items.external(i) << '\n';
  }
  const auto& m = d.matrix;
  json j = {{"n_users", m.n_users()},
            {"n_items", m.n_items()},
            {"n_interactions", m.nnz()},
            {"density", static_cast<double>(m.nnz()) / (static_cast<double>(m.n_users()) * m.n_items())},
            {"lines_with_extra_fields", d.lines_with_extra_fields}};
  if (o.as_json) {
    std::cout << j.dump(2) << '\n';
  } else {
    print_table({"users", "items", "interactions", "density"},
                {{std::to_string(m.n_users()), std::to_string(m.n_items()), std::to_string(m.nnz()),
                  fmt(j["density"].get<double>(), 6)}});
  }
  return 0;
}

int cmd_train(const Options& o, const std::string& train_path, const std::string& model_path,
              const std::string& trace_path, const std::string& convergence_path) {
  Dataset d = read_dataset(o, train_path);
  TrainConfig cfg = o.train;
  cfg.log_objective = !convergence_path.empty();
  auto res = train(d, cfg);
  save(res.model, model_path);
  log(o, "model written to " + model_path);
  if (!trace_path.empty()) {
    auto out = open_output(trace_path);
    res.model.assignment.write_trace_csv(out);
  }
  if (!convergence_path.empty()) {
    auto out = open_output(convergence_path);
    for (std::size_t p = 0; p < res.logs.size(); ++p) write_convergence_csv(out, static_cast<int>(p), res.logs[p], p == 0);
  }
  const auto pc = count_parameters(res.model);
  int unconverged = 0;
  for (const auto& p : res.partitions) unconverged += p.converged ? 0 : 1;
  json j = {{"timings", timings_json(res.timings)},
            {"n_partitions", res.model.assignment.n_partitions()},
            {"max_partition_size", res.model.assignment.max_partition_size()},
            {"nnz", res.model.S.nnz()},
            {"n_parameters", pc.total()},
            {"n_sparse_parameters", pc.sparse},
            {"partitions_at_max_iter", unconverged},
            {"admm_peak_bytes", res.admm_peak_bytes},
            {"admm", admm_json(cfg.admm)},
            {"k", cfg.k},
            {"tau", cfg.tau},
            {"seed", cfg.seed}};
  if (o.as_json) {
    std::cout << j.dump(2) << '\n';
  } else {
    print_table({"stage", "seconds"}, {{"svd", fmt(res.timings.svd, 3)},
                                       {"partition", fmt(res.timings.partition, 3)},
                                       {"admm", fmt(res.timings.admm, 3)},
                                       {"assemble", fmt(res.timings.assemble, 3)},
                                       {"total", fmt(res.timings.total(), 3)}});
    std::cout << "partitions " << res.model.assignment.n_partitions() << ", nnz(S) " << res.model.S.nnz()
              << ", parameters " << pc.total() << " (sparse " << pc.sparse << ")\n";
  }
  return 0;
}

int cmd_evaluate(const Options& o, const std::string& model_path, const std::string& train_path,
                 const std::string& test_path, const std::string& per_user_path) {
  SimilarityModel model = load(model_path);
  std::size_t dropped = 0;
  InteractionMatrix train_m = model_space(model, train_path, &dropped);
  if (dropped) log(o, "warning: " + std::to_string(dropped) + " training pairs unknown to the model");
  auto in = open_input(test_path);
  TestSet test = read_test_set(in, model.users, model.items);
  EvalOptions eo;
  eo.K = o.K;
  eo.per_user = !per_user_path.empty();
  EvalReport rep = evaluate(model, train_m, test, eo);
  const auto pc = count_parameters(model);
  rep.n_parameters = pc.total();
  rep.n_sparse_parameters = pc.sparse;
  if (!per_user_path.empty()) {
    auto out = open_output(per_user_path);
    out << "user_id,recall,ndcg\n";
    for (std::size_t k = 0; k < rep.per_user_id.size(); ++k)
      out << model.users.external(rep.per_user_id[k]) << ',' << rep.per_user_recall[k] << ',' << rep.per_user_ndcg[k]
          << '\n';
  }
  if (o.as_json) {
    std::cout << report_json(rep).dump(2) << '\n';
  } else {
    const auto k = std::to_string(rep.K);
    print_table({"Recall@" + k, "NDCG@" + k, "users", "skipped", "parameters", "eval_s"},
                {{fmt(rep.recall_at_k), fmt(rep.ndcg_at_k), std::to_string(rep.n_users_evaluated),
                  std::to_string(rep.n_users_skipped), std::to_string(rep.n_parameters), fmt(rep.eval_seconds, 2)}});
  }
  return 0;
}

int cmd_recommend(const Options& o, const std::string& model_path, const std::string& train_path,
                  const std::vector<std::string>& user_ids, bool no_mask) {
  SimilarityModel model = load(model_path);
  std::size_t dropped = 0;
  InteractionMatrix train_m = model_space(model, train_path, &dropped);
  std::vector<Index> users;
  if (user_ids.empty()) {
    for (Index u = 0; u < train_m.n_users(); ++u) users.push_back(u);
  } else {
    for (const auto& id : user_ids) {
      const Index u = model.users.find(id);
      if (u < 0) {
        log(o, "warning: unknown user " + id);
        continue;
      }
      users.push_back(u);
    }
  }
  json out = json::array();
  if (!o.as_json) std::cout << "user_id\trank\titem_id\tscore\n";
  for (Index u : users) {
    auto recs = recommend(model, SparseVector::ones(train_m.user_items(u)), o.K, !no_mask);
    for (std::size_t r = 0; r < recs.size(); ++r) {
      if (o.as_json) {
        out.push_back({{"user_id", model.users.external(u)},
                       {"rank", r + 1},
                       {"item_id", model.items.external(recs[r].item)},
                       {"score", recs[r].score}});
      } else {
        std::cout << model.users.external(u) << '\t' << r + 1 << '\t' << model.items.external(recs[r].item) << '\t'
                  << std::setprecision(9) << recs[r].score << '\n';
      }
    }
  }
  if (o.as_json) std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_ablate(const Options& o, const std::string& train_path, const std::string& test_path) {
  Dataset d = read_dataset(o, train_path);
  auto in = open_input(test_path);
  TestSet test = read_test_set(in, d.users, d.items);
  auto rows = ablate(d, test, o.train, o.K);
  if (o.as_json) {
    json j = json::array();
    for (const auto& r : rows) {
      json row = report_json(r.report);
      row["variant"] = r.variant;
      row["n_partitions"] = r.n_partitions;
      j.push_back(row);
    }
    std::cout << j.dump(2) << '\n';
  } else {
    const auto k = std::to_string(o.K);
    std::vector<std::vector<std::string>> t;
    for (const auto& r : rows)
      t.push_back({r.variant, fmt(r.report.recall_at_k), fmt(r.report.ndcg_at_k), fmt(r.report.train_seconds, 2),
                   std::to_string(r.report.n_sparse_parameters)});
    print_table({"variant", "Recall@" + k, "NDCG@" + k, "train_s", "sparse_parameters"}, t);
  }
  return 0;
}

int cmd_grid(const Options& o, const std::string& train_path, const std::string& grid_text, const GridOptions& go,
             const std::string& csv_path) {
  Dataset d = read_dataset(o, train_path);
  GridSpec grid = GridSpec::parse(grid_text);
  log(o, "grid of " + std::to_string(grid.size()) + " points");
  auto res = grid_search(d, o.train, grid, go);
  std::vector<std::string> header;
  for (const auto& [name, values] : grid.axes) header.push_back(name);
  header.insert(header.end(), {"recall", "ndcg", "train_seconds"});
  if (!csv_path.empty()) {
    auto out = open_output(csv_path);
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (const auto& r : res.rows) {
      for (double v : r.values) out << v << ',';
      out << r.recall << ',' << r.ndcg << ',' << r.train_seconds << '\n';
    }
  }
  if (o.as_json) {
    json rows = json::array();
    for (const auto& r : res.rows) {
      json row;
      for (std::size_t a = 0; a < grid.axes.size(); ++a) row[grid.axes[a].first] = r.values[a];
      row["recall"] = r.recall;
      row["ndcg"] = r.ndcg;
      row["train_seconds"] = r.train_seconds;
      rows.push_back(row);
    }
    std::cout << json{{"rows", rows}, {"best", rows[res.best]}}.dump(2) << '\n';
  } else {
    std::vector<std::vector<std::string>> t;
    for (const auto& r : res.rows) {
      std::vector<std::string> row;
      for (double v : r.values) row.push_back(fmt(v, 4));
      row.insert(row.end(), {fmt(r.recall), fmt(r.ndcg), fmt(r.train_seconds, 2)});
      t.push_back(row);
    }
    print_table(header, t);
    std::cout << "best: row " << res.best + 1 << '\n';
  }
  return 0;
}

int cmd_connectivity(const Options& o, const std::string& train_path, int k_min, int k_max, const std::string& sym,
                     const std::string& csv_path) {
  require(k_min >= 1 && k_max >= k_min, ErrorCode::InvalidArgument, "need 1 <= k-min <= k-max");
  Dataset d = read_dataset(o, train_path);
  const auto mode = sym == "sum" ? Symmetrization::Sum : Symmetrization::Max;
  std::ofstream file;
  if (!csv_path.empty()) file = open_output(csv_path);
  std::ostream& out = csv_path.empty() ? std::cout : file;
  out << "k_neighbors,fiedler_value\n";
  EigensolverOptions eo;
  eo.seed = o.train.seed;
  for (int k = k_min; k <= k_max; ++k) {
    auto g = sample_graph(d.matrix, k, mode);
    const double c = connectivity(g, eo);
    out << k << ',' << std::setprecision(10) << c << '\n';
    log(o, "k=" + std::to_string(k) + " fiedler=" + std::to_string(c));
  }
  return 0;
}

int cmd_partitions(const Options& o, const std::string& train_path, const std::string& model_path) {
  PartitionAssignment a;
  if (!model_path.empty()) {
    a = load(model_path).assignment;
  } else {
    Dataset d = read_dataset(o, train_path);
    PartitionOptions po = o.train.partition;
    po.eig.seed = splitmix64(o.train.seed ^ 0x5041525400000002ULL);
    a = partition(NormalizedView(d.matrix), o.train.tau, po);
  }
  a.write_trace_csv(std::cout);
  log(o, std::to_string(a.n_partitions()) + " partitions, largest " + std::to_string(a.max_partition_size()));
  return 0;
}

int cmd_modularity(const Options& o, const std::string& train_path, int k, const std::string& sym) {
  Dataset d = read_dataset(o, train_path);
  PartitionOptions po = o.train.partition;
  po.eig.seed = splitmix64(o.train.seed ^ 0x5041525400000002ULL);
  auto a = partition(NormalizedView(d.matrix), o.train.tau, po);
  auto g = sample_graph(d.matrix, k, sym == "sum" ? Symmetrization::Sum : Symmetrization::Max);
  const double q = modularity(g.edges, a.assignment);
  if (o.as_json) {
    std::cout << json{{"k_neighbors", k}, {"tau", o.train.tau}, {"n_partitions", a.n_partitions()}, {"modularity", q}}
                     .dump(2)
              << '\n';
  } else {
    std::cout << "k_neighbors,tau,n_partitions,modularity\n"
              << k << ',' << o.train.tau << ',' << a.n_partitions() << ',' << q << '\n';
  }
  return 0;
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m, const std::vector<std::string>& labels) {
  auto out = open_output(path);
  out << "item";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  out << std::setprecision(10);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << labels[r];
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
    out << '\n';
  }
}

int cmd_similarity(const Options& o, const std::string& model_path, const std::vector<std::string>& item_ids,
                   int first_n, const std::string& prefix) {
  SimilarityModel model = load(model_path);
  IndexList items;
  std::vector<std::string> labels;
  if (item_ids.empty()) {
    for (Index i = 0; i < std::min<Index>(first_n, model.n_items()); ++i) items.push_back(i);
  } else {
    for (const auto& id : item_ids) {
      const Index i = model.items.find(id);
      require(i >= 0, ErrorCode::InvalidArgument, "unknown item " + id);
      items.push_back(i);
    }
  }
  for (Index i : items) labels.push_back(model.items.size() ? model.items.external(i) : std::to_string(i));
  Eigen::MatrixXd w = global_similarity_block(model.basis, items);
  Eigen::MatrixXd s(items.size(), items.size());
  for (std::size_t a = 0; a < items.size(); ++a)
    for (std::size_t b = 0; b < items.size(); ++b) s(a, b) = model.S.at(items[a], items[b]);
  Eigen::MatrixXd c = model.lambda * w + s;
  write_matrix_csv(prefix + "W.csv", w, labels);
  write_matrix_csv(prefix + "S.csv", s, labels);
  write_matrix_csv(prefix + "C.csv", c, labels);
  log(o, "wrote " + prefix + "{W,S,C}.csv for " + std::to_string(items.size()) + " items");
  return 0;
}

// ---------------------------------------------------------------------------
// fetch-dataset

struct ManifestEntry {
  std::string name, split, url, format;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  auto in = open_input(path);
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.name) || e.name.front() == '#') continue;
    require(static_cast<bool>(ls >> e.split >> e.url), ErrorCode::IngestParse,
            path + " line " + std::to_string(line_no) + ": expected name split url [format]");
    if (!(ls >> e.format)) e.format = "pairs";
    require(e.format == "pairs" || e.format == "adjacency", ErrorCode::IngestParse,
            path + " line " + std::to_string(line_no) + ": format must be pairs or adjacency");
    out.push_back(e);
  }
  return out;
}

std::string download(const std::string& url) {
  if (url.rfind("file://", 0) == 0) {
    auto in = open_input(url.substr(7));
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
#ifdef FPSR_HAVE_CURL
  CURL* curl = curl_easy_init();
  require(curl != nullptr, ErrorCode::IoError, "curl initialisation failed");
  std::string body;
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, +[](char* p, std::size_t s, std::size_t n, void* ud) {
    static_cast<std::string*>(ud)->append(p, s * n);
    return s * n;
  });
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  require(rc == CURLE_OK, ErrorCode::IoError, "download of " + url + " failed: " + curl_easy_strerror(rc));
  return body;
#else
  throw Error(ErrorCode::IoError, "built without libcurl; only file:// URLs are supported");
#endif
}

/// "user item1 item2 ..." lines become one "user<TAB>item" line per item.
std::string adjacency_to_pairs(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string user, item;
    if (!(ls >> user)) continue;
    while (ls >> item) out << user << '\t' << item << '\n';
  }
  return out.str();
}

int cmd_fetch(const Options& o, const std::string& manifest, const std::string& name, const std::string& dest) {
  int fetched = 0;
  for (const auto& e : read_manifest(manifest)) {
    if (!name.empty() && e.name != name) continue;
    log(o, "fetching " + e.name + "/" + e.split + " from " + e.url);
    std::string body = download(e.url);
    if (e.format == "adjacency") body = adjacency_to_pairs(body);
    const auto path = (fs::path(dest) / e.name / (e.split + ".txt")).string();
    auto out = open_output(path);
    out << body;
    log(o, "wrote " + path);
    ++fetched;
  }
  require(fetched > 0, ErrorCode::InvalidArgument, "no manifest entry matched '" + name + "'");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FPSR item-similarity recommender"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key = value configuration file");

  Options o;
  auto& c = o.train;
  app.add_flag("--json", o.as_json, "machine-readable JSON on stdout");
  app.add_flag("-q,--quiet", o.quiet, "suppress progress logs on stderr");
  app.add_option("--threads", c.threads, "thread budget (0 = all cores)");
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--k", c.k, "spectral rank")->check(CLI::PositiveNumber);
  app.add_option("--tau", c.tau, "partition size ratio");
  app.add_option("--K", o.K, "ranking cutoff")->check(CLI::PositiveNumber);
  app.add_option("--theta1", c.admm.theta1, "l1 weight");
  app.add_option("--theta2", c.admm.theta2, "degree-weighted l2 weight");
  app.add_option("--eta", c.admm.eta, "partition augmentation weight");
  app.add_option("--lambda", c.admm.lambda, "global similarity weight");
  app.add_option("--rho", c.admm.rho, "ADMM penalty");
  app.add_option("--max-iter", c.admm.max_iter, "ADMM iterations per partition");
  app.add_option("--tol", c.admm.tol, "ADMM stopping tolerance");
  app.add_option("--prune-threshold", c.admm.prune_threshold, "drop entries of S below this value");
  app.add_option("--svd-tol", c.svd.tol, "eigensolver relative residual tolerance");
  app.add_option("--svd-max-iter", c.svd.max_iter, "eigensolver iteration cap");
  std::size_t block_mb = kDefaultDenseBudget >> 20;
  app.add_option("--block-budget-mb", block_mb, "largest dense partition block (MiB)");

  std::string train_path, test_path, model_path, input, output, trace, convergence, per_user, grid, csv, manifest,
      name, dest = "data", sym = "max", prefix = "similarity_";
  std::vector<std::string> ids;
  bool no_mask = false;
  int k_min = 1, k_max = 50, k_graph = 10, first_n = 20;
  GridOptions go;

  auto* ingest_cmd = app.add_subcommand("ingest", "parse and summarise an interaction file");
  ingest_cmd->add_option("--input", input)->required();
  ingest_cmd->add_option("--output", output, "write the canonical deduplicated pairs");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--train", train_path)->required();
  train_cmd->add_option("--model", model_path)->required();
  train_cmd->add_option("--trace", trace, "partition recursion trace CSV");
  train_cmd->add_option("--convergence", convergence, "per-partition ADMM log CSV");

  auto* eval_cmd = app.add_subcommand("evaluate", "Recall@K / NDCG@K of a saved model");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--train", train_path)->required();
  eval_cmd->add_option("--test", test_path)->required();
  eval_cmd->add_option("--per-user", per_user, "per-user metrics CSV");

  auto* rec_cmd = app.add_subcommand("recommend", "top-K recommendations as TSV");
  rec_cmd->add_option("--model", model_path)->required();
  rec_cmd->add_option("--train", train_path)->required();
  rec_cmd->add_option("--users", ids, "user ids (default: all)");
  rec_cmd->add_flag("--no-mask", no_mask, "keep training items in the ranking");

  auto* abl_cmd = app.add_subcommand("ablate", "full / eta=0 / lambda=0 / theta2=0 variants");
  abl_cmd->add_option("--train", train_path)->required();
  abl_cmd->add_option("--test", test_path)->required();

  auto* grid_cmd = app.add_subcommand("grid-search", "hyperparameter grid on a held-out validation split");
  grid_cmd->add_option("--train", train_path)->required();
  grid_cmd->add_option("--grid", grid, "e.g. 'theta1=0.1,0.2;lambda=0.3,0.5'")->required();
  grid_cmd->add_option("--validation-fraction", go.validation_fraction);
  grid_cmd->add_option("--folds", go.folds);
  grid_cmd->add_flag("--by-ndcg", go.by_ndcg);
  grid_cmd->add_option("--csv", csv);

  auto* diag = app.add_subcommand("diagnose", "graph diagnostics");
  diag->require_subcommand(1);
  auto* conn = diag->add_subcommand("connectivity", "Fiedler value of the top-k sampled item graph");
  conn->add_option("--train", train_path)->required();
  conn->add_option("--k-min", k_min);
  conn->add_option("--k-max", k_max);
  conn->add_option("--symmetrize", sym)->check(CLI::IsMember({"max", "sum"}));
  conn->add_option("--csv", csv);
  auto* parts = diag->add_subcommand("partitions", "partition recursion trace CSV");
  parts->add_option("--train", train_path);
  parts->add_option("--model", model_path);
  auto* mod = diag->add_subcommand("modularity", "modularity of the partitioning on the sampled graph");
  mod->add_option("--train", train_path)->required();
  mod->add_option("--k-neighbors", k_graph);
  mod->add_option("--symmetrize", sym)->check(CLI::IsMember({"max", "sum"}));
  auto* simi = diag->add_subcommand("similarity", "emit W, S and C for a set of items");
  simi->add_option("--model", model_path)->required();
  simi->add_option("--items", ids, "item ids");
  simi->add_option("--first", first_n, "use the first N items when --items is absent");
  simi->add_option("--prefix", prefix, "output path prefix");

  auto* fetch = app.add_subcommand("fetch-dataset", "download benchmark splits listed in a manifest");
  fetch->add_option("--manifest", manifest, "lines: name split url [pairs|adjacency]")->required();
  fetch->add_option("--name", name);
  fetch->add_option("--dest", dest);

  CLI11_PARSE(app, argc, argv);
  c.dense_block_budget = block_mb << 20;

  try {
    c.validate();
    set_thread_budget(c.threads);
    if (*ingest_cmd) return cmd_ingest(o, input, output);
    if (*train_cmd) return cmd_train(o, train_path, model_path, trace, convergence);
    if (*eval_cmd) return cmd_evaluate(o, model_path, train_path, test_path, per_user);
    if (*rec_cmd) return cmd_recommend(o, model_path, train_path, ids, no_mask);
    if (*abl_cmd) return cmd_ablate(o, train_path, test_path);
    if (*grid_cmd) return cmd_grid(o, train_path, grid, go, csv);
    if (*conn) return cmd_connectivity(o, train_path, k_min, k_max, sym, csv);
    if (*parts) {
      require(!train_path.empty() || !model_path.empty(), ErrorCode::InvalidArgument, "need --train or --model");
      return cmd_partitions(o, train_path, model_path);
    }
    if (*mod) return cmd_modularity(o, train_path, k_graph, sym);
    if (*simi) return cmd_similarity(o, model_path, ids, first_n, prefix);
    if (*fetch) return cmd_fetch(o, manifest, name, dest);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

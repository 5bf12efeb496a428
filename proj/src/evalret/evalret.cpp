#include "mefa/evalret/evalret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <system_error>

#include "json.hpp"
#include "mefa/errors.hpp"

namespace mefa::evalret {

namespace {

void check_labels(const std::vector<std::vector<std::size_t>>& ranked, const std::vector<std::uint32_t>& query_ids,
                  const std::vector<std::uint32_t>& gallery_ids) {
  if (ranked.size() != query_ids.size()) throw DimensionError("ranking and query labels differ in length");
  for (const auto& r : ranked) {
    if (r.size() != gallery_ids.size()) throw DimensionError("ranking and gallery labels differ in length");
  }
}

std::vector<double> unit_rows(const EmbeddingBank& bank) {
  const std::size_t d = bank.dim();
  std::vector<double> out(bank.size() * d);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    double n = 0.0;
    for (float x : bank[i].global_feat) n += static_cast<double>(x) * x;
    n = std::sqrt(n);
    if (n == 0.0) throw DegenerateInputError("zero-norm global feature at item " + std::to_string(i));
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = bank[i].global_feat[k] / n;
  }
  return out;
}

}  // namespace

SimilarityMatrix similarity_matrix(const EmbeddingBank& queries, const EmbeddingBank& gallery) {
  if (queries.dim() != gallery.dim()) throw DimensionError("query and gallery dimensions differ");
  const std::size_t d = queries.dim();
  const auto q = unit_rows(queries);
  const auto g = unit_rows(gallery);
  SimilarityMatrix sim;
  sim.rows = queries.size();
  sim.cols = gallery.size();
  sim.values.assign(sim.rows * sim.cols, 0.0);
  sim.query_ids = queries.identity_ids();
  sim.gallery_ids = gallery.identity_ids();
  const long rows = static_cast<long>(sim.rows);
#ifdef MEFA_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < sim.cols; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q[i * d + k] * g[j * d + k];
      sim.values[i * sim.cols + j] = std::clamp(dot, -1.0, 1.0);
    }
  }
  return sim;
}

std::vector<std::vector<std::size_t>> rank_gallery(const SimilarityMatrix& sim) {
  if (sim.values.size() != sim.rows * sim.cols) throw DimensionError("similarity matrix size mismatch");
  std::vector<std::vector<std::size_t>> out(sim.rows);
  const long rows = static_cast<long>(sim.rows);
#ifdef MEFA_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long q = 0; q < rows; ++q) {
    auto& order = out[q];
    order.resize(sim.cols);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = sim.values.data() + q * sim.cols;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  }
  return out;
}

double rank_k_accuracy(const std::vector<std::vector<std::size_t>>& ranked, const std::vector<std::uint32_t>& query_ids,
                       const std::vector<std::uint32_t>& gallery_ids, std::size_t k) {
  check_labels(ranked, query_ids, gallery_ids);
  if (k == 0 || k > gallery_ids.size()) {
    throw InputError("rank-" + std::to_string(k) + " requested on a gallery of " + std::to_string(gallery_ids.size()));
  }
  if (ranked.empty()) throw InputError("no queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    for (std::size_t r = 0; r < k; ++r) {
      if (gallery_ids[ranked[q][r]] == query_ids[q]) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double mean_average_precision(const std::vector<std::vector<std::size_t>>& ranked,
                              const std::vector<std::uint32_t>& query_ids,
                              const std::vector<std::uint32_t>& gallery_ids) {
  check_labels(ranked, query_ids, gallery_ids);
  if (ranked.empty()) throw InputError("no queries");
  double total = 0.0;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    std::size_t found = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < ranked[q].size(); ++r) {
      if (gallery_ids[ranked[q][r]] == query_ids[q]) {
        ++found;
        ap += static_cast<double>(found) / static_cast<double>(r + 1);
      }
    }
    if (found == 0) throw InputError("query " + std::to_string(q) + " has no relevant gallery item");
    total += ap / static_cast<double>(found);
  }
  return 100.0 * total / static_cast<double>(ranked.size());
}

RetrievalReport evaluate(const SimilarityMatrix& sim, std::size_t keep) {
  const auto ranked = rank_gallery(sim);
  RetrievalReport rep;
  const auto at = [&](std::size_t k) {
    return rank_k_accuracy(ranked, sim.query_ids, sim.gallery_ids, std::min(k, sim.cols));
  };
  rep.rank1 = at(1);
  rep.rank5 = at(5);
  rep.rank10 = at(10);
  rep.map = mean_average_precision(ranked, sim.query_ids, sim.gallery_ids);
  for (const auto& order : ranked) {
    auto& ids = rep.ranked_ids.emplace_back();
    for (std::size_t r = 0; r < std::min(keep, order.size()); ++r) ids.push_back(sim.gallery_ids[order[r]]);
  }
  return rep;
}

std::string report_json(const RetrievalReport& report) {
  nlohmann::ordered_json j;
  j["rank1"] = report.rank1;
  j["rank5"] = report.rank5;
  j["rank10"] = report.rank10;
  j["map"] = report.map;
  j["config_fingerprint"] = report.config_fingerprint;
  j["seed"] = report.seed;
  j["ranked_ids"] = report.ranked_ids;
  return j.dump(2) + "\n";
}

std::string report_tsv(const RetrievalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "rank1\trank5\trank10\tmap\n";
  out << report.rank1 << '\t' << report.rank5 << '\t' << report.rank10 << '\t' << report.map << '\n';
  out << "# config_fingerprint\t" << report.config_fingerprint << '\n';
  out << "# seed\t" << report.seed << '\n';
  return out.str();
}

RetrievalReport parse_report_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  RetrievalReport rep;
  rep.rank1 = j.at("rank1").get<double>();
  rep.rank5 = j.at("rank5").get<double>();
  rep.rank10 = j.at("rank10").get<double>();
  rep.map = j.at("map").get<double>();
  rep.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  rep.seed = j.at("seed").get<std::uint64_t>();
  rep.ranked_ids = j.at("ranked_ids").get<std::vector<std::vector<std::uint32_t>>>();
  return rep;
}

void emit_report(const RetrievalReport& report, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::system_error(errno, std::generic_category(), "cannot write " + path);
  out << (format == ReportFormat::kJson ? report_json(report) : report_tsv(report));
  if (!out) throw std::system_error(errno, std::generic_category(), "write failed for " + path);
}

RetrievalReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report_json(ss.str());
}

EmbeddingBank similarity_bank(const SimilarityMatrix& sim) {
  EmbeddingBank bank(Modality::kSimilarity, sim.cols);
  for (std::size_t q = 0; q < sim.rows; ++q) {
    BankItem item;
    item.identity_id = sim.query_ids[q];
    for (std::size_t g = 0; g < sim.cols; ++g) item.global_feat.push_back(static_cast<float>(sim.at(q, g)));
    bank.add(std::move(item));
  }
  return bank;
}

void save_similarity(const SimilarityMatrix& sim, const std::string& path) { save_bank(similarity_bank(sim), path); }

}  // namespace mefa::evalret

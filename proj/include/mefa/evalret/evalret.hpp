#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mefa/encoders/bank.hpp"

namespace mefa::evalret {

/// Rows are queries, columns gallery items; values are global cosine similarities.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::uint32_t> query_ids;
  std::vector<std::uint32_t> gallery_ids;

  double at(std::size_t q, std::size_t g) const { return values[q * cols + g]; }
};

/// Cosine similarity of every query global against every gallery global.
SimilarityMatrix similarity_matrix(const EmbeddingBank& queries, const EmbeddingBank& gallery);

/// Per query, gallery indices by descending similarity; ties by ascending index.
std::vector<std::vector<std::size_t>> rank_gallery(const SimilarityMatrix& sim);

/// Percentage of queries with a matching identity within the first k results.
double rank_k_accuracy(const std::vector<std::vector<std::size_t>>& ranked, const std::vector<std::uint32_t>& query_ids,
                       const std::vector<std::uint32_t>& gallery_ids, std::size_t k);

/// Mean over queries of AP = mean over relevant positions r of (relevant in top r)/r, as a percentage.
double mean_average_precision(const std::vector<std::vector<std::size_t>>& ranked,
                              const std::vector<std::uint32_t>& query_ids,
                              const std::vector<std::uint32_t>& gallery_ids);

struct RetrievalReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;
  /// Identity ids of each query's top results, best first.
  std::vector<std::vector<std::uint32_t>> ranked_ids;
  std::string config_fingerprint;
  std::uint64_t seed = 0;

  bool operator==(const RetrievalReport&) const = default;
};

/// Full evaluation; keeps the top `keep` ids per query in the report. Rank-K
/// on a gallery smaller than K is reported as Rank-(gallery size).
RetrievalReport evaluate(const SimilarityMatrix& sim, std::size_t keep = 10);

enum class ReportFormat { kJson, kTsv };

std::string report_json(const RetrievalReport& report);
std::string report_tsv(const RetrievalReport& report);
RetrievalReport parse_report_json(const std::string& text);
void emit_report(const RetrievalReport& report, const std::string& path, ReportFormat format);
RetrievalReport read_report(const std::string& path);

/// Stores each query row as one item of a modality-2 bank (D = gallery size).
EmbeddingBank similarity_bank(const SimilarityMatrix& sim);
void save_similarity(const SimilarityMatrix& sim, const std::string& path);

}  // namespace mefa::evalret

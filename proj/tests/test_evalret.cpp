#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mefa/errors.hpp"
#include "mefa/evalret/evalret.hpp"
#include "mefa/numerics/random.hpp"
#include "oracles.hpp"

using namespace mefa;
using namespace mefa::evalret;

namespace {

SimilarityMatrix single_row(std::vector<double> row, std::vector<std::uint32_t> gallery, std::uint32_t query) {
  SimilarityMatrix s;
  s.rows = 1;
  s.cols = row.size();
  s.values = std::move(row);
  s.query_ids = {query};
  s.gallery_ids = std::move(gallery);
  return s;
}

SimilarityMatrix random_matrix(num::Rng& rng, std::size_t q, std::size_t g, std::size_t ids) {
  SimilarityMatrix s;
  s.rows = q;
  s.cols = g;
  for (std::size_t i = 0; i < q * g; ++i) {
    // coarse grid so that ties occur
    s.values.push_back(static_cast<double>(num::draw_index(rng, 9)) / 4.0 - 1.0);
  }
  for (std::size_t j = 0; j < g; ++j) s.gallery_ids.push_back(static_cast<std::uint32_t>(num::draw_index(rng, ids)));
  for (std::size_t i = 0; i < q; ++i) s.query_ids.push_back(s.gallery_ids[num::draw_index(rng, g)]);
  return s;
}

std::vector<double> row_of(const SimilarityMatrix& s, std::size_t q) {
  return {s.values.begin() + q * s.cols, s.values.begin() + (q + 1) * s.cols};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mefa_test_" + name)).string();
}

}  // namespace

TEST_CASE("rank_gallery ordering") {
  CHECK(rank_gallery(single_row({0.1, 0.9, 0.5}, {0, 0, 0}, 0))[0] == std::vector<std::size_t>{1, 2, 0});
  CHECK(rank_gallery(single_row({0.3, 0.3, 0.3, 0.3}, {0, 0, 0, 0}, 0))[0] == std::vector<std::size_t>{0, 1, 2, 3});
  num::Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto s = random_matrix(rng, 1, 6, 3);
    CHECK(rank_gallery(s)[0] == oracle::ranking(row_of(s, 0)));
  }
}

TEST_CASE("rank-k examples") {
  const std::vector<std::uint32_t> g = {5, 1, 2, 3, 4, 6};
  const auto first = single_row({0.9, 0.1, 0.1, 0.1, 0.1, 0.1}, g, 5);
  CHECK(rank_k_accuracy(rank_gallery(first), first.query_ids, g, 1) == 100.0);
  const auto second = single_row({0.8, 0.9, 0.1, 0.1, 0.1, 0.1}, g, 5);
  const auto r = rank_gallery(second);
  CHECK(rank_k_accuracy(r, second.query_ids, g, 1) == 0.0);
  CHECK(rank_k_accuracy(r, second.query_ids, g, 5) == 100.0);
  CHECK_THROWS_AS(rank_k_accuracy(r, second.query_ids, g, 7), InputError);
}

TEST_CASE("average precision examples") {
  const auto at1 = single_row({0.9, 0.1, 0.2}, {1, 2, 3}, 1);
  CHECK(mean_average_precision(rank_gallery(at1), at1.query_ids, at1.gallery_ids) == doctest::Approx(100.0));
  const auto at13 = single_row({0.9, 0.5, 0.4}, {1, 2, 1}, 1);
  CHECK(mean_average_precision(rank_gallery(at13), at13.query_ids, at13.gallery_ids) ==
        doctest::Approx(250.0 / 3.0).epsilon(1e-12));
  const auto at2 = single_row({0.5, 0.9, 0.1}, {1, 2, 3}, 1);
  CHECK(mean_average_precision(rank_gallery(at2), at2.query_ids, at2.gallery_ids) == doctest::Approx(50.0));

  const auto none = single_row({0.5, 0.9}, {1, 2}, 7);
  try {
    mean_average_precision(rank_gallery(none), none.query_ids, none.gallery_ids);
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("query 0") != std::string::npos);
  }
}

TEST_CASE("fast metrics agree with the brute-force oracle") {
  num::Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t g = 10 + num::draw_index(rng, 11);
    const std::size_t q = 1 + num::draw_index(rng, 5);
    const auto s = random_matrix(rng, q, g, 1 + num::draw_index(rng, 6));
    const auto ranked = rank_gallery(s);
    double oracle_map = 0.0;
    for (std::size_t i = 0; i < q; ++i) oracle_map += oracle::average_precision(row_of(s, i), s.gallery_ids, s.query_ids[i]).value();
    oracle_map = 100.0 * oracle_map / static_cast<double>(q);
    CHECK(std::abs(mean_average_precision(ranked, s.query_ids, s.gallery_ids) - oracle_map) <= 1e-12);
    for (std::size_t k : {1u, 5u, 10u}) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < q; ++i) hits += oracle::hit_within(row_of(s, i), s.gallery_ids, s.query_ids[i], k);
      CHECK(rank_k_accuracy(ranked, s.query_ids, s.gallery_ids, k) == 100.0 * static_cast<double>(hits) / static_cast<double>(q));
    }
  }
}

TEST_CASE("metrics are invariant to gallery permutation without ties") {
  num::Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    SimilarityMatrix s;
    s.rows = 3;
    s.cols = 12;
    for (std::size_t i = 0; i < 36; ++i) s.values.push_back(num::draw_unit(rng));
    for (std::size_t j = 0; j < 12; ++j) s.gallery_ids.push_back(static_cast<std::uint32_t>(j % 4));
    s.query_ids = {0, 1, 3};
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t j = 11; j > 0; --j) std::swap(perm[j], perm[num::draw_index(rng, j + 1)]);
    SimilarityMatrix p = s;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 12; ++j) p.values[i * 12 + j] = s.values[i * 12 + perm[j]];
    for (std::size_t j = 0; j < 12; ++j) p.gallery_ids[j] = s.gallery_ids[perm[j]];
    const auto a = evaluate(s);
    const auto b = evaluate(p);
    CHECK(a.rank1 == b.rank1);
    CHECK(a.rank5 == b.rank5);
    CHECK(a.rank10 == b.rank10);
    CHECK(a.map == doctest::Approx(b.map).epsilon(1e-12));
  }
}

TEST_CASE("an irrelevant item ranked last never lowers a metric") {
  num::Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    const auto s = random_matrix(rng, 3, 12, 4);
    SimilarityMatrix e;
    e.rows = s.rows;
    e.cols = s.cols + 1;
    e.query_ids = s.query_ids;
    e.gallery_ids = s.gallery_ids;
    e.gallery_ids.push_back(999);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const auto r = row_of(s, i);
      e.values.insert(e.values.end(), r.begin(), r.end());
      e.values.push_back(-2.0);
    }
    const auto a = evaluate(s);
    const auto b = evaluate(e);
    CHECK(b.rank1 >= a.rank1);
    CHECK(b.rank5 >= a.rank5);
    CHECK(b.rank10 >= a.rank10);
    CHECK(b.map >= a.map - 1e-12);
  }
}

TEST_CASE("rank-k is monotone in k") {
  num::Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const auto rep = evaluate(random_matrix(rng, 4, 15, 5));
    CHECK(rep.rank1 <= rep.rank5);
    CHECK(rep.rank5 <= rep.rank10);
    CHECK(rep.rank10 <= 100.0);
    CHECK(rep.map >= 0.0);
    CHECK(rep.map <= 100.0);
  }
}

TEST_CASE("similarity from banks") {
  EmbeddingBank q(Modality::kText, 2), g(Modality::kImage, 2);
  q.add(BankItem{1, 0, {1, 0}, {}});
  g.add(BankItem{1, 0, {2, 0}, {}});
  g.add(BankItem{2, 0, {0, 3}, {}});
  g.add(BankItem{3, 0, {1, 1}, {}});
  const auto s = similarity_matrix(q, g);
  CHECK(s.at(0, 0) == doctest::Approx(1.0));
  CHECK(s.at(0, 1) == doctest::Approx(0.0));
  CHECK(s.at(0, 2) == doctest::Approx(std::sqrt(0.5)));
  CHECK(s.gallery_ids == std::vector<std::uint32_t>{1, 2, 3});

  const auto path = temp_path("sim.bin");
  save_similarity(s, path);
  const auto bank = load_bank(path);
  CHECK(bank.modality() == Modality::kSimilarity);
  CHECK(bank.dim() == 3);
  CHECK(bank[0].global_feat[0] == doctest::Approx(1.0));
  std::filesystem::remove(path);
}

TEST_CASE("report serialization") {
  num::Rng rng(12);
  auto rep = evaluate(random_matrix(rng, 5, 14, 4));
  rep.config_fingerprint = "0123456789abcdef";
  rep.seed = 77;

  const auto jpath = temp_path("report.json");
  emit_report(rep, jpath, ReportFormat::kJson);
  CHECK(read_report(jpath) == rep);

  const auto tpath = temp_path("report.tsv");
  emit_report(rep, tpath, ReportFormat::kTsv);
  std::ifstream in(tpath);
  std::string header;
  std::getline(in, header);
  CHECK(header == "rank1\trank5\trank10\tmap");
  std::stringstream rest;
  rest << in.rdbuf();
  CHECK(rest.str().find("0123456789abcdef") != std::string::npos);
  CHECK(report_json(rep) == report_json(read_report(jpath)));
  std::filesystem::remove(jpath);
  std::filesystem::remove(tpath);

  CHECK_THROWS(emit_report(rep, "/nonexistent-dir/x/report.json", ReportFormat::kJson));
}

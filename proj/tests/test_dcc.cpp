#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mefa/dcc/dcc.hpp"
#include "mefa/errors.hpp"
#include "mefa/numerics/gradcheck.hpp"
#include "mefa/numerics/ops.hpp"
#include "mefa/numerics/random.hpp"

using namespace mefa;
using namespace mefa::dcc;
using namespace mefa::num;
using Td = Tensor<double>;

namespace {

Td unit_rows(const std::vector<double>& cosines) {
  std::vector<double> v;
  for (double c : cosines) {
    v.push_back(c);
    v.push_back(std::sqrt(1 - c * c));
  }
  return Td::matrix(cosines.size(), 2, v);
}

std::vector<TokenRelevance> profile_of(const std::vector<double>& rel) {
  std::vector<TokenRelevance> p;
  for (std::size_t i = 0; i < rel.size(); ++i) p.push_back({i, rel[i]});
  std::stable_sort(p.begin(), p.end(), [](auto& a, auto& b) { return a.relevance > b.relevance; });
  return p;
}

}  // namespace

TEST_CASE("relevance profile") {
  const auto image = Td::matrix(2, 2, {1, 0, -1, 0});
  const auto p = word_relevance_profile(unit_rows({0.9, 0.5, 0.7}), image);
  REQUIRE(p.size() == 3);
  CHECK(p[0].token_index == 0);
  CHECK(p[1].token_index == 2);
  CHECK(p[2].token_index == 1);
  CHECK(p[0].relevance == doctest::Approx(0.9));

  const auto exact = word_relevance_profile(Td::matrix(2, 2, {0, 1, 1, 0}), image);
  CHECK(exact[0].token_index == 1);
  CHECK(exact[0].relevance == doctest::Approx(1.0));

  const auto orth = word_relevance_profile(Td::matrix(3, 3, {0, 1, 0, 0, 0, 1, 0, 1, 1}), Td::matrix(1, 3, {1, 0, 0}));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(orth[j].token_index == j);
    CHECK(orth[j].relevance == 0.0);
  }
}

TEST_CASE("cue selection from the middle band") {
  DccParams params;
  params.k = 2;
  const auto p = profile_of({1.0, 0.8, 0.6, 0.4, 0.1});
  CHECK(relevance_percentiles(p) == std::vector<double>{0, 20, 40, 60, 80});
  const auto sel = select_cue_words(p, params);
  CHECK(sel.word_indices == std::vector<std::size_t>{2, 3});
  CHECK_FALSE(sel.fallback);

  params.k = 10;
  CHECK(select_cue_words(p, params).word_indices == std::vector<std::size_t>{2, 3, 4});

  const auto flat = select_cue_words(profile_of({0.5, 0.5, 0.5, 0.5}), params);
  CHECK(flat.fallback);
  CHECK(flat.word_indices == std::vector<std::size_t>{1, 2, 3});

  params.k = 2;
  const auto single = select_cue_words(profile_of({0.3}), params);
  CHECK(single.fallback);
  CHECK(single.word_indices == std::vector<std::size_t>{0});
}

TEST_CASE("cue state never contains the most relevant token") {
  Rng rng(12);
  DccParams params;
  for (std::size_t k : {1u, 3u, 5u}) {
    params.k = k;
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t m = 2 + draw_index(rng, 14);
      const auto text = randn<double>({m, 6}, rng, 1.0);
      const auto image = randn<double>({1 + draw_index(rng, 6), 6}, rng, 1.0);
      const auto profile = word_relevance_profile(text, image);
      const auto state = build_cue_state(profile, text, params);
      CHECK(state.selection.word_indices.size() >= 1);
      CHECK(state.selection.word_indices.size() <= k);
      for (auto i : state.selection.word_indices) CHECK(i != profile[0].token_index);
      double norm = 0;
      for (double x : state.cue.data()) norm += x * x;
      CHECK(norm > 0);
    }
  }
}

TEST_CASE("cue embedding is the mean of the selected rows") {
  DccParams params;
  params.k = 2;
  const auto feats = Td::matrix(5, 2, {1, 1, 2, 2, 4, 0, 0, 8, 9, 9});
  const auto state = build_cue_state(profile_of({1.0, 0.8, 0.6, 0.4, 0.1}), feats, params);
  CHECK(state.cue[0] == doctest::Approx(2.0));
  CHECK(state.cue[1] == doctest::Approx(4.0));
}

TEST_CASE("pooling") {
  const auto rows = Td::matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<std::size_t> off = {0, 1, 4};
  const auto p = pool_segments(rows, off);
  CHECK(p.shape() == Shape{2, 2});
  CHECK(p.at(0, 0) == 1.0);
  CHECK(p.at(1, 0) == doctest::Approx(5.0));
  CHECK(p.at(1, 1) == doctest::Approx(6.0));
  CHECK_THROWS_AS(pool_groups(rows, {{}}), InputError);
}

TEST_CASE("d-itc closed forms") {
  // batch of 2, cos(R1,v1)=1, cos(R1,v2)=0, τ=1
  const auto cues = Td::matrix(2, 2, {1, 0, 0, 1});
  const auto imgs = Td::matrix(2, 2, {1, 0, 0, 1});
  const double both = loss_ditc(cues, imgs, 1.0).item();
  CHECK(std::abs(both / 2 - std::log1p(std::exp(-1.0))) < 1e-12);
  CHECK(std::abs(both / 2 - 0.31326) < 1e-5);

  const auto flat = Td::matrix(2, 2, {1, 1, 1, 1});
  CHECK(std::abs(loss_ditc(flat, flat, 0.07).item() - 2 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(loss_ditc(flat, flat, 0.07).item() - 1.38629) < 1e-5);
  const auto flat4 = Td::filled({4, 3}, 1.0);
  CHECK(std::abs(loss_ditc(flat4, flat4, 0.07).item() - 4 * std::log(4.0)) < 1e-12);

  CHECK(loss_ditc(cues, imgs, 0.005).item() < 1e-30);
  CHECK_THROWS_AS(loss_ditc(cues, Td::matrix(2, 2, {1, 0, 0, 0}), 0.07), DegenerateInputError);
}

TEST_CASE("d-itc permutation invariance and monotonicity") {
  Rng rng(3);
  const auto r = randn<double>({5, 4}, rng, 1.0);
  const auto v = randn<double>({5, 4}, rng, 1.0);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  CHECK(loss_ditc(r, v, 0.07).item() ==
        doctest::Approx(loss_ditc(gather_rows(r, perm), gather_rows(v, perm), 0.07).item()).epsilon(1e-12));

  // rotate v̄_1 towards R_1 with the others fixed
  const auto cues = Td::matrix(2, 2, {1, 0, 0, 1});
  double prev = 1e9;
  for (int k = 0; k <= 10; ++k) {
    const double a = 1.2 - 0.1 * k;
    const auto imgs = Td::matrix(2, 2, {std::cos(a), std::sin(a), 0.3, 1});
    const double l = loss_ditc(cues, imgs, 0.5).item();
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("d-itc gradients") {
  Rng rng(31);
  GradCheckOptions o;
  o.tol = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    auto r = randn<double>({3, 8}, rng, 1.0, true);
    auto v = randn<double>({3, 8}, rng, 1.0, true);
    CHECK(check_gradient([&] { return loss_ditc(r, v, 0.07); }, {r, v}, o).pass);
  }
  // through cue construction and pooling
  for (int trial = 0; trial < 5; ++trial) {
    auto text = randn<double>({9, 4}, rng, 1.0, true);
    auto img = randn<double>({6, 4}, rng, 1.0, true);
    const std::vector<std::size_t> toff = {0, 4, 9}, ioff = {0, 3, 6};
    DccParams params;
    params.k = 2;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t s = 0; s < 2; ++s) {
      const auto prof = word_relevance_profile(slice_rows(text, toff[s], toff[s + 1]), slice_rows(img, ioff[s], ioff[s + 1]));
      auto sel = select_cue_words(prof, params).word_indices;
      for (auto& i : sel) i += toff[s];
      groups.push_back(sel);
    }
    CHECK(check_gradient([&] { return loss_ditc(pool_groups(text, groups), pool_segments(img, ioff), 0.3); },
                         {text, img}, o).pass);
  }
}

TEST_CASE("dcc parameter validation") {
  DccParams p;
  p.band_lo = 80;
  p.band_hi = 40;
  CHECK_THROWS_AS(p.validate(), InputError);
  p = DccParams{};
  p.k = 0;
  CHECK_THROWS_AS(p.validate(), InputError);
}

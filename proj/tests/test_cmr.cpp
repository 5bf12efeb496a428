#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mefa/cmr/cmr.hpp"
#include "mefa/errors.hpp"
#include "mefa/numerics/gradcheck.hpp"
#include "mefa/numerics/ops.hpp"

using namespace mefa;
using namespace mefa::cmr;
using namespace mefa::num;
using Td = Tensor<double>;

namespace {

double total(const Td& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

GradCheckOptions loose() {
  GradCheckOptions o;
  o.tol = 1e-4;
  return o;
}

}  // namespace

TEST_CASE("attention weights examples") {
  // identical rows give equal similarities everywhere
  const auto v = Td::matrix(2, 2, {1, 0, 1, 0});
  const auto t = Td::matrix(3, 2, {1, 1, 1, 1, 1, 1});
  const auto a = attention_weights(v, t);
  for (double x : a.data()) CHECK(x == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  CHECK(attention_weights(Td::matrix(1, 2, {0.3, 0.4}), Td::matrix(1, 2, {-1, 2})).item() == doctest::Approx(1.0));

  // s = (ln2, 0): text t=[1,0]; v_1 at angle acos(ln2), v_2 orthogonal
  const double c = std::log(2.0);
  const auto v2 = Td::matrix(2, 2, {c, std::sqrt(1 - c * c), 0, 1});
  const auto a2 = attention_weights(v2, Td::matrix(1, 2, {1, 0}));
  CHECK(a2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(a2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("attention mass sums to one on random instances") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + draw_index(rng, 8);
    const std::size_t m = 1 + draw_index(rng, 12);
    const auto a = attention_weights(randn<double>({n, 6}, rng, 1.0), randn<double>({m, 6}, rng, 1.0));
    CHECK(std::abs(total(a) - 1.0) <= 1e-6);
    for (double x : a.data()) CHECK(x >= 0.0);
  }
}

TEST_CASE("attention weights are permutation equivariant") {
  Rng rng(5);
  const auto v = randn<double>({4, 5}, rng, 1.0);
  const auto t = randn<double>({3, 5}, rng, 1.0);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  const auto a = attention_weights(v, t);
  const auto b = attention_weights(gather_rows(v, perm), t);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(b.at(i, j) == doctest::Approx(a.at(perm[i], j)).epsilon(1e-12));
  }
}

TEST_CASE("weight_locals scales by attention mass") {
  const auto v = Td::matrix(2, 2, {2, 4, 6, 8});
  const auto t = Td::matrix(2, 2, {1, 1, 3, 3});
  const auto uniform = Td::matrix(2, 2, {0.25, 0.25, 0.25, 0.25});
  const auto w = weight_locals(uniform, v, t);
  for (std::size_t k = 0; k < 4; ++k) CHECK(w.v_hat[k] == doctest::Approx(v[k] / 2));

  const auto peaked = Td::matrix(2, 2, {1 - 3e-9, 1e-9, 1e-9, 1e-9});
  const auto p = weight_locals(peaked, v, t);
  CHECK(p.v_hat.at(0, 0) == doctest::Approx(2.0));
  CHECK(std::abs(p.v_hat.at(1, 0)) < 1e-7);
  CHECK(std::abs(p.t_hat.at(1, 1)) < 1e-7);

  Rng rng(1);
  const auto a = attention_weights(randn<double>({3, 4}, rng, 1.0), randn<double>({5, 4}, rng, 1.0));
  CHECK(total(sum_cols(a)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(total(sum_rows(a)) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(weight_locals(uniform, Td::matrix(3, 2, {1, 2, 3, 4, 5, 6}), t), DimensionError);
}

TEST_CASE("gated fusion") {
  Rng rng(9);
  auto p = FusionParams<double>::init(4, rng);
  const auto locals = randn<double>({2, 4}, rng, 1.0);
  const auto g = randn<double>({4}, rng, 1.0);

  auto closed = p;
  closed.w_f = Td::zeros({8, 4});
  closed.b_f = Td::zeros({4});
  const auto shut = gated_fuse(locals, g, closed);
  for (double x : shut.data()) CHECK(x == 0.0);

  auto open = p;
  open.b_f = Td::filled({4}, 50.0);
  const auto out = gated_fuse(locals, g, open);
  const auto ungated = matmul(concat_last(locals, broadcast_rows(g, 2)), p.w_u);
  for (std::size_t k = 0; k < out.size(); ++k) CHECK(out[k] == doctest::Approx(ungated[k]).epsilon(1e-9));

  CHECK_THROWS_AS(gated_fuse(locals, Td::vector({1, 2, 3}), p), DimensionError);
}

TEST_CASE("gated fusion gradients") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = FusionParams<double>::init(4, rng);
    auto locals = randn<double>({2, 4}, rng, 1.0, true);
    auto g = randn<double>({4}, rng, 1.0, true);
    const auto w = randn<double>({2, 4}, rng, 1.0);
    const auto rep = check_gradient([&] { return sum(mul(gated_fuse(locals, g, p), w)); },
                                    {locals, g, p.w_u, p.w_f, p.b_f}, loose());
    CHECK(rep.pass);
  }
}

TEST_CASE("full refinement gradients") {
  Rng rng(17);
  CmrConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    CmrHead<double> head(4, cfg, rng);
    const std::size_t n = 1 + draw_index(rng, 4), m = 1 + draw_index(rng, 4);
    auto v = randn<double>({n, 4}, rng, 1.0, true);
    auto t = randn<double>({m, 4}, rng, 1.0, true);
    auto gv = randn<double>({4}, rng, 1.0, true);
    auto gt = randn<double>({4}, rng, 1.0, true);
    std::vector<Td> inputs = {v, t, gv, gt};
    for (auto& [name, p] : head.parameters()) inputs.push_back(p);
    const auto rep = check_gradient(
        [&] {
          const auto r = refine_pair(v, gv, t, gt, head);
          return add(cosine_similarity(r.g_img, r.g_txt), mean(mul(r.image_locals_refined, r.image_locals_refined)));
        },
        inputs, loose());
    CHECK(rep.pass);
  }
}

TEST_CASE("refined pair shapes") {
  Rng rng(2);
  CmrHead<double> head(6, CmrConfig{}, rng);
  const auto r = refine_pair(randn<double>({5, 6}, rng, 1.0), randn<double>({6}, rng, 1.0),
                             randn<double>({3, 6}, rng, 1.0), randn<double>({6}, rng, 1.0), head);
  CHECK(r.attention_matrix.shape() == Shape{5, 3});
  CHECK(r.image_locals_refined.shape() == Shape{5, 6});
  CHECK(r.text_locals_refined.shape() == Shape{3, 6});
  CHECK(r.g_img.shape() == Shape{6});
  CHECK(r.g_txt.shape() == Shape{6});

  CmrConfig shared;
  shared.shared_fusion = true;
  CmrHead<double> sh(6, shared, rng);
  CHECK(sh.parameters().size() == 4);
  CHECK(head.parameters().size() == 8);
}

TEST_CASE("nitc closed forms") {
  const std::vector<std::uint32_t> unique = {0, 1};
  const std::vector<std::uint32_t> same = {4, 4};
  // all cosines equal → uniform predictions
  const auto g = Td::matrix(2, 2, {1, 0, 1, 0});
  CHECK(std::abs(loss_nitc(g, g, unique, 0.07).item() - std::log(2.0)) < 1e-12);
  CHECK(std::abs(loss_nitc(g, g, same, 0.07).item() - std::log(2.0)) < 1e-12);
  CHECK(std::abs(loss_nitc(g, g, unique, 0.07).item() - 0.69315) < 1e-5);

  // orthogonal pairs: approaches 0 as τ shrinks
  const auto e = Td::matrix(2, 2, {1, 0, 0, 1});
  double prev = 1e9;
  for (double tau : {1.0, 0.3, 0.1, 0.03, 0.01}) {
    const double l = loss_nitc(e, e, unique, tau).item();
    CHECK(l < prev);
    CHECK(l <= std::log(2.0));
    prev = l;
  }
  CHECK(prev < 1e-6);

  CHECK_THROWS_AS(loss_nitc(Td::matrix(1, 2, {1, 0}), Td::matrix(1, 2, {1, 0}), std::vector<std::uint32_t>{0}, 0.07), InputError);
}

TEST_CASE("nitc is invariant to batch order") {
  Rng rng(8);
  const auto gi = randn<double>({5, 4}, rng, 1.0);
  const auto gt = randn<double>({5, 4}, rng, 1.0);
  const std::vector<std::uint32_t> ids = {3, 1, 3, 2, 1};
  const std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
  std::vector<std::uint32_t> pids;
  for (auto i : perm) pids.push_back(ids[i]);
  const double a = loss_nitc(gi, gt, ids, 0.07).item();
  const double b = loss_nitc(gather_rows(gi, perm), gather_rows(gt, perm), pids, 0.07).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("identity targets") {
  const auto p = identity_targets(std::vector<std::uint32_t>{7, 7, 2});
  CHECK(p == std::vector<double>{0.5, 0.5, 0, 0.5, 0.5, 0, 0, 0, 1});
}

TEST_CASE("nitc gradients") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto gi = randn<double>({4, 6}, rng, 1.0, true);
    auto gt = randn<double>({4, 6}, rng, 1.0, true);
    const std::vector<std::uint32_t> ids = {0, 1, static_cast<std::uint32_t>(draw_index(rng, 3)), 2};
    CHECK(check_gradient([&] { return loss_nitc(gi, gt, ids, 0.5); }, {gi, gt}, loose()).pass);
  }
}

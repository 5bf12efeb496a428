#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mefa/errors.hpp"
#include "mefa/harness/config.hpp"
#include "mefa/harness/evaluate.hpp"
#include "mefa/harness/lamb.hpp"
#include "mefa/harness/model.hpp"
#include "mefa/harness/synthetic.hpp"
#include "mefa/harness/train.hpp"
#include "mefa/io/binary.hpp"
#include "mefa/numerics/random.hpp"

using namespace mefa;
using namespace mefa::harness;
using Td = num::Tensor<double>;

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.n_identities = 12;
  s.images_per_identity = 2;
  s.captions_per_image = 2;
  s.seed = 3;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.dim = 16;
  c.encoder.depth = 1;
  c.batch_size = 6;
  c.epochs = 2;
  c.lr_start = 1e-3;
  c.lr_end = 1e-2;
  c.visual_k = 2;
  c.seed = 11;
  return c;
}

std::vector<std::vector<float>> snapshot(const Model& m) {
  std::vector<std::vector<float>> out;
  for (const auto& t : m.parameter_tensors()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mefa_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

Caption caption_of(const std::vector<std::string>& tokens, const std::vector<PosTag>& tags) {
  Caption c;
  c.tokens = tokens;
  c.pos_tags = tags;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- LAMB

TEST_CASE("lamb matches a hand-stepped scalar update") {
  std::vector<Td> p{Td::scalar(1.0, true)};
  p[0].grad_mut()[0] = 0.1;
  LambState state;
  lamb_step(p, state, 0.01);
  // Reference: moments, bias correction, trust ratio, update, by hand.
  const double b1 = 0.9, b2 = 0.999, eps = 1e-6, g = 0.1, w = 1.0, lr = 0.01;
  const double m = (1 - b1) * g, v = (1 - b2) * g * g;
  const double mh = m / (1 - b1), vh = v / (1 - b2);
  const double u = mh / (std::sqrt(vh) + eps);
  const double phi = std::abs(w) / std::abs(u);
  const double expected = w - lr * phi * u;
  CHECK(p[0][0] == doctest::Approx(expected).epsilon(1e-14));
  CHECK(p[0][0] == doctest::Approx(0.99).epsilon(1e-12));
  CHECK(state.step == 1);
}

TEST_CASE("lamb leaves parameters alone for zero gradients or zero lr") {
  num::Rng rng(5);
  std::vector<Td> p{num::randn<double>({3, 4}, rng, 1.0, true), num::randn<double>({5}, rng, 1.0, true)};
  const std::vector<double> before(p[0].data().begin(), p[0].data().end());
  LambState state;
  lamb_step(p, state, 0.1);  // no grads at all
  CHECK(std::vector<double>(p[0].data().begin(), p[0].data().end()) == before);

  for (auto& t : p)
    for (auto& g : t.grad_mut()) g = 0.3;
  LambState fresh;
  lamb_step(p, fresh, 0.0);
  CHECK(std::vector<double>(p[0].data().begin(), p[0].data().end()) == before);
}

TEST_CASE("lamb update direction is invariant to gradient scale") {
  num::Rng rng(9);
  const auto w0 = num::randn<double>({4, 3}, rng, 1.0);
  const auto g0 = num::randn<double>({4, 3}, rng, 0.1);
  auto step = [&](double factor, double eps) {
    std::vector<Td> p{Td(w0.shape(), std::vector<double>(w0.data().begin(), w0.data().end()), true)};
    for (std::size_t i = 0; i < p[0].size(); ++i) p[0].grad_mut()[i] = factor * g0[i];
    LambState s;
    s.config.eps = eps;
    lamb_step(p, s, 0.05);
    std::vector<double> d(p[0].size());
    double norm = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = p[0][i] - w0[i];
      norm += d[i] * d[i];
    }
    for (auto& x : d) x /= std::sqrt(norm);
    return d;
  };
  const auto a = step(1.0, 0.0), b = step(10.0, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  // With ε > 0 the first-step direction is -g/(|g|+ε), normalized.
  for (double factor : {1.0, 10.0}) {
    const auto got = step(factor, 1e-6);
    std::vector<double> want(got.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      const double g = factor * g0[i];
      want[i] = -g / (std::abs(g) + 1e-6);
      norm += want[i] * want[i];
    }
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i] / std::sqrt(norm)).epsilon(1e-9));
  }
}

TEST_CASE("lamb rejects non-finite gradients without touching state") {
  std::vector<Td> p{Td::vector({1.0, 2.0}, true)};
  p[0].grad_mut()[1] = std::nan("");
  LambState s;
  CHECK_THROWS_AS(lamb_step(p, s, 0.1), DivergenceError);
  CHECK(p[0][0] == 1.0);
  CHECK(p[0][1] == 2.0);
  CHECK(s.step == 0);
}

TEST_CASE("schedule is linear with exact endpoints") {
  CHECK(lr_schedule(0, 100, 1e-6, 1e-5) == 1e-6);
  CHECK(lr_schedule(100, 100, 1e-6, 1e-5) == 1e-5);
  CHECK(lr_schedule(50, 100, 1e-6, 1e-5) == doctest::Approx(5.5e-6).epsilon(1e-12));
  CHECK(lr_schedule(150, 100, 1e-6, 1e-5) == 1e-5);
  double prev = 0.0;
  for (std::size_t s = 0; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 1e-6, 1e-5);
    CHECK(lr >= prev);
    prev = lr;
  }
}

// ---------------------------------------------------------------- synthetic data

TEST_CASE("dataset generation is deterministic") {
  auto spec = tiny_spec();
  spec.noise = 0.0;
  const auto a = generate_dataset(spec), b = generate_dataset(spec);
  CHECK(a.images == b.images);
  CHECK(a.captions == b.captions);
  CHECK(a.identities == b.identities);
  spec.noise = 0.1;
  CHECK(generate_dataset(spec).images == generate_dataset(spec).images);
}

TEST_CASE("changing the upper colour repaints only the upper garment") {
  const auto cat = AttributeCatalog::standard();
  PersonAttributes a{};
  a[kUpperType] = 0;  // shirt
  a[kUpperColor] = 0;
  a[kAccessory] = 1;
  PersonAttributes b = a;
  b[kUpperColor] = 1;
  RenderVariation v;
  v.background = 0.8f;
  const auto ia = render_person(a, cat, v, 0), ib = render_person(b, cat, v, 1);
  std::set<std::vector<float>> colors_a, colors_b;
  std::size_t differing = 0;
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      std::vector<float> pa(3), pb(3);
      for (std::size_t c = 0; c < 3; ++c) {
        pa[c] = ia.at(y, x, c);
        pb[c] = ib.at(y, x, c);
      }
      if (pa == pb) continue;
      ++differing;
      CHECK(y >= 8);
      CHECK(y <= 17);
      colors_a.insert(pa);
      colors_b.insert(pb);
    }
  }
  CHECK(differing > 0);
  CHECK(colors_a.size() == 1);
  CHECK(colors_b.size() == 1);
}

TEST_CASE("caption tags follow catalog roles") {
  const auto cat = AttributeCatalog::standard();
  std::map<std::string, PosTag> role;
  for (const auto& w : cat.genders) role[w] = PosTag::kNoun;
  for (const auto& w : cat.upper_types) role[w] = PosTag::kNoun;
  for (const auto& w : cat.lower_types) role[w] = PosTag::kNoun;
  for (const auto& w : cat.accessories) role[w] = PosTag::kNoun;
  for (const auto& w : cat.colors) role[w] = PosTag::kAdj;
  for (const auto& w : cat.actions) role[w] = PosTag::kVerb;
  const auto data = generate_dataset(tiny_spec());
  std::size_t checked = 0;
  for (const auto& c : data.captions) {
    REQUIRE(c.tokens.size() == c.pos_tags.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto it = role.find(c.tokens[i]);
      if (it == role.end()) continue;
      CHECK(c.pos_tags[i] == it->second);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("identities differ in two attributes unless they are confusers") {
  auto spec = tiny_spec();
  spec.n_identities = 60;
  spec.confuser_rate = 0.0;
  const auto data = generate_dataset(spec);
  for (std::size_t i = 0; i < data.identities.size(); ++i)
    for (std::size_t j = i + 1; j < data.identities.size(); ++j)
      CHECK(attribute_differences(data.identities[i], data.identities[j]) >= 2);

  spec.confuser_rate = 0.2;
  const auto mixed = generate_dataset(spec);
  std::size_t confusers = 0;
  for (std::size_t i = 0; i < mixed.identities.size(); ++i) {
    if (!mixed.confuser[i]) continue;
    ++confusers;
    bool has_twin = false;
    for (std::size_t j = 0; j < mixed.identities.size(); ++j)
      if (!mixed.confuser[j] && attribute_differences(mixed.identities[i], mixed.identities[j]) == 1) has_twin = true;
    CHECK(has_twin);
  }
  CHECK(confusers == 12);
}

TEST_CASE("catalog too small is an input error") {
  auto spec = tiny_spec();
  spec.catalog.genders = {"man"};
  spec.catalog.upper_types = {"shirt"};
  spec.catalog.lower_types = {"pants"};
  spec.catalog.colors = {"red"};
  spec.catalog.accessories = {"bag", "hat"};
  spec.catalog.actions = {"standing", "walking"};
  spec.confuser_rate = 0.0;
  CHECK_THROWS_AS(generate_dataset(spec), InputError);
}

TEST_CASE("identity splits are disjoint and cover everything") {
  const auto s = split_identities(200, 0.1, 0.25, 4);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 50);
  CHECK(s.train.size() == 130);
  std::set<std::uint32_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 200);
  CHECK_THROWS_AS(split_identities(10, 0.6, 0.5, 1), InputError);

  const auto data = generate_dataset(tiny_spec());
  const auto sub = subset(data, {2, 5});
  CHECK(sub.images.size() == 4);
  CHECK(sub.captions.size() == 8);
  for (const auto& c : sub.captions) CHECK(sub.images[*c.image_index].identity_id == c.identity_id);
}

TEST_CASE("dataset directory round trip") {
  const auto spec = tiny_spec();
  const auto data = generate_dataset(spec);
  const auto dir = scratch("dataset");
  save_dataset(data, spec.catalog, dir.string());
  const auto back = load_dataset(dir.string());
  CHECK(back.images == data.images);
  CHECK(back.captions == data.captions);
  CHECK(back.identities == data.identities);
  CHECK(back.confuser == data.confuser);
}

// ---------------------------------------------------------------- config

TEST_CASE("config json round trip, strict keys, fingerprint") {
  auto c = tiny_config();
  c.toggles.cmr = false;
  c.dcc.k = 3;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_fingerprint(back) == config_fingerprint(c));

  auto threads = c;
  threads.threads = 8;
  CHECK(config_fingerprint(threads) == config_fingerprint(c));
  auto reseeded = c;
  reseeded.seed = 12;
  CHECK(config_fingerprint(reseeded) != config_fingerprint(c));
  CHECK(config_fingerprint(c).size() == 16);

  auto j = to_json(c);
  j["learning_rate"] = 0.1;
  CHECK_THROWS_AS(train_config_from_json(j), InputError);
  auto nested = to_json(c);
  nested["toggles"]["imr"] = true;
  CHECK_THROWS_AS(train_config_from_json(nested), InputError);
  auto bad = to_json(c);
  bad["lr_start"] = 1.0;
  CHECK_THROWS_AS(train_config_from_json(bad), InputError);
  CHECK(train_config_from_json(Json::object()).batch_size == 32);
}

TEST_CASE("fnv1a matches published vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("synthetic spec json round trip") {
  auto s = tiny_spec();
  s.catalog.colors = {"red", "blue"};
  const auto back = synthetic_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  auto j = to_json(s);
  j["extra"] = 1;
  CHECK_THROWS_AS(synthetic_spec_from_json(j), InputError);
}

// ---------------------------------------------------------------- model and checkpoint

TEST_CASE("checkpoint round trip restores every block") {
  const auto data = generate_dataset(tiny_spec());
  auto cfg = tiny_config();
  const Model a = build_model(cfg, data);
  cfg.seed = 99;
  Model b = build_model(cfg, data);
  CHECK(snapshot(a) != snapshot(b));
  const auto dir = scratch("ckpt");
  std::filesystem::create_directories(dir);
  save_checkpoint(a, (dir / "m.ckpt").string());
  load_checkpoint(b, (dir / "m.ckpt").string());
  CHECK(snapshot(a) == snapshot(b));

  save_model_dir(a, tiny_config(), (dir / "run").string());
  const auto loaded = load_model_dir((dir / "run").string());
  CHECK(snapshot(loaded.model) == snapshot(a));
  CHECK(loaded.model.vocab.words() == a.vocab.words());
}

TEST_CASE("checkpoint loading rejects foreign files") {
  const auto data = generate_dataset(tiny_spec());
  auto cfg = tiny_config();
  Model small = build_model(cfg, data);
  cfg.encoder.dim = 8;
  const Model other = build_model(cfg, data);
  const auto dir = scratch("ckpt_bad");
  std::filesystem::create_directories(dir);
  save_checkpoint(other, (dir / "other.ckpt").string());
  const auto before = snapshot(small);
  CHECK_THROWS_AS(load_checkpoint(small, (dir / "other.ckpt").string()), FormatError);
  CHECK(snapshot(small) == before);

  io::write_file((dir / "junk.ckpt").string(), {'M', 'E', 'F', 'A', 'E', 'M', 'B', '1'});
  try {
    load_checkpoint(small, (dir / "junk.ckpt").string());
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
}

// ---------------------------------------------------------------- training

TEST_CASE("batches hold distinct identities and cover every pair once") {
  const auto data = generate_dataset(tiny_spec());  // 12 ids × 4 captions
  const auto batches = make_batches(data, 6, 1);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    CHECK(b.size() >= 2);
    std::set<std::uint32_t> ids;
    for (auto c : b) ids.insert(data.captions[c].identity_id);
    CHECK(ids.size() == b.size());
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == data.captions.size());
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == data.captions.size());
  CHECK(make_batches(data, 6, 1) == batches);
  CHECK(make_batches(data, 6, 2) != batches);
}

TEST_CASE("all toggles off gives zero loss and frozen parameters") {
  const auto data = generate_dataset(tiny_spec());
  auto cfg = tiny_config();
  cfg.toggles = Toggles{false, false, false, false, false};
  Model m = build_model(cfg, data);
  const auto before = snapshot(m);
  const auto result = train(m, cfg, data);
  CHECK(snapshot(m) == before);
  for (const auto& e : result.history) CHECK(e.loss.total == 0.0);
}

TEST_CASE("total loss is the weighted sum of the enabled components") {
  const auto data = generate_dataset(tiny_spec());
  auto cfg = tiny_config();
  cfg.lambda_itc = 0.5;
  cfg.lambda_imr = 2.0;
  cfg.lambda_imc = 0.25;
  cfg.lambda_nitc = 1.5;
  cfg.lambda_ditc = 0.1;
  const Model m = build_model(cfg, data);
  TrainContext ctx(data);
  ctx.refresh_visual_negatives(m, cfg.visual_k);
  const auto batch = make_batches(data, cfg.batch_size, 4).front();
  const auto full = batch_loss(m, cfg, ctx, batch, 77);

  double sum = 0.0;
  const Toggles single[] = {{true, false, false, false, false},
                            {false, true, false, false, false},
                            {false, false, true, false, false},
                            {false, false, false, true, false},
                            {false, false, false, false, true}};
  for (const auto& t : single) {
    auto c = cfg;
    c.toggles = t;
    const auto part = batch_loss(m, c, ctx, batch, 77);
    sum += part.parts.total;
  }
  CHECK(full.parts.total == doctest::Approx(sum).epsilon(1e-6));
  const double by_parts = 0.5 * full.parts.itc + 2.0 * (full.parts.imr_t + full.parts.imr_v) +
                          0.25 * (full.parts.imc_t + full.parts.imc_v) + 1.5 * full.parts.nitc +
                          0.1 * full.parts.ditc;
  CHECK(std::abs(full.parts.total - by_parts) < 1e-6 * std::max(1.0, std::abs(by_parts)));
  CHECK(full.text_negatives > 0);
}

TEST_CASE("training is deterministic and records every epoch") {
  const auto data = generate_dataset(tiny_spec());
  const auto cfg = tiny_config();
  Model a = build_model(cfg, data), b = build_model(cfg, data);
  const auto ra = train(a, cfg, data, &data);
  const auto rb = train(b, cfg, data, &data);
  CHECK(ra.history == rb.history);
  CHECK(ra.history.size() == cfg.epochs);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(snapshot(a) != snapshot(build_model(cfg, data)));
  CHECK(std::isfinite(ra.history.back().loss.total));
}

TEST_CASE("a non-finite loss aborts with the epoch and step") {
  const auto data = generate_dataset(tiny_spec());
  auto cfg = tiny_config();
  cfg.lambda_itc = 1e300;  // overflows float
  Model m = build_model(cfg, data);
  try {
    train(m, cfg, data);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch 1 step") != std::string::npos);
  }
}

// ---------------------------------------------------------------- probes and ablation

TEST_CASE("top nouns are masked everywhere") {
  using P = PosTag;
  const std::vector<Caption> caps = {
      caption_of({"man", "in", "red", "shirt", "and", "pants"}, {P::kNoun, P::kPrep, P::kAdj, P::kNoun, P::kConj, P::kNoun}),
      caption_of({"man", "with", "shirt", "and", "pants"}, {P::kNoun, P::kPrep, P::kNoun, P::kConj, P::kNoun}),
      caption_of({"man", "with", "bag"}, {P::kNoun, P::kPrep, P::kNoun}),
      caption_of({"walking", "slowly"}, {P::kVerb, P::kOther}),
  };
  // brute-force frequency count
  std::map<std::string, int> freq;
  for (const auto& c : caps)
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.pos_tags[i] == P::kNoun) ++freq[c.tokens[i]];
  CHECK(freq["man"] == 3);
  CHECK(freq["pants"] == 2);
  CHECK(freq["shirt"] == 2);
  CHECK(freq["bag"] == 1);

  const auto r = mask_topk_nouns(caps, 3);
  CHECK(r.masked_words == std::vector<std::string>{"man", "pants", "shirt"});
  CHECK_FALSE(r.fewer_than_k);
  CHECK(r.captions[0].text() == "<unk> in red <unk> and <unk>");
  CHECK(r.captions[2].text() == "<unk> with bag");
  CHECK(r.captions[3] == caps[3]);
  CHECK(mask_words(r.captions, r.masked_words) == r.captions);
}

TEST_CASE("masking with fewer nouns than k masks all and warns") {
  using P = PosTag;
  const std::vector<Caption> caps = {caption_of({"red", "hat"}, {P::kAdj, P::kNoun})};
  std::ostringstream warn;
  const auto r = mask_topk_nouns(caps, 3, &warn);
  CHECK(r.fewer_than_k);
  CHECK(r.captions[0].text() == "red <unk>");
  CHECK(warn.str().find("warning") != std::string::npos);
}

TEST_CASE("noun frequency ties break lexicographically") {
  using P = PosTag;
  const std::vector<Caption> caps = {caption_of({"zebra", "apple", "mango"}, {P::kNoun, P::kNoun, P::kNoun})};
  CHECK(top_k_nouns(caps, 2) == std::vector<std::string>{"apple", "mango"});
}

TEST_CASE("ablation grid mirrors the nine component rows") {
  const auto rows = table4_rows();
  REQUIRE(rows.size() == 9);
  auto bits = [](const Toggles& t) {
    return std::string{char('0' + t.imr_t), char('0' + t.imr_v), char('0' + t.cmr), char('0' + t.dcc)};
  };
  const std::vector<std::string> expected = {"0000", "1000", "0100", "0010", "0001",
                                             "1100", "1110", "1101", "1111"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(bits(rows[i].toggles) == expected[i]);
    CHECK(rows[i].toggles.base_itc);
  }
  CHECK(rows.front().name == "0");
  CHECK(rows.back().name == "VIII");
}

TEST_CASE("baseline row is a plain global-alignment run") {
  const auto data = generate_dataset(tiny_spec());
  auto cfg = tiny_config();
  cfg.epochs = 1;
  const auto results = run_ablation(cfg, {table4_rows().front()}, data, nullptr, data);
  auto plain = cfg;
  plain.toggles = Toggles{true, false, false, false, false};
  Model m = build_model(plain, data);
  train(m, plain, data);
  auto report = evaluate_model(m, data);
  report.config_fingerprint = config_fingerprint(plain);
  report.seed = plain.seed;
  CHECK(results.front().report == report);
  const auto tsv = ablation_tsv(results);
  CHECK(tsv.rfind("row\timr_t\timr_v\tcmr\tdcc\trank1\trank5\trank10\tmap\n", 0) == 0);
  CHECK(tsv.find("\n0\t0\t0\t0\t0\t") != std::string::npos);
}

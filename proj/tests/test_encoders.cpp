#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mefa/encoders/bank.hpp"
#include "mefa/encoders/encoder.hpp"
#include "mefa/errors.hpp"
#include "mefa/io/binary.hpp"
#include "mefa/numerics/gradcheck.hpp"
#include "mefa/numerics/ops.hpp"

using namespace mefa;
using namespace mefa::num;

namespace {

ImageGrid noisy_image(std::size_t h, std::size_t w, std::uint32_t id, std::uint64_t seed) {
  ImageGrid img(h, w, 3, id);
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.values) v = u(rng);
  return img;
}

Caption caption(std::initializer_list<const char*> words, std::uint32_t id = 0) {
  LexiconTagger tagger;
  Caption c;
  c.identity_id = id;
  for (const char* w : words) {
    c.tokens.emplace_back(w);
    c.pos_tags.push_back(tagger.tag(w));
  }
  return c;
}

template <typename T>
bool equal_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mefa_test_" + name)).string();
}

}  // namespace

TEST_CASE("image encoder layout: 32x32, P=8 gives 16 locals and one global") {
  EncoderConfig cfg;
  cfg.dim = 16;
  Rng rng(1);
  ImageEncoder<float> enc(cfg, rng);
  const auto item = enc.encode(noisy_image(32, 32, 7, 3));
  CHECK(item.locals.shape() == Shape{16, 16});
  CHECK(item.global_feat.shape() == Shape{16});
  CHECK(item.identity_id == 7);
}

TEST_CASE("patch size must divide the image") {
  EncoderConfig cfg;
  cfg.patch = 5;
  Rng rng(1);
  CHECK_THROWS_AS(ImageEncoder<float>(cfg, rng), DimensionError);
  CHECK_THROWS_AS(validate_image(ImageGrid(30, 32, 3, 0), 8), DimensionError);

  EncoderConfig ok;
  ok.dim = 8;
  Rng rng2(1);
  ImageEncoder<float> enc(ok, rng2);
  CHECK_THROWS_AS(enc.encode(ImageGrid(24, 32, 3, 0)), DimensionError);
}

TEST_CASE("zero weights except the global slot give constant rows") {
  EncoderConfig cfg;
  cfg.dim = 8;
  cfg.depth = 1;
  Rng rng(5);
  ImageEncoder<double> enc(cfg, rng);
  for (auto& [name, p] : enc.parameters()) {
    if (name == "image.global_slot") continue;
    std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  }
  const auto a = enc.encode(ImageGrid(32, 32, 3, 0));
  for (std::size_t r = 0; r < a.locals.rows(); ++r) {
    for (std::size_t c = 0; c < a.locals.cols(); ++c) CHECK(a.locals.at(r, c) == a.locals.at(0, c));
  }
  const auto b = enc.encode(ImageGrid(32, 32, 3, 0));
  CHECK(equal_values(a.locals, b.locals));
  CHECK(equal_values(a.global_feat, b.global_feat));
}

TEST_CASE("encoders are deterministic for a fixed seed") {
  EncoderConfig cfg;
  cfg.dim = 16;
  Rng r1(42), r2(42);
  ImageEncoder<float> e1(cfg, r1), e2(cfg, r2);
  const auto img = noisy_image(32, 32, 1, 9);
  const auto a = e1.encode(img);
  const auto b = e2.encode(img);
  CHECK(equal_values(a.locals, b.locals));
  CHECK(equal_values(a.global_feat, b.global_feat));

  const auto cap = caption({"the", "man", "wears", "a", "red", "shirt"});
  const auto vocab = Vocabulary::from_captions({cap});
  Rng t1(42), t2(42);
  TextEncoder<float> te1(cfg, vocab.size(), t1), te2(cfg, vocab.size(), t2);
  const auto x = te1.encode(cap, vocab);
  const auto y = te2.encode(cap, vocab);
  CHECK(equal_values(x.locals, y.locals));
  CHECK(equal_values(x.global_feat, y.global_feat));
  CHECK(equal_values(x.locals, te1.encode(cap, vocab).locals));
}

TEST_CASE("batched encoding matches per-item encoding") {
  EncoderConfig cfg;
  cfg.dim = 16;
  Rng rng(3);
  ImageEncoder<double> enc(cfg, rng);
  std::vector<ImageGrid> imgs = {noisy_image(32, 32, 0, 1), noisy_image(32, 32, 1, 2), noisy_image(32, 32, 2, 3)};
  const auto batch = enc.encode(imgs);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto single = enc.encode(imgs[i]);
    const auto item = batch.item(i);
    for (std::size_t k = 0; k < single.locals.size(); ++k) CHECK(item.locals[k] == doctest::Approx(single.locals[k]).epsilon(1e-12));
    for (std::size_t k = 0; k < single.global_feat.size(); ++k) CHECK(item.global_feat[k] == doctest::Approx(single.global_feat[k]).epsilon(1e-12));
  }

  const std::vector<Caption> caps = {caption({"a", "man", "walks"}, 0), caption({"woman", "holds", "a", "blue", "bag"}, 1)};
  const auto vocab = Vocabulary::from_captions(caps);
  TextEncoder<double> te(cfg, vocab.size(), rng);
  const auto tb = te.encode(caps, vocab);
  CHECK(tb.local_count(0) == 3);
  CHECK(tb.local_count(1) == 5);
  const auto single = te.encode(caps[1], vocab);
  for (std::size_t k = 0; k < single.locals.size(); ++k) CHECK(tb.locals_of(1)[k] == doctest::Approx(single.locals[k]).epsilon(1e-12));
}

TEST_CASE("text encoder: token count, truncation, unknown words, empty caption") {
  EncoderConfig cfg;
  cfg.dim = 8;
  cfg.max_tokens = 4;
  const auto five = caption({"the", "man", "holds", "a", "bag"});
  const auto vocab = Vocabulary::from_captions({five});
  Rng rng(1);
  TextEncoder<float> enc(cfg, vocab.size(), rng);
  const auto t = enc.encode(five, vocab);
  CHECK(t.locals.rows() == 4);
  CHECK(t.truncated);

  EncoderConfig wide = cfg;
  wide.max_tokens = 77;
  Rng rng2(1);
  TextEncoder<float> enc2(wide, vocab.size(), rng2);
  const auto full = enc2.encode(five, vocab);
  CHECK(full.locals.rows() == 5);
  CHECK_FALSE(full.truncated);

  const auto odd = caption({"the", "zebra", "holds", "a", "bag"});
  CHECK(vocab.id("zebra") == Vocabulary::kUnk);
  CHECK(enc2.encode(odd, vocab).locals.rows() == 5);

  Caption empty;
  CHECK_THROWS_AS(enc2.encode(empty, vocab), InputError);
}

TEST_CASE("gradients flow through both encoders") {
  EncoderConfig cfg;
  cfg.dim = 4;
  cfg.depth = 1;
  cfg.patch = 4;
  cfg.image_height = 8;
  cfg.image_width = 4;
  cfg.max_tokens = 6;
  GradCheckOptions opts;
  opts.tol = 1e-4;

  Rng rng(11);
  ImageEncoder<double> ienc(cfg, rng);
  const auto img = noisy_image(8, 4, 0, 17);
  const auto target = randn<double>({cfg.dim}, rng, 1.0);
  std::vector<Tensor<double>> iparams;
  for (auto& [name, p] : ienc.parameters()) iparams.push_back(p);
  const auto irep = check_gradient(
      [&] {
        const auto e = ienc.encode(img);
        return add(cosine_similarity(e.global_feat, target), mean(e.locals));
      },
      iparams, opts);
  CHECK(irep.pass);
  CHECK(irep.max_rel_err < 1e-4);

  const auto cap = caption({"man", "holds", "red", "bag"});
  const auto vocab = Vocabulary::from_captions({cap});
  TextEncoder<double> tenc(cfg, vocab.size(), rng);
  std::vector<Tensor<double>> tparams;
  for (auto& [name, p] : tenc.parameters()) tparams.push_back(p);
  const auto trep = check_gradient(
      [&] {
        const auto e = tenc.encode(cap, vocab);
        return add(cosine_similarity(e.global_feat, target), mean(mul(e.locals, e.locals)));
      },
      tparams, opts);
  CHECK(trep.pass);
  CHECK(trep.max_rel_err < 1e-4);
}

TEST_CASE("bank round trip is bit exact") {
  EncoderConfig cfg;
  cfg.dim = 8;
  Rng rng(2);
  ImageEncoder<float> enc(cfg, rng);
  std::vector<ImageGrid> imgs = {noisy_image(32, 32, 4, 1), noisy_image(32, 32, 4, 2), noisy_image(32, 32, 9, 3)};
  const auto bank = EmbeddingBank::from_batch(enc.encode(imgs), Modality::kImage);
  CHECK(bank.positions_of(4) == std::vector<std::size_t>{0, 1});
  CHECK(bank.positions_of(9) == std::vector<std::size_t>{2});
  CHECK(bank.positions_of(1).empty());

  const auto path = temp_path("bank.bin");
  save_bank(bank, path);
  const auto loaded = load_bank(path);
  CHECK(loaded == bank);
  CHECK(loaded.modality() == Modality::kImage);
  std::filesystem::remove(path);
}

TEST_CASE("bank format errors") {
  EmbeddingBank bank(Modality::kText, 2);
  bank.add(BankItem{3, 1, {1.0f, 2.0f}, {3.0f, 4.0f}});
  auto bytes = serialize_bank(bank);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_bank(bad_magic), FormatError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  try {
    deserialize_bank(truncated);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 8);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  auto bad_version = bytes;
  bad_version[8] = 2;
  CHECK_THROWS_AS(deserialize_bank(bad_version), FormatError);
}

TEST_CASE("empty bank is a valid file") {
  EmbeddingBank bank(Modality::kImage, 16);
  const auto path = temp_path("empty_bank.bin");
  save_bank(bank, path);
  CHECK(std::filesystem::file_size(path) == 8 + 16);
  const auto loaded = load_bank(path);
  CHECK(loaded.empty());
  CHECK(loaded.dim() == 16);
  std::filesystem::remove(path);
}

TEST_CASE("image archive round trip and value checks") {
  std::vector<ImageGrid> imgs = {noisy_image(8, 8, 1, 1), noisy_image(8, 8, 2, 2)};
  const auto path = temp_path("imgs.bin");
  save_images(path, imgs);
  CHECK(load_images(path) == imgs);
  std::filesystem::remove(path);

  ImageGrid bad(8, 8, 3, 0);
  bad.values[5] = 1.5f;
  CHECK_THROWS_AS(validate_image(bad, 4), InputError);
}

TEST_CASE("caption jsonl round trip and tagging") {
  const auto c = caption({"the", "man", "wears", "a", "red", "shirt"}, 3);
  CHECK(c.pos_tags == std::vector<PosTag>{PosTag::kDet, PosTag::kNoun, PosTag::kVerb, PosTag::kDet, PosTag::kAdj, PosTag::kNoun});
  auto d = c;
  d.image_index = 5;
  const auto path = temp_path("caps.jsonl");
  write_captions_jsonl(path, {c, d});
  const auto back = read_captions_jsonl(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == c);
  CHECK(back[1] == d);
  std::filesystem::remove(path);

  CHECK(tokenize("A man, walking.") == std::vector<std::string>{"a", "man", ",", "walking", "."});
}

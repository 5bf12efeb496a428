#include "mefa/harness/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <system_error>

#include "json.hpp"
#include "mefa/errors.hpp"
#include "mefa/numerics/random.hpp"

namespace mefa::harness {

using num::Rng;

namespace {

struct Rgb {
  float r, g, b;
  Rgb scaled(float s) const { return {r * s, g * s, b * s}; }
};

constexpr Rgb kSkin{0.90f, 0.72f, 0.60f};
constexpr Rgb kShoe{0.10f, 0.08f, 0.08f};

Rgb color_of(const std::string& name) {
  static const std::map<std::string, Rgb> table = {
      {"red", {0.85f, 0.10f, 0.10f}},   {"blue", {0.10f, 0.20f, 0.85f}},   {"green", {0.10f, 0.65f, 0.20f}},
      {"yellow", {0.95f, 0.85f, 0.10f}}, {"black", {0.05f, 0.05f, 0.05f}},  {"white", {0.97f, 0.97f, 0.97f}},
      {"gray", {0.50f, 0.50f, 0.50f}},   {"purple", {0.50f, 0.10f, 0.60f}}, {"orange", {1.00f, 0.55f, 0.05f}},
      {"pink", {1.00f, 0.60f, 0.75f}},   {"brown", {0.45f, 0.28f, 0.10f}}};
  if (const auto it = table.find(name); it != table.end()) return it->second;
  // unknown names get a stable color from their hash
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return {static_cast<float>(h & 0xff) / 255.0f, static_cast<float>((h >> 8) & 0xff) / 255.0f,
          static_cast<float>((h >> 16) & 0xff) / 255.0f};
}

class Canvas {
 public:
  Canvas(ImageGrid& img, int shift) : img_(img), shift_(shift) {}
  void fill(int y0, int y1, int x0, int x1, Rgb c) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(y, x, c);
  }
  void set(int y, int x, Rgb c) {
    x += shift_;
    if (y < 0 || x < 0 || y >= static_cast<int>(img_.height) || x >= static_cast<int>(img_.width)) return;
    img_.at(y, x, 0) = c.r;
    img_.at(y, x, 1) = c.g;
    img_.at(y, x, 2) = c.b;
  }

 private:
  ImageGrid& img_;
  int shift_;
};

struct Token {
  std::string word;
  PosTag tag;
};

void add_words(std::vector<Token>& out, std::initializer_list<Token> words) { out.insert(out.end(), words); }

}  // namespace

AttributeCatalog AttributeCatalog::standard() {
  AttributeCatalog c;
  c.genders = {"man", "woman", "boy", "girl"};
  c.upper_types = {"shirt", "jacket", "coat", "vest", "sweater", "hoodie"};
  c.lower_types = {"pants", "shorts", "skirt", "jeans"};
  c.colors = {"red", "blue", "green", "yellow", "black", "white", "gray", "purple", "orange", "pink", "brown"};
  c.accessories = {"bag", "backpack", "hat", "umbrella", "scarf"};
  c.actions = {"standing", "walking", "running", "waving"};
  return c;
}

std::array<std::size_t, 7> AttributeCatalog::sizes() const {
  return {genders.size(), upper_types.size(), colors.size(), lower_types.size(),
          colors.size(),  accessories.size(), actions.size()};
}

std::size_t attribute_differences(const PersonAttributes& a, const PersonAttributes& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < kAttributeCount; ++i) d += a[i] != b[i];
  return d;
}

ImageGrid render_person(const PersonAttributes& attrs, const AttributeCatalog& cat, const RenderVariation& variation,
                        std::uint32_t identity_id, std::size_t height, std::size_t width) {
  // Geometry is laid out for 32×32; other sizes clip. Shape rules cycle when
  // the catalog has more entries than there are distinct drawings.
  ImageGrid img(height, width, 3, identity_id);
  const Rgb bg{0.60f * variation.background, 0.75f * variation.background, 0.65f * variation.background};
  Canvas canvas(img, variation.shift_x);
  for (int y = 0; y < static_cast<int>(height); ++y)
    for (int x = 0; x < static_cast<int>(width); ++x) canvas.set(y, x - variation.shift_x, bg);

  const int cx = 16;
  const Rgb upper = color_of(cat.colors[attrs[kUpperColor] % cat.colors.size()]);
  const Rgb lower = color_of(cat.colors[attrs[kLowerColor] % cat.colors.size()]);
  const std::size_t upper_type = attrs[kUpperType] % 6;
  const std::size_t lower_type = attrs[kLowerType] % 4;
  const std::size_t action = attrs[kAction] % 4;

  // legs and shoes; action sets the stride
  const int stride = action == 1 ? 1 : action == 2 ? 2 : 0;
  const int leg_top = lower_type == 1 ? 23 : lower_type == 2 ? 25 : 18;
  for (int y = 18; y <= 29; ++y) {
    const int spread = y >= 24 ? stride : 0;
    const Rgb c = y >= leg_top ? (lower_type == 1 || lower_type == 2 ? kSkin : lower) : lower;
    canvas.fill(y, y, cx - 4 - spread, cx - 1 - spread, c);
    canvas.fill(y, y, cx + spread, cx + 3 + spread, c);
  }
  canvas.fill(30, 31, cx - 4 - stride, cx - 1 - stride, kShoe);
  canvas.fill(30, 31, cx + stride, cx + 3 + stride, kShoe);
  if (lower_type == 1) canvas.fill(18, 22, cx - 4, cx + 3, lower);
  if (lower_type == 2) {
    for (int y = 18; y <= 24; ++y) canvas.fill(y, y, cx - 5 - (y - 18) / 2, cx + 4 + (y - 18) / 2, lower);
  }
  if (lower_type == 3) canvas.fill(18, 29, cx - 1, cx, lower.scaled(0.55f));

  // torso and arms
  const bool long_sleeves = upper_type == 1 || upper_type == 2 || upper_type == 4 || upper_type == 5;
  const int torso_bottom = upper_type == 2 ? 21 : 17;
  canvas.fill(8, torso_bottom, cx - 5, cx + 4, upper);
  for (int side : {-1, 1}) {
    const int x0 = side < 0 ? cx - 7 : cx + 5;
    const bool raised = action == 3 && side > 0;
    if (raised) {
      canvas.fill(2, 7, x0, x0 + 1, long_sleeves ? upper : kSkin);
      canvas.fill(1, 1, x0, x0 + 1, kSkin);
      canvas.fill(8, 9, x0, x0 + 1, upper_type == 3 ? kSkin : upper);
      continue;
    }
    const int sleeve_end = upper_type == 3 ? 7 : long_sleeves ? 15 : 10;
    canvas.fill(8, sleeve_end, x0, x0 + 1, upper);
    canvas.fill(sleeve_end + 1, 16, x0, x0 + 1, kSkin);
  }
  if (upper_type == 1) canvas.fill(8, torso_bottom, cx - 1, cx - 1, {0.15f, 0.15f, 0.15f});
  if (upper_type == 4) canvas.fill(12, 12, cx - 5, cx + 4, upper.scaled(0.6f));

  // head and hair by gender
  const std::size_t gender = attrs[kGender] % 4;
  const bool child = gender >= 2;
  const int head_top = child ? 4 : 3;
  canvas.fill(head_top, 7, cx - 3, cx + 2, kSkin);
  const Rgb hair = child ? Rgb{0.75f, 0.60f, 0.20f} : (gender == 0 ? Rgb{0.10f, 0.07f, 0.05f} : Rgb{0.40f, 0.25f, 0.10f});
  canvas.fill(head_top - 1, head_top, cx - 3, cx + 2, hair);
  if (gender == 1 || gender == 3) {
    const int hair_end = gender == 1 ? 10 : 12;
    canvas.fill(head_top - 1, hair_end, cx - 4, cx - 4, hair);
    canvas.fill(head_top - 1, hair_end, cx + 3, cx + 3, hair);
  }
  if (upper_type == 5) {
    canvas.fill(head_top, 7, cx - 4, cx - 4, upper);
    canvas.fill(head_top, 7, cx + 3, cx + 3, upper);
  }

  switch (attrs[kAccessory] % 5) {
    case 0:  // bag
      canvas.fill(15, 19, cx + 7, cx + 10, {0.30f, 0.20f, 0.10f});
      canvas.fill(9, 14, cx + 7, cx + 7, {0.30f, 0.20f, 0.10f});
      break;
    case 1:  // backpack
      canvas.fill(9, 16, cx - 10, cx - 8, {0.30f, 0.35f, 0.15f});
      break;
    case 2:  // hat
      canvas.fill(0, head_top - 1, cx - 4, cx + 3, {0.12f, 0.12f, 0.20f});
      break;
    case 3:  // umbrella
      canvas.fill(0, 0, cx - 9, cx + 8, {0.20f, 0.20f, 0.70f});
      canvas.fill(1, 10, cx - 8, cx - 8, {0.20f, 0.20f, 0.20f});
      break;
    default:  // scarf
      canvas.fill(8, 9, cx - 3, cx + 2, {0.80f, 0.10f, 0.40f});
      break;
  }

  if (variation.noise > 0.0f) {
    Rng rng(variation.noise_seed);
    for (auto& v : img.values) {
      v += variation.noise * static_cast<float>(2.0 * num::draw_unit(rng) - 1.0);
    }
  }
  for (auto& v : img.values) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

std::size_t caption_template_count() { return 4; }

Caption describe_person(const PersonAttributes& attrs, const AttributeCatalog& catalog, std::size_t template_index,
                        std::uint32_t identity_id) {
  const Token g{catalog.genders.at(attrs[kGender]), PosTag::kNoun};
  const Token ut{catalog.upper_types.at(attrs[kUpperType]), PosTag::kNoun};
  const Token uc{catalog.colors.at(attrs[kUpperColor]), PosTag::kAdj};
  const Token lt{catalog.lower_types.at(attrs[kLowerType]), PosTag::kNoun};
  const Token lc{catalog.colors.at(attrs[kLowerColor]), PosTag::kAdj};
  const Token acc{catalog.accessories.at(attrs[kAccessory]), PosTag::kNoun};
  const Token act{catalog.actions.at(attrs[kAction]), PosTag::kVerb};
  const Token a{"a", PosTag::kDet}, the{"the", PosTag::kDet}, this_{"this", PosTag::kDet};
  const Token and_{"and", PosTag::kConj}, while_{"while", PosTag::kConj};
  const Token with{"with", PosTag::kPrep}, in{"in", PosTag::kPrep};
  const Token is{"is", PosTag::kVerb}, wearing{"wearing", PosTag::kVerb}, has{"has", PosTag::kVerb};
  const Token comma{",", PosTag::kOther}, period{".", PosTag::kOther};

  std::vector<Token> t;
  switch (template_index % caption_template_count()) {
    case 0:
      add_words(t, {a, g, wearing, a, uc, ut, and_, lc, lt, is, act, with, a, acc});
      break;
    case 1:
      add_words(t, {the, g, in, a, uc, ut, and_, lc, lt, is, act, period, the, g, has, a, acc});
      break;
    case 2:
      add_words(t, {g, with, a, acc, comma, act, comma, wearing, lc, lt, and_, a, uc, ut});
      break;
    default:
      add_words(t, {this_, g, is, act, while_, wearing, a, uc, ut, comma, lc, lt, and_, a, acc});
      break;
  }
  Caption c;
  c.identity_id = identity_id;
  for (auto& tok : t) {
    c.tokens.push_back(tok.word);
    c.pos_tags.push_back(tok.tag);
  }
  return c;
}

void SyntheticSpec::validate() const {
  if (n_identities < 1 || images_per_identity < 1 || captions_per_image < 1) {
    throw InputError("synthetic spec: counts must be at least 1");
  }
  if (!(noise >= 0.0 && noise < 1.0)) throw InputError("synthetic spec: noise must lie in [0, 1)");
  if (!(confuser_rate >= 0.0 && confuser_rate < 1.0)) throw InputError("synthetic spec: confuser_rate must lie in [0, 1)");
  for (std::size_t s : catalog.sizes()) {
    if (s == 0) throw InputError("synthetic spec: every catalog list needs at least one entry");
  }
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const auto sizes = spec.catalog.sizes();
  Rng rng(spec.seed);
  Dataset data;
  const auto n_confusers = static_cast<std::size_t>(std::llround(spec.confuser_rate * spec.n_identities));
  const std::size_t n_base = spec.n_identities - n_confusers;
  if (n_base == 0 && spec.n_identities > 0) throw InputError("synthetic spec: confuser_rate leaves no base identities");

  constexpr std::size_t kMaxTries = 20000;
  for (std::size_t i = 0; i < n_base; ++i) {
    bool placed = false;
    for (std::size_t tries = 0; tries < kMaxTries && !placed; ++tries) {
      PersonAttributes p;
      for (std::size_t a = 0; a < kAttributeCount; ++a) p[a] = num::draw_index(rng, sizes[a]);
      placed = std::all_of(data.identities.begin(), data.identities.end(),
                           [&](const PersonAttributes& q) { return attribute_differences(p, q) >= 2; });
      if (placed) data.identities.push_back(p);
    }
    if (!placed) {
      throw InputError("attribute catalog too small for " + std::to_string(spec.n_identities) + " identities");
    }
  }
  for (std::size_t i = 0; i < n_confusers; ++i) {
    bool placed = false;
    for (std::size_t tries = 0; tries < kMaxTries && !placed; ++tries) {
      PersonAttributes p = data.identities[num::draw_index(rng, n_base)];
      const std::size_t a = num::draw_index(rng, kAttributeCount);
      if (sizes[a] < 2) continue;
      p[a] = (p[a] + 1 + num::draw_index(rng, sizes[a] - 1)) % sizes[a];
      placed = std::all_of(data.identities.begin(), data.identities.end(),
                           [&](const PersonAttributes& q) { return attribute_differences(p, q) >= 1; });
      if (placed) data.identities.push_back(p);
    }
    if (!placed) throw InputError("attribute catalog too small for the requested confusers");
  }
  data.confuser.assign(n_base, false);
  data.confuser.resize(spec.n_identities, true);

  const std::size_t n_templates = caption_template_count();
  for (std::uint32_t id = 0; id < spec.n_identities; ++id) {
    for (std::size_t k = 0; k < spec.images_per_identity; ++k) {
      RenderVariation v;
      v.shift_x = static_cast<int>(num::draw_index(rng, 5)) - 2;
      v.background = static_cast<float>(0.55 + 0.45 * num::draw_unit(rng));
      v.noise = static_cast<float>(spec.noise);
      v.noise_seed = num::mix_seed(spec.seed, data.images.size());
      const auto image_index = static_cast<std::uint32_t>(data.images.size());
      data.images.push_back(render_person(data.identities[id], spec.catalog, v, id, spec.height, spec.width));
      const std::size_t first = num::draw_index(rng, n_templates);
      for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
        Caption cap = describe_person(data.identities[id], spec.catalog, (first + c) % n_templates, id);
        cap.image_index = image_index;
        data.captions.push_back(std::move(cap));
      }
    }
  }
  return data;
}

void save_dataset(const Dataset& data, const AttributeCatalog& catalog, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_images((std::filesystem::path(dir) / "images.bin").string(), data.images);
  write_captions_jsonl((std::filesystem::path(dir) / "captions.jsonl").string(), data.captions);
  nlohmann::ordered_json j;
  j["catalog"] = {{"genders", catalog.genders},         {"upper_types", catalog.upper_types},
                  {"lower_types", catalog.lower_types}, {"colors", catalog.colors},
                  {"accessories", catalog.accessories}, {"actions", catalog.actions}};
  auto& ids = j["identities"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < data.identities.size(); ++i) {
    ids.push_back({{"attributes", data.identities[i]}, {"confuser", i < data.confuser.size() && data.confuser[i]}});
  }
  std::ofstream out(std::filesystem::path(dir) / "identities.json", std::ios::trunc);
  if (!out) throw std::system_error(errno, std::generic_category(), "cannot write identities.json in " + dir);
  out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  Dataset data;
  data.images = load_images((std::filesystem::path(dir) / "images.bin").string());
  data.captions = read_captions_jsonl((std::filesystem::path(dir) / "captions.jsonl").string());
  const auto meta = std::filesystem::path(dir) / "identities.json";
  if (std::filesystem::exists(meta)) {
    std::ifstream in(meta);
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("identities")) {
      data.identities.push_back(e.at("attributes").get<PersonAttributes>());
      data.confuser.push_back(e.at("confuser").get<bool>());
    }
  }
  for (const auto& c : data.captions) {
    if (c.image_index && *c.image_index >= data.images.size()) {
      throw InputError("caption refers to image " + std::to_string(*c.image_index) + " but only " +
                       std::to_string(data.images.size()) + " images exist");
    }
  }
  return data;
}

Split split_identities(std::size_t n_identities, double val_fraction, double test_fraction, std::uint64_t seed) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0) {
    throw InputError("split fractions must be non-negative and sum below 1");
  }
  std::vector<std::uint32_t> ids(n_identities);
  for (std::uint32_t i = 0; i < n_identities; ++i) ids[i] = i;
  Rng rng(num::mix_seed(seed, 0x5011));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[num::draw_index(rng, i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n_identities));
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * n_identities));
  Split s;
  s.test.assign(ids.begin(), ids.begin() + n_test);
  s.val.assign(ids.begin() + n_test, ids.begin() + n_test + n_val);
  s.train.assign(ids.begin() + n_test + n_val, ids.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

Dataset subset(const Dataset& data, const std::vector<std::uint32_t>& identity_ids) {
  const std::set<std::uint32_t> keep(identity_ids.begin(), identity_ids.end());
  Dataset out;
  out.identities = data.identities;
  out.confuser = data.confuser;
  std::map<std::uint32_t, std::uint32_t> remap;
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    if (!keep.count(data.images[i].identity_id)) continue;
    remap[static_cast<std::uint32_t>(i)] = static_cast<std::uint32_t>(out.images.size());
    out.images.push_back(data.images[i]);
  }
  for (const auto& c : data.captions) {
    if (!keep.count(c.identity_id)) continue;
    Caption copy = c;
    if (c.image_index) {
      const auto it = remap.find(*c.image_index);
      copy.image_index = it == remap.end() ? std::nullopt : std::optional<std::uint32_t>(it->second);
    }
    out.captions.push_back(std::move(copy));
  }
  return out;
}

}  // namespace mefa::harness

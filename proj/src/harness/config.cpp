#include "mefa/harness/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <system_error>

#include "mefa/errors.hpp"

namespace mefa::harness {

namespace {

// Reads known keys from an object and rejects the rest.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw InputError(where_ + ": expected a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw InputError(where_ + ": unknown key '" + key + "'");
    }
  }
  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where_ + "." + key + ": " + e.what());
    }
  }
  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json encoder_json(const EncoderConfig& e) {
  return {{"dim", e.dim},
          {"depth", e.depth},
          {"patch", e.patch},
          {"image_height", e.image_height},
          {"image_width", e.image_width},
          {"channels", e.channels},
          {"max_tokens", e.max_tokens},
          {"mlp_ratio", e.mlp_ratio}};
}

EncoderConfig encoder_from(const Json& j) {
  EncoderConfig e;
  Reader r(j, "encoder");
  r.get("dim", e.dim);
  r.get("depth", e.depth);
  r.get("patch", e.patch);
  r.get("image_height", e.image_height);
  r.get("image_width", e.image_width);
  r.get("channels", e.channels);
  r.get("max_tokens", e.max_tokens);
  r.get("mlp_ratio", e.mlp_ratio);
  return e;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw InputError("batch_size must be at least 2");
  if (epochs < 1) throw InputError("epochs must be at least 1");
  if (!(lr_start > 0.0 && lr_start <= lr_end)) throw InputError("need 0 < lr_start <= lr_end");
  for (double w : {lambda_itc, lambda_imr, lambda_imc, lambda_nitc, lambda_ditc}) {
    if (!(w >= 0.0)) throw InputError("loss weights must be non-negative");
  }
  if (!(tau_itc > 0.0) || !(cmr.tau_n > 0.0)) throw InputError("temperatures must be positive");
  if (visual_k < 1) throw InputError("visual_k must be at least 1");
  if (encoder.dim < 1 || encoder.depth < 1) throw InputError("encoder dim and depth must be positive");
  imr.validate();
  dcc.validate();
}

Json to_json(const Toggles& t) {
  return {{"base_itc", t.base_itc}, {"imr_t", t.imr_t}, {"imr_v", t.imr_v}, {"cmr", t.cmr}, {"dcc", t.dcc}};
}

Toggles toggles_from_json(const Json& j) {
  Toggles t;
  Reader r(j, "toggles");
  r.get("base_itc", t.base_itc);
  r.get("imr_t", t.imr_t);
  r.get("imr_v", t.imr_v);
  r.get("cmr", t.cmr);
  r.get("dcc", t.dcc);
  return t;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["encoder"] = encoder_json(c.encoder);
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr_start"] = c.lr_start;
  j["lr_end"] = c.lr_end;
  j["lambda_itc"] = c.lambda_itc;
  j["lambda_imr"] = c.lambda_imr;
  j["lambda_imc"] = c.lambda_imc;
  j["lambda_nitc"] = c.lambda_nitc;
  j["lambda_ditc"] = c.lambda_ditc;
  j["tau_itc"] = c.tau_itc;
  j["toggles"] = to_json(c.toggles);
  j["imr"] = {{"alpha", c.imr.alpha}, {"gamma", c.imr.gamma}, {"d_as_similarity", c.imr.d_as_similarity}};
  j["visual_k"] = c.visual_k;
  j["cmr"] = {{"tau_n", c.cmr.tau_n}, {"shared_fusion", c.cmr.shared_fusion}};
  j["dcc"] = {{"k", c.dcc.k}, {"band_lo", c.dcc.band_lo}, {"band_hi", c.dcc.band_hi}, {"tau", c.dcc.tau}};
  j["lamb"] = {{"beta1", c.lamb.beta1}, {"beta2", c.lamb.beta2}, {"eps", c.lamb.eps},
               {"weight_decay", c.lamb.weight_decay}};
  j["val_fraction"] = c.val_fraction;
  j["test_fraction"] = c.test_fraction;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  {
    Reader r(j, "config");
    if (const auto* e = r.child("encoder")) c.encoder = encoder_from(*e);
    r.get("batch_size", c.batch_size);
    r.get("epochs", c.epochs);
    r.get("lr_start", c.lr_start);
    r.get("lr_end", c.lr_end);
    r.get("lambda_itc", c.lambda_itc);
    r.get("lambda_imr", c.lambda_imr);
    r.get("lambda_imc", c.lambda_imc);
    r.get("lambda_nitc", c.lambda_nitc);
    r.get("lambda_ditc", c.lambda_ditc);
    r.get("tau_itc", c.tau_itc);
    if (const auto* t = r.child("toggles")) c.toggles = toggles_from_json(*t);
    if (const auto* m = r.child("imr")) {
      Reader s(*m, "imr");
      s.get("alpha", c.imr.alpha);
      s.get("gamma", c.imr.gamma);
      s.get("d_as_similarity", c.imr.d_as_similarity);
    }
    r.get("visual_k", c.visual_k);
    if (const auto* m = r.child("cmr")) {
      Reader s(*m, "cmr");
      s.get("tau_n", c.cmr.tau_n);
      s.get("shared_fusion", c.cmr.shared_fusion);
    }
    if (const auto* m = r.child("dcc")) {
      Reader s(*m, "dcc");
      s.get("k", c.dcc.k);
      s.get("band_lo", c.dcc.band_lo);
      s.get("band_hi", c.dcc.band_hi);
      s.get("tau", c.dcc.tau);
    }
    if (const auto* m = r.child("lamb")) {
      Reader s(*m, "lamb");
      s.get("beta1", c.lamb.beta1);
      s.get("beta2", c.lamb.beta2);
      s.get("eps", c.lamb.eps);
      s.get("weight_decay", c.lamb.weight_decay);
    }
    r.get("val_fraction", c.val_fraction);
    r.get("test_fraction", c.test_fraction);
    r.get("seed", c.seed);
    r.get("threads", c.threads);
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) { return train_config_from_json(read_json_file(path)); }

Json to_json(const SyntheticSpec& s) {
  Json j;
  j["n_identities"] = s.n_identities;
  j["images_per_identity"] = s.images_per_identity;
  j["captions_per_image"] = s.captions_per_image;
  j["confuser_rate"] = s.confuser_rate;
  j["noise"] = s.noise;
  j["seed"] = s.seed;
  j["height"] = s.height;
  j["width"] = s.width;
  j["catalog"] = {{"genders", s.catalog.genders},         {"upper_types", s.catalog.upper_types},
                  {"lower_types", s.catalog.lower_types}, {"colors", s.catalog.colors},
                  {"accessories", s.catalog.accessories}, {"actions", s.catalog.actions}};
  return j;
}

SyntheticSpec synthetic_spec_from_json(const Json& j) {
  SyntheticSpec s;
  {
    Reader r(j, "spec");
    r.get("n_identities", s.n_identities);
    r.get("images_per_identity", s.images_per_identity);
    r.get("captions_per_image", s.captions_per_image);
    r.get("confuser_rate", s.confuser_rate);
    r.get("noise", s.noise);
    r.get("seed", s.seed);
    r.get("height", s.height);
    r.get("width", s.width);
    if (const auto* c = r.child("catalog")) {
      Reader k(*c, "catalog");
      k.get("genders", s.catalog.genders);
      k.get("upper_types", s.catalog.upper_types);
      k.get("lower_types", s.catalog.lower_types);
      k.get("colors", s.catalog.colors);
      k.get("accessories", s.catalog.accessories);
      k.get("actions", s.catalog.actions);
    }
  }
  s.validate();
  return s;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_fingerprint(const TrainConfig& config) {
  Json j = to_json(config);
  j.erase("threads");
  return fnv1a_hex(j.dump());
}

void write_manifest(const std::string& dir, const std::string& command, std::uint64_t seed,
                    const std::string& fingerprint, const Json& extra) {
  Json j;
  j["tool"] = "mefa";
  j["version"] = kVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config_fingerprint"] = fingerprint;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::filesystem::create_directories(dir);
  write_json_file((std::filesystem::path(dir) / "manifest.json").string(), j);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::system_error(errno, std::generic_category(), "cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace mefa::harness

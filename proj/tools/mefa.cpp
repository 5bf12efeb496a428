// mefa command-line front end.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mefa/encoders/bank.hpp"
#include "mefa/errors.hpp"
#include "mefa/evalret/evalret.hpp"
#include "mefa/harness/config.hpp"
#include "mefa/harness/evaluate.hpp"
#include "mefa/harness/model.hpp"
#include "mefa/harness/synthetic.hpp"
#include "mefa/harness/train.hpp"
#include "mefa/imr/perturb.hpp"
#include "mefa/numerics/kernels.hpp"
#include "mefa/numerics/ops.hpp"
#include "mefa/numerics/random.hpp"

namespace fs = std::filesystem;
using namespace mefa;
using namespace mefa::harness;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void apply_threads(const TrainConfig& config) {
  if (config.threads > 0) num::kernels::set_threads(static_cast<int>(config.threads));
}

Split read_split(const std::string& path) {
  const auto j = read_json_file(path);
  Split s;
  s.train = j.at("train").get<std::vector<std::uint32_t>>();
  s.val = j.at("val").get<std::vector<std::uint32_t>>();
  s.test = j.at("test").get<std::vector<std::uint32_t>>();
  return s;
}

Dataset pick_split(const Dataset& data, const std::string& ckpt, const std::string& which) {
  if (which == "all") return data;
  const auto split_path = fs::path(ckpt) / "split.json";
  if (!fs::exists(split_path)) throw InputError("checkpoint has no split.json; use --split all");
  const auto s = read_split(split_path.string());
  if (which == "train") return subset(data, s.train);
  if (which == "val") return subset(data, s.val);
  return subset(data, s.test);
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

int gen_data(const GenArgs& a) {
  SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_json_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  const auto data = generate_dataset(spec);
  save_dataset(data, spec.catalog, a.out);
  write_json_file((fs::path(a.out) / "spec.json").string(), to_json(spec));
  write_manifest(a.out, "gen-data", spec.seed, fnv1a_hex(to_json(spec).dump()),
                 {{"images", data.images.size()}, {"captions", data.captions.size()}});
  std::cout << "wrote " << data.images.size() << " images and " << data.captions.size() << " captions for "
            << data.identities.size() << " identities to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

int train_cmd(const TrainArgs& a) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.epochs) config.epochs = *a.epochs;
  config.validate();
  apply_threads(config);
  const auto data = load_dataset(a.data);
  const auto split = split_dataset(data, config);
  Model model = build_model(config, split.train);
  const auto result = train(model, config, split.train, &split.val, &std::cout);
  save_model_dir(model, config, a.out);
  Json history = Json::array();
  for (const auto& e : result.history) history.push_back(to_json(e));
  write_json_file((fs::path(a.out) / "history.json").string(), history);
  write_json_file((fs::path(a.out) / "split.json").string(),
                  {{"train", split.ids.train}, {"val", split.ids.val}, {"test", split.ids.test}});
  write_manifest(a.out, "train", config.seed, config_fingerprint(config),
                 {{"data", fs::absolute(a.data).string()}, {"steps", result.steps}});
  std::cout << "saved checkpoint to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, data, report, format = "json", split = "test", gallery_out, similarity_out;
  std::size_t mask_nouns = 0;
  bool image_queries = false;
};

int eval_cmd(const EvalArgs& a) {
  auto loaded = load_model_dir(a.ckpt);
  apply_threads(loaded.config);
  const auto data = pick_split(load_dataset(a.data), a.ckpt, a.split);
  auto queries = data.captions;
  if (a.mask_nouns > 0) {
    auto masked = mask_topk_nouns(queries, a.mask_nouns, &std::cerr);
    std::cerr << "masked nouns:";
    for (const auto& w : masked.masked_words) std::cerr << ' ' << w;
    std::cerr << '\n';
    queries = std::move(masked.captions);
  }
  const auto gallery = encode_image_bank(loaded.model, data.images);
  const auto query_bank = encode_text_bank(loaded.model, queries);
  const auto sim = a.image_queries ? evalret::similarity_matrix(gallery, query_bank)
                                   : evalret::similarity_matrix(query_bank, gallery);
  auto report = evalret::evaluate(sim);
  report.config_fingerprint = config_fingerprint(loaded.config);
  report.seed = loaded.config.seed;
  const auto format = a.format == "tsv" ? evalret::ReportFormat::kTsv : evalret::ReportFormat::kJson;
  if (a.report.empty()) {
    std::cout << (format == evalret::ReportFormat::kTsv ? evalret::report_tsv(report) : evalret::report_json(report))
              << '\n';
  } else {
    evalret::emit_report(report, a.report, format);
  }
  if (!a.gallery_out.empty()) save_bank(gallery, a.gallery_out);
  if (!a.similarity_out.empty()) evalret::save_similarity(sim, a.similarity_out);
  std::cerr << "rank1 " << report.rank1 << " rank5 " << report.rank5 << " rank10 " << report.rank10 << " map "
            << report.map << '\n';
  return 0;
}

// ---------------------------------------------------------------- perturb

struct PerturbArgs {
  std::string in, out, adjectives, verbs, stop_words;
  int tier = 1;
  std::uint64_t seed = 0;
};

int perturb_cmd(const PerturbArgs& a) {
  auto captions = read_captions_jsonl(a.in);
  if (!a.stop_words.empty()) {
    const auto stop = read_word_list(a.stop_words);
    for (auto& c : captions) {
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (std::find(stop.begin(), stop.end(), c.tokens[i]) != stop.end()) c.pos_tags[i] = PosTag::kOther;
      }
    }
  }
  auto lexicon = imr::Lexicon::from_captions(captions);
  if (!a.adjectives.empty()) lexicon.add(PosTag::kAdj, read_word_list(a.adjectives));
  if (!a.verbs.empty()) lexicon.add(PosTag::kVerb, read_word_list(a.verbs));
  const auto stats = imr::CorpusStats::from_captions(captions);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  std::size_t skipped = 0;
  for (std::size_t line = 0; line < captions.size(); ++line) {
    const std::uint64_t seed = num::mix_seed(a.seed, line + 1);
    const auto neg = imr::perturb_with_fallback(captions[line], static_cast<imr::Tier>(a.tier), lexicon, stats, seed);
    if (!neg) {
      ++skipped;
      continue;
    }
    nlohmann::ordered_json j;
    j["tokens"] = neg->caption.tokens;
    std::vector<std::string> tags;
    for (auto t : neg->caption.pos_tags) tags.emplace_back(to_string(t));
    j["pos_tags"] = tags;
    j["identity_id"] = neg->caption.identity_id;
    if (neg->caption.image_index) j["image_index"] = *neg->caption.image_index;
    j["tier"] = static_cast<int>(neg->tier);
    j["seed"] = seed;
    j["source_line"] = line + 1;
    out << j.dump() << '\n';
  }
  std::cerr << "perturbed " << captions.size() - skipped << " captions, skipped " << skipped << '\n';
  return 0;
}

// ---------------------------------------------------------------- retrieve

struct RetrieveArgs {
  std::string ckpt, query, gallery;
  std::size_t topk = 10;
};

int retrieve_cmd(const RetrieveArgs& a) {
  const auto loaded = load_model_dir(a.ckpt);
  const auto gallery = load_bank(a.gallery);
  if (gallery.modality() != Modality::kImage) throw InputError("gallery bank must hold image embeddings");
  const Caption query = LexiconTagger().tag_text(a.query, 0);
  if (query.tokens.empty()) throw InputError("query has no tokens");
  EmbeddingBank q = encode_text_bank(loaded.model, {query});
  const auto sim = evalret::similarity_matrix(q, gallery);
  const auto ranked = evalret::rank_gallery(sim);
  std::cout << "rank\tgallery_index\tidentity_id\tsimilarity\n";
  for (std::size_t r = 0; r < std::min(a.topk, ranked[0].size()); ++r) {
    const std::size_t g = ranked[0][r];
    std::cout << r + 1 << '\t' << g << '\t' << gallery[g].identity_id << '\t' << sim.at(0, g) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string grid, data, out;
  std::vector<double> dcc_band;
  std::optional<std::size_t> dcc_k;
};

std::vector<AblationRow> rows_from_json(const Json& j) {
  const auto standard = table4_rows();
  std::vector<AblationRow> rows;
  for (const auto& r : j) {
    if (r.is_string()) {
      const auto it = std::find_if(standard.begin(), standard.end(),
                                   [&](const AblationRow& s) { return s.name == r.get<std::string>(); });
      if (it == standard.end()) throw InputError("unknown ablation row '" + r.get<std::string>() + "'");
      rows.push_back(*it);
    } else {
      rows.push_back({r.at("name").get<std::string>(), toggles_from_json(r.at("toggles"))});
    }
  }
  return rows;
}

int ablate_cmd(const AblateArgs& a) {
  const auto grid = a.grid.empty() ? Json::object() : read_json_file(a.grid);
  for (const auto& [key, value] : grid.items()) {
    if (key != "config" && key != "rows" && key != "data" && key != "out") {
      throw InputError("grid: unknown key '" + key + "'");
    }
  }
  TrainConfig config = grid.contains("config") ? train_config_from_json(grid["config"]) : TrainConfig{};
  if (a.dcc_band.size() == 2) {
    config.dcc.band_lo = a.dcc_band[0];
    config.dcc.band_hi = a.dcc_band[1];
  }
  if (a.dcc_k) config.dcc.k = *a.dcc_k;
  config.validate();
  apply_threads(config);
  const auto rows = grid.contains("rows") ? rows_from_json(grid["rows"]) : table4_rows();
  const std::string data_dir = !a.data.empty() ? a.data : grid.value("data", std::string());
  const std::string out = !a.out.empty() ? a.out : grid.value("out", std::string());
  if (data_dir.empty()) throw InputError("ablate needs --data or a \"data\" entry in the grid");
  const auto split = split_dataset(load_dataset(data_dir), config);
  const auto results = run_ablation(config, rows, split.train, &split.val, split.test, &std::cerr);
  const auto tsv = ablation_tsv(results);
  if (out.empty()) {
    std::cout << tsv;
  } else {
    write_text(out, tsv);
    write_manifest(fs::path(out).parent_path().string().empty() ? "." : fs::path(out).parent_path().string(),
                   "ablate", config.seed, config_fingerprint(config), {{"rows", rows.size()}});
  }
  return 0;
}

// ---------------------------------------------------------------- profile

struct ProfileArgs {
  std::string ckpt, data, out, split = "test";
};

int profile_cmd(const ProfileArgs& a) {
  const auto loaded = load_model_dir(a.ckpt);
  const auto data = pick_split(load_dataset(a.data), a.ckpt, a.split);
  const auto tsv = profiles_tsv(relevance_profiles(loaded.model, data));
  if (a.out.empty()) {
    std::cout << tsv;
  } else {
    write_text(a.out, tsv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mefa: cross-modal person retrieval with intra-modal, refinement and clue-correction paths"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic person/caption dataset");
  g->add_option("--spec", gen.spec, "synthetic spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--seed", gen.seed, "override the spec seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "training config JSON")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "checkpoint directory")->required();
  t->add_option("--seed", tr.seed, "override the config seed");
  t->add_option("--epochs", tr.epochs, "override the epoch count");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate text-to-image retrieval");
  e->add_option("--ckpt", ev.ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--data", ev.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--report", ev.report, "report path (stdout when omitted)");
  e->add_option("--format", ev.format, "report format")->check(CLI::IsMember({"json", "tsv"}));
  e->add_option("--split", ev.split, "identity split to evaluate")->check(CLI::IsMember({"test", "val", "train", "all"}));
  e->add_option("--mask-nouns", ev.mask_nouns, "mask the K most frequent nouns in the queries");
  e->add_option("--gallery-out", ev.gallery_out, "save the image gallery bank");
  e->add_option("--similarity-out", ev.similarity_out, "save the query x gallery similarity matrix");
  e->add_flag("--image-queries", ev.image_queries, "reverse direction: image queries against the caption gallery");

  PerturbArgs pe;
  auto* p = app.add_subcommand("perturb", "write perturbed hard-negative captions as JSONL");
  p->add_option("--in", pe.in, "caption JSONL")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pe.out, "output JSONL (stdout when omitted)");
  p->add_option("--tier", pe.tier, "first tier to try")->required()->check(CLI::IsMember({1, 2, 3}));
  p->add_option("--seed", pe.seed, "base seed")->required();
  p->add_option("--adjectives", pe.adjectives, "extra substitution adjectives, one per line")->check(CLI::ExistingFile);
  p->add_option("--verbs", pe.verbs, "extra substitution verbs, one per line")->check(CLI::ExistingFile);
  p->add_option("--stop-words", pe.stop_words, "words never perturbed, one per line")->check(CLI::ExistingFile);

  RetrieveArgs re;
  auto* r = app.add_subcommand("retrieve", "rank a saved image gallery for a text query");
  r->add_option("--ckpt", re.ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--query", re.query, "query text")->required();
  r->add_option("--gallery", re.gallery, "image bank from eval --gallery-out")->required()->check(CLI::ExistingFile);
  r->add_option("--topk", re.topk, "results to print");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate each component combination");
  a->add_option("--grid", ab.grid, "grid JSON {config, rows, data, out}")->check(CLI::ExistingFile);
  a->add_option("--data", ab.data, "dataset directory")->check(CLI::ExistingDirectory);
  a->add_option("--out", ab.out, "TSV output path (stdout when omitted)");
  a->add_option("--dcc-band", ab.dcc_band, "cue percentile band LO HI")->expected(2);
  a->add_option("--dcc-k", ab.dcc_k, "number of cue words");

  ProfileArgs pr;
  auto* f = app.add_subcommand("profile", "export word relevance profiles as TSV");
  f->add_option("--ckpt", pr.ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  f->add_option("--data", pr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  f->add_option("--out", pr.out, "TSV path (stdout when omitted)");
  f->add_option("--split", pr.split, "identity split")->check(CLI::IsMember({"test", "val", "train", "all"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return gen_data(gen);
    if (*t) return train_cmd(tr);
    if (*e) return eval_cmd(ev);
    if (*p) return perturb_cmd(pe);
    if (*r) return retrieve_cmd(re);
    if (*a) return ablate_cmd(ab);
    if (*f) return profile_cmd(pr);
  } catch (const FormatError& err) {
    std::cerr << "format error: " << err.what() << '\n';
    return 3;
  } catch (const InputError& err) {
    std::cerr << "input error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}

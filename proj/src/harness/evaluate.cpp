#include "mefa/harness/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "mefa/dcc/dcc.hpp"
#include "mefa/errors.hpp"
#include "mefa/harness/train.hpp"

namespace mefa::harness {

evalret::RetrievalReport evaluate_model(const Model& model, const std::vector<ImageGrid>& gallery,
                                        const std::vector<Caption>& queries) {
  if (gallery.empty() || queries.empty()) throw InputError("evaluation needs a gallery and queries");
  const auto g = encode_image_bank(model, gallery);
  const auto q = encode_text_bank(model, queries);
  return evalret::evaluate(evalret::similarity_matrix(q, g));
}

evalret::RetrievalReport evaluate_model(const Model& model, const Dataset& data) {
  return evaluate_model(model, data.images, data.captions);
}

std::vector<std::string> top_k_nouns(const std::vector<Caption>& captions, std::size_t k) {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.pos_tags[i] == PosTag::kNoun && c.tokens[i] != Vocabulary::kUnkToken) ++counts[c.tokens[i]];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

std::vector<Caption> mask_words(const std::vector<Caption>& captions, const std::vector<std::string>& words) {
  const std::set<std::string> masked(words.begin(), words.end());
  std::vector<Caption> out = captions;
  for (auto& c : out) {
    for (auto& t : c.tokens) {
      if (masked.count(t)) t = Vocabulary::kUnkToken;
    }
  }
  return out;
}

MaskResult mask_topk_nouns(const std::vector<Caption>& captions, std::size_t k, std::ostream* warn) {
  MaskResult r;
  r.masked_words = top_k_nouns(captions, k);
  r.fewer_than_k = r.masked_words.size() < k;
  if (r.fewer_than_k && warn) {
    *warn << "warning: only " << r.masked_words.size() << " distinct nouns, fewer than k=" << k
          << "; masking all of them\n";
  }
  r.captions = mask_words(captions, r.masked_words);
  return r;
}

std::vector<ProfileEntry> relevance_profiles(const Model& model, const Dataset& data) {
  num::NoGradScope<float> no_grad;
  std::vector<ProfileEntry> out;
  for (std::size_t c = 0; c < data.captions.size(); ++c) {
    const auto& cap = data.captions[c];
    if (!cap.image_index) throw InputError("caption " + std::to_string(c) + " has no image_index");
    const auto txt = model.text.encode(cap, model.vocab);
    const auto img = model.image.encode(data.images.at(*cap.image_index));
    for (const auto& r : dcc::word_relevance_profile(txt.locals, img.locals)) {
      out.push_back({c, cap.tokens[r.token_index], cap.pos_tags[r.token_index], r.relevance});
    }
  }
  return out;
}

std::string profiles_tsv(const std::vector<ProfileEntry>& entries) {
  std::string s = "caption\ttoken\tpos_tag\trelevance\n";
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "\t%.6f\n", e.relevance);
    s += std::to_string(e.caption) + "\t" + e.token + "\t" + std::string(to_string(e.pos)) + buf;
  }
  return s;
}

std::vector<AblationRow> table4_rows() {
  auto row = [](const char* name, bool t, bool v, bool c, bool d) {
    return AblationRow{name, Toggles{true, t, v, c, d}};
  };
  return {row("0", false, false, false, false), row("I", true, false, false, false),
          row("II", false, true, false, false), row("III", false, false, true, false),
          row("IV", false, false, false, true), row("V", true, true, false, false),
          row("VI", true, true, true, false),   row("VII", true, true, false, true),
          row("VIII", true, true, true, true)};
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const std::vector<AblationRow>& rows,
                                         const Dataset& train_data, const Dataset* val, const Dataset& test,
                                         std::ostream* log) {
  if (rows.empty()) throw InputError("ablation grid has no rows");
  std::vector<AblationResult> out;
  for (const auto& row : rows) {
    TrainConfig config = base;
    config.toggles = row.toggles;
    if (log) *log << "== row " << row.name << '\n';
    Model model = build_model(config, train_data);
    train(model, config, train_data, val, log);
    auto report = evaluate_model(model, test);
    report.config_fingerprint = config_fingerprint(config);
    report.seed = config.seed;
    out.push_back({row, std::move(report)});
  }
  return out;
}

std::string ablation_tsv(const std::vector<AblationResult>& results) {
  std::string s = "row\timr_t\timr_v\tcmr\tdcc\trank1\trank5\trank10\tmap\n";
  char buf[128];
  for (const auto& r : results) {
    const auto& t = r.row.toggles;
    std::snprintf(buf, sizeof buf, "\t%d\t%d\t%d\t%d\t%.4f\t%.4f\t%.4f\t%.4f\n", t.imr_t, t.imr_v, t.cmr, t.dcc,
                  r.report.rank1, r.report.rank5, r.report.rank10, r.report.map);
    s += r.row.name + buf;
  }
  return s;
}

}  // namespace mefa::harness

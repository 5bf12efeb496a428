#include "mefa/encoders/caption.hpp"

#include <cctype>
#include <fstream>
#include <system_error>

#include "json.hpp"
#include "mefa/errors.hpp"

namespace mefa {

std::string_view to_string(PosTag tag) {
  switch (tag) {
    case PosTag::kNoun: return "NOUN";
    case PosTag::kVerb: return "VERB";
    case PosTag::kAdj: return "ADJ";
    case PosTag::kDet: return "DET";
    case PosTag::kConj: return "CONJ";
    case PosTag::kPrep: return "PREP";
    case PosTag::kOther: return "OTHER";
  }
  return "OTHER";
}

PosTag parse_pos_tag(std::string_view s) {
  for (PosTag t : {PosTag::kNoun, PosTag::kVerb, PosTag::kAdj, PosTag::kDet, PosTag::kConj,
                   PosTag::kPrep, PosTag::kOther}) {
    if (to_string(t) == s) return t;
  }
  throw InputError("unknown part-of-speech tag '" + std::string(s) + "'");
}

std::string Caption::text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

void validate_caption(const Caption& caption, std::size_t max_tokens) {
  if (caption.tokens.empty()) throw InputError("caption has no tokens");
  if (caption.tokens.size() != caption.pos_tags.size()) {
    throw InputError("caption has " + std::to_string(caption.tokens.size()) + " tokens but " +
                     std::to_string(caption.pos_tags.size()) + " tags");
  }
  if (caption.tokens.size() > max_tokens) {
    throw InputError("caption longer than " + std::to_string(max_tokens) + " tokens");
  }
}

std::size_t token_differences(const Caption& a, const Caption& b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::size_t diff = std::max(a.size(), b.size()) - n;
  for (std::size_t i = 0; i < n; ++i) diff += a.tokens[i] != b.tokens[i];
  return diff;
}

LexiconTagger::LexiconTagger() {
  det_ = {"a", "an", "the", "this", "that", "these", "those", "his", "her", "their", "its", "some"};
  conj_ = {"and", "or", "but", "while", "yet", "so"};
  prep_ = {"in", "on", "with", "at", "of", "from", "to", "over", "under", "near", "by",
           "into", "onto", "behind", "beside", "across", "along", "around", "without"};
  adj_ = {"red", "blue", "green", "yellow", "black", "white", "gray", "grey", "purple",
          "orange", "pink", "brown", "small", "large", "big", "long", "short", "tall",
          "dark", "light", "bright", "striped", "plain", "young", "old"};
  verb_ = {"walking", "standing", "running", "riding", "sitting", "holding", "carrying",
           "wearing", "looking", "talking", "waiting", "crossing", "pushing", "pulling",
           "walks", "stands", "runs", "rides", "holds", "carries", "wears", "sees", "is", "are"};
  other_ = {".", ",", ";", ":", "!", "?"};
}

void LexiconTagger::add_words(PosTag tag, const std::vector<std::string>& words) {
  auto* set = [&]() -> std::unordered_set<std::string>* {
    switch (tag) {
      case PosTag::kDet: return &det_;
      case PosTag::kConj: return &conj_;
      case PosTag::kPrep: return &prep_;
      case PosTag::kAdj: return &adj_;
      case PosTag::kVerb: return &verb_;
      case PosTag::kOther: return &other_;
      case PosTag::kNoun: return nullptr;
    }
    return nullptr;
  }();
  if (set == nullptr) return;  // nouns are the default class
  set->insert(words.begin(), words.end());
}

PosTag LexiconTagger::tag(std::string_view word) const {
  const std::string w(word);
  if (det_.count(w)) return PosTag::kDet;
  if (conj_.count(w)) return PosTag::kConj;
  if (prep_.count(w)) return PosTag::kPrep;
  if (adj_.count(w)) return PosTag::kAdj;
  if (verb_.count(w)) return PosTag::kVerb;
  if (other_.count(w)) return PosTag::kOther;
  if (!w.empty() && std::isdigit(static_cast<unsigned char>(w[0]))) return PosTag::kOther;
  return PosTag::kNoun;
}

Caption LexiconTagger::tag_text(std::string_view text, std::uint32_t identity_id) const {
  Caption c;
  c.identity_id = identity_id;
  c.tokens = tokenize(text);
  for (const auto& t : c.tokens) c.pos_tags.push_back(tag(t));
  return c;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (std::ispunct(u) && ch != '-' && ch != '\'') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur += static_cast<char>(std::tolower(u));
    }
  }
  flush();
  return out;
}

std::vector<std::string> read_word_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    line = line.substr(b);
    if (line.empty() || line[0] == '#') continue;
    words.push_back(line);
  }
  return words;
}

std::vector<Caption> read_captions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path);
  std::vector<Caption> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Caption c;
      c.tokens = j.at("tokens").get<std::vector<std::string>>();
      for (const auto& t : j.at("pos_tags")) c.pos_tags.push_back(parse_pos_tag(t.get<std::string>()));
      c.identity_id = j.at("identity_id").get<std::uint32_t>();
      if (j.contains("image_index")) c.image_index = j["image_index"].get<std::uint32_t>();
      if (c.tokens.size() != c.pos_tags.size() || c.tokens.empty()) {
        throw InputError("tokens and pos_tags must be non-empty and of equal length");
      }
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_captions_jsonl(const std::string& path, const std::vector<Caption>& captions) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::system_error(errno, std::generic_category(), "cannot write " + path);
  for (const auto& c : captions) {
    nlohmann::json j;
    j["tokens"] = c.tokens;
    std::vector<std::string> tags;
    for (auto t : c.pos_tags) tags.emplace_back(to_string(t));
    j["pos_tags"] = tags;
    j["identity_id"] = c.identity_id;
    if (c.image_index) j["image_index"] = *c.image_index;
    out << j.dump() << '\n';
  }
}

}  // namespace mefa

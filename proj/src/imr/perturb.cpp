#include "mefa/imr/perturb.hpp"

#include <algorithm>

#include "mefa/errors.hpp"
#include "mefa/numerics/random.hpp"

namespace mefa::imr {

using num::Rng;

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::kNounSwap: return "noun_swap";
    case Tier::kSubstitute: return "substitute";
    case Tier::kMaskFill: return "mask_fill";
    case Tier::kVisual: return "visual";
  }
  return "unknown";
}

void Lexicon::add(PosTag tag, const std::vector<std::string>& list) {
  auto& w = words[tag];
  w.insert(w.end(), list.begin(), list.end());
  std::sort(w.begin(), w.end());
  w.erase(std::unique(w.begin(), w.end()), w.end());
}

const std::vector<std::string>& Lexicon::of(PosTag tag) const {
  static const std::vector<std::string> kNone;
  const auto it = words.find(tag);
  return it == words.end() ? kNone : it->second;
}

Lexicon Lexicon::from_captions(const std::vector<Caption>& captions) {
  std::vector<std::string> verbs, adjs;
  for (const auto& c : captions) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.pos_tags[i] == PosTag::kVerb) verbs.push_back(c.tokens[i]);
      if (c.pos_tags[i] == PosTag::kAdj) adjs.push_back(c.tokens[i]);
    }
  }
  Lexicon lex;
  lex.add(PosTag::kVerb, verbs);
  lex.add(PosTag::kAdj, adjs);
  return lex;
}

void CorpusStats::add(const Caption& caption) {
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if (is_content(caption.pos_tags[i])) ++counts[caption.pos_tags[i]][caption.tokens[i]];
  }
}

CorpusStats CorpusStats::from_captions(const std::vector<Caption>& captions) {
  CorpusStats s;
  for (const auto& c : captions) s.add(c);
  return s;
}

std::optional<Caption> perturb_tier1_noun_swap(const Caption& caption, std::uint64_t) {
  std::vector<std::size_t> nouns;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if (caption.pos_tags[i] == PosTag::kNoun) nouns.push_back(i);
  }
  if (nouns.size() < 2) return std::nullopt;
  const std::size_t first = nouns.front();
  for (auto it = nouns.rbegin(); it != nouns.rend() && *it != first; ++it) {
    if (caption.tokens[*it] != caption.tokens[first]) {
      Caption out = caption;
      std::swap(out.tokens[first], out.tokens[*it]);
      return out;
    }
  }
  return std::nullopt;
}

std::optional<Caption> perturb_tier2_substitute(const Caption& caption, const Lexicon& lexicon, std::uint64_t seed) {
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    const PosTag t = caption.pos_tags[i];
    if (t != PosTag::kVerb && t != PosTag::kAdj) continue;
    const auto& pool = lexicon.of(t);
    if (std::any_of(pool.begin(), pool.end(), [&](const std::string& w) { return w != caption.tokens[i]; })) {
      slots.push_back(i);
    }
  }
  if (slots.empty()) return std::nullopt;
  Rng rng(seed);
  const std::size_t pos = slots[num::draw_index(rng, slots.size())];
  std::vector<std::string> options;
  for (const auto& w : lexicon.of(caption.pos_tags[pos])) {
    if (w != caption.tokens[pos]) options.push_back(w);
  }
  Caption out = caption;
  out.tokens[pos] = options[num::draw_index(rng, options.size())];
  return out;
}

std::optional<Caption> perturb_tier3_mask_fill(const Caption& caption, const CorpusStats& stats, std::uint64_t seed) {
  auto pool_of = [&](std::size_t i) {
    std::vector<std::pair<std::string, std::size_t>> pool;
    const auto it = stats.counts.find(caption.pos_tags[i]);
    if (it == stats.counts.end()) return pool;
    for (const auto& [w, n] : it->second) {
      if (w != caption.tokens[i] && n > 0) pool.emplace_back(w, n);
    }
    return pool;
  };
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if (is_content(caption.pos_tags[i]) && !pool_of(i).empty()) slots.push_back(i);
  }
  if (slots.empty()) return std::nullopt;
  Rng rng(seed);
  const std::size_t pos = slots[num::draw_index(rng, slots.size())];
  const auto pool = pool_of(pos);
  std::size_t total = 0;
  for (const auto& [w, n] : pool) total += n;
  const double u = num::draw_unit(rng) * static_cast<double>(total);
  double acc = 0.0;
  std::string fill = pool.back().first;
  for (const auto& [w, n] : pool) {
    acc += static_cast<double>(n);
    if (u < acc) {
      fill = w;
      break;
    }
  }
  Caption out = caption;
  out.tokens[pos] = fill;
  return out;
}

std::optional<TextNegative> perturb_with_fallback(const Caption& caption, Tier first, const Lexicon& lexicon,
                                                  const CorpusStats& stats, std::uint64_t seed) {
  for (int t = static_cast<int>(first); t <= 3; ++t) {
    std::optional<Caption> out;
    switch (static_cast<Tier>(t)) {
      case Tier::kNounSwap: out = perturb_tier1_noun_swap(caption, seed); break;
      case Tier::kSubstitute: out = perturb_tier2_substitute(caption, lexicon, seed); break;
      case Tier::kMaskFill: out = perturb_tier3_mask_fill(caption, stats, seed); break;
      case Tier::kVisual: break;
    }
    if (out) return TextNegative{std::move(*out), static_cast<Tier>(t)};
  }
  return std::nullopt;
}

}  // namespace mefa::imr

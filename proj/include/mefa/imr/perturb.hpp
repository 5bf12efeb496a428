#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mefa/encoders/caption.hpp"

namespace mefa::imr {

enum class Tier { kNounSwap = 1, kSubstitute = 2, kMaskFill = 3, kVisual = 4 };

std::string_view to_string(Tier tier);

/// Same-POS replacement words for tier-2 substitution, sorted and unique.
struct Lexicon {
  std::map<PosTag, std::vector<std::string>> words;

  void add(PosTag tag, const std::vector<std::string>& list);
  const std::vector<std::string>& of(PosTag tag) const;
  /// Every VERB and ADJ seen in the captions.
  static Lexicon from_captions(const std::vector<Caption>& captions);
};

/// Unigram counts per POS tag, built from training captions.
struct CorpusStats {
  std::map<PosTag, std::map<std::string, std::size_t>> counts;

  void add(const Caption& caption);
  static CorpusStats from_captions(const std::vector<Caption>& captions);
};

/// Swaps the first noun with the last noun whose word differs from it.
/// Returns nullopt when no such pair exists.
std::optional<Caption> perturb_tier1_noun_swap(const Caption& caption, std::uint64_t seed);

/// Replaces one seeded VERB/ADJ with a different lexicon word of the same tag.
std::optional<Caption> perturb_tier2_substitute(const Caption& caption, const Lexicon& lexicon, std::uint64_t seed);

/// Masks one seeded content word and fills it with a same-tag word drawn from
/// the corpus unigram distribution, original word excluded.
std::optional<Caption> perturb_tier3_mask_fill(const Caption& caption, const CorpusStats& stats, std::uint64_t seed);

struct TextNegative {
  Caption caption;
  Tier tier = Tier::kNounSwap;
};

/// Tries `first`, then each later tier in turn.
std::optional<TextNegative> perturb_with_fallback(const Caption& caption, Tier first, const Lexicon& lexicon,
                                                  const CorpusStats& stats, std::uint64_t seed);

}  // namespace mefa::imr

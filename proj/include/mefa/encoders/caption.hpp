#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace mefa {

enum class PosTag { kNoun, kVerb, kAdj, kDet, kConj, kPrep, kOther };

std::string_view to_string(PosTag tag);
/// Parses "NOUN", "VERB", ...; throws InputError on anything else.
PosTag parse_pos_tag(std::string_view s);

inline bool is_content(PosTag t) { return t == PosTag::kNoun || t == PosTag::kVerb || t == PosTag::kAdj; }

struct Caption {
  std::vector<std::string> tokens;
  std::vector<PosTag> pos_tags;
  std::uint32_t identity_id = 0;
  /// Index of the image this caption describes, when known.
  std::optional<std::uint32_t> image_index;

  std::size_t size() const { return tokens.size(); }
  std::string text() const;
  bool operator==(const Caption&) const = default;
};

/// Checks len(tokens) == len(pos_tags) >= 1 and the token limit.
void validate_caption(const Caption& caption, std::size_t max_tokens);

/// Number of positions at which two equal-length captions differ
/// (length difference counts as extra differing positions).
std::size_t token_differences(const Caption& a, const Caption& b);

/// Coarse tagger for text that arrives without tags: closed-class word lists
/// for determiners, conjunctions and prepositions, a color/size list for
/// adjectives, an action list for verbs, and NOUN for everything else.
class LexiconTagger {
 public:
  /// Built-in word lists.
  LexiconTagger();

  void add_words(PosTag tag, const std::vector<std::string>& words);
  PosTag tag(std::string_view word) const;
  Caption tag_text(std::string_view text, std::uint32_t identity_id) const;

 private:
  std::unordered_set<std::string> det_, conj_, prep_, adj_, verb_, other_;
};

/// Lowercases and splits on whitespace and punctuation.
std::vector<std::string> tokenize(std::string_view text);

/// One word per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> read_word_list(const std::string& path);

/// JSON-lines caption files: {"tokens":[...],"pos_tags":[...],"identity_id":N}
/// with an optional "image_index". Unknown fields are ignored.
std::vector<Caption> read_captions_jsonl(const std::string& path);
void write_captions_jsonl(const std::string& path, const std::vector<Caption>& captions);

}  // namespace mefa

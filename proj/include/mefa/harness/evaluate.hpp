#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mefa/evalret/evalret.hpp"
#include "mefa/harness/config.hpp"
#include "mefa/harness/model.hpp"
#include "mefa/harness/synthetic.hpp"

namespace mefa::harness {

/// Caption queries against the image gallery of the same split, compared on
/// encoder globals.
evalret::RetrievalReport evaluate_model(const Model& model, const Dataset& data);
evalret::RetrievalReport evaluate_model(const Model& model, const std::vector<ImageGrid>& gallery,
                                        const std::vector<Caption>& queries);

/// The k most frequent NOUN tokens, ties in lexicographic order. The UNK token is never counted.
std::vector<std::string> top_k_nouns(const std::vector<Caption>& captions, std::size_t k);

/// Replaces every occurrence of the given words with the UNK token.
std::vector<Caption> mask_words(const std::vector<Caption>& captions, const std::vector<std::string>& words);

struct MaskResult {
  std::vector<Caption> captions;
  std::vector<std::string> masked_words;
  bool fewer_than_k = false;
};

/// Masks the k most frequent nouns of the given captions everywhere. With
/// fewer than k distinct nouns, masks them all and writes a warning.
MaskResult mask_topk_nouns(const std::vector<Caption>& captions, std::size_t k = 3, std::ostream* warn = nullptr);

struct ProfileEntry {
  std::size_t caption = 0;
  std::string token;
  PosTag pos = PosTag::kOther;
  double relevance = 0.0;
};

/// Word relevance of every caption against its own image, most relevant first per caption.
std::vector<ProfileEntry> relevance_profiles(const Model& model, const Dataset& data);
/// Columns: caption, token, pos_tag, relevance.
std::string profiles_tsv(const std::vector<ProfileEntry>& entries);

struct AblationRow {
  std::string name;
  Toggles toggles;
};

/// The nine component combinations: baseline, each single path, then the
/// cumulative pairs and the full model.
std::vector<AblationRow> table4_rows();

struct AblationResult {
  AblationRow row;
  evalret::RetrievalReport report;
};

/// Trains each row from the same seed and initial weights on `train` and
/// evaluates on `test`. `base` supplies everything except the toggles.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const std::vector<AblationRow>& rows,
                                         const Dataset& train, const Dataset* val, const Dataset& test,
                                         std::ostream* log = nullptr);

/// Header plus one line per row: name, the four toggles as 0/1, Rank-1/5/10, mAP.
std::string ablation_tsv(const std::vector<AblationResult>& results);

}  // namespace mefa::harness

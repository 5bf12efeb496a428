#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mefa/numerics/tensor.hpp"

namespace mefa::dcc {

using num::Tensor;

struct DccParams {
  std::size_t k = 5;
  double band_lo = 40.0;  // percentiles
  double band_hi = 80.0;
  double tau = 0.07;

  void validate() const;
};

struct TokenRelevance {
  std::size_t token_index = 0;
  double relevance = 0.0;
};

/// Relevance of token j = max_i cos(v_i, t_j); sorted descending, ties by index.
template <typename T>
std::vector<TokenRelevance> word_relevance_profile(const Tensor<T>& text_locals, const Tensor<T>& image_locals);

/// Band percentile of each profile entry: 100·(number strictly more relevant)/M.
/// The most relevant token sits at 0.
std::vector<double> relevance_percentiles(const std::vector<TokenRelevance>& profile);

struct CueSelection {
  std::vector<std::size_t> word_indices;  // token positions, most relevant first
  bool fallback = false;
};

/// Top-k tokens whose percentile lies in [band_lo, band_hi]. An empty band
/// falls back to profile ranks 2..k+1 (rank 1 when M = 1).
CueSelection select_cue_words(const std::vector<TokenRelevance>& profile, const DccParams& params);

template <typename T>
struct CueState {
  CueSelection selection;
  Tensor<T> cue;  // R: mean of the selected token features, [D]
};

template <typename T>
CueState<T> build_cue_state(const std::vector<TokenRelevance>& profile, const Tensor<T>& token_feats,
                            const DccParams& params);

/// Row s of the result is the mean of rows[groups[s]]. Differentiable in `rows`.
template <typename T>
Tensor<T> pool_groups(const Tensor<T>& rows, const std::vector<std::vector<std::size_t>>& groups);

/// Mean of each row segment given by offsets (size S+1).
template <typename T>
Tensor<T> pool_segments(const Tensor<T>& rows, std::span<const std::size_t> offsets);

/// −Σ_i log[exp(cos(R_i, v̄_i)/τ) / Σ_j exp(cos(R_i, v̄_j)/τ)], summed over the batch.
template <typename T>
Tensor<T> loss_ditc(const Tensor<T>& cues, const Tensor<T>& pooled_images, T tau);

}  // namespace mefa::dcc

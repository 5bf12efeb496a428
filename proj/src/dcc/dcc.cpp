#include "mefa/dcc/dcc.hpp"

#include <algorithm>
#include <cmath>

#include "mefa/errors.hpp"
#include "mefa/numerics/ops.hpp"

namespace mefa::dcc {

using namespace num;

void DccParams::validate() const {
  if (k < 1) throw InputError("dcc: K must be at least 1");
  if (!(band_lo >= 0.0 && band_lo < band_hi && band_hi <= 100.0)) {
    throw InputError("dcc: band must satisfy 0 <= lo < hi <= 100");
  }
  if (!(tau > 0.0)) throw InputError("dcc: temperature must be positive");
}

template <typename T>
std::vector<TokenRelevance> word_relevance_profile(const Tensor<T>& text_locals, const Tensor<T>& image_locals) {
  if (text_locals.rank() != 2 || image_locals.rank() != 2) throw DimensionError("profile expects local matrices");
  const NoGradScope<T> no_grad;
  const auto sim = cosine_matrix(image_locals, text_locals);  // [n×M]
  const std::size_t n = sim.rows(), m = sim.cols();
  std::vector<TokenRelevance> profile(m);
  for (std::size_t j = 0; j < m; ++j) {
    double best = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) best = std::max(best, static_cast<double>(sim.at(i, j)));
    profile[j] = {j, best};
  }
  std::stable_sort(profile.begin(), profile.end(),
                   [](const TokenRelevance& a, const TokenRelevance& b) { return a.relevance > b.relevance; });
  return profile;
}

std::vector<double> relevance_percentiles(const std::vector<TokenRelevance>& profile) {
  const std::size_t m = profile.size();
  std::vector<double> pct(m);
  for (std::size_t a = 0; a < m; ++a) {
    std::size_t greater = 0;
    for (const auto& b : profile) greater += b.relevance > profile[a].relevance;
    pct[a] = 100.0 * static_cast<double>(greater) / static_cast<double>(m);
  }
  return pct;
}

CueSelection select_cue_words(const std::vector<TokenRelevance>& profile, const DccParams& params) {
  params.validate();
  if (profile.empty()) throw InputError("dcc: empty relevance profile");
  const auto pct = relevance_percentiles(profile);
  CueSelection sel;
  for (std::size_t r = 0; r < profile.size() && sel.word_indices.size() < params.k; ++r) {
    if (pct[r] >= params.band_lo && pct[r] <= params.band_hi) sel.word_indices.push_back(profile[r].token_index);
  }
  if (sel.word_indices.empty()) {
    sel.fallback = true;
    const std::size_t first = profile.size() == 1 ? 0 : 1;
    for (std::size_t r = first; r < profile.size() && r < first + params.k; ++r) {
      sel.word_indices.push_back(profile[r].token_index);
    }
  }
  return sel;
}

template <typename T>
CueState<T> build_cue_state(const std::vector<TokenRelevance>& profile, const Tensor<T>& token_feats,
                            const DccParams& params) {
  CueState<T> state;
  state.selection = select_cue_words(profile, params);
  state.cue = reshape(pool_groups(token_feats, {state.selection.word_indices}), {token_feats.cols()});
  return state;
}

template <typename T>
Tensor<T> pool_groups(const Tensor<T>& rows, const std::vector<std::vector<std::size_t>>& groups) {
  const std::size_t r = rows.rows();
  std::vector<T> w(groups.size() * r, T{0});
  for (std::size_t s = 0; s < groups.size(); ++s) {
    if (groups[s].empty()) throw InputError("pool_groups: empty group " + std::to_string(s));
    const T share = T{1} / static_cast<T>(groups[s].size());
    for (std::size_t i : groups[s]) {
      if (i >= r) throw DimensionError("pool_groups: row index out of range");
      w[s * r + i] += share;
    }
  }
  return matmul(Tensor<T>({groups.size(), r}, std::move(w)), rows);
}

template <typename T>
Tensor<T> pool_segments(const Tensor<T>& rows, std::span<const std::size_t> offsets) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    auto& g = groups.emplace_back();
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) g.push_back(i);
  }
  return pool_groups(rows, groups);
}

template <typename T>
Tensor<T> loss_ditc(const Tensor<T>& cues, const Tensor<T>& pooled_images, T tau) {
  if (cues.rows() < 2) throw InputError("loss_ditc needs at least 2 pairs");
  if (cues.shape() != pooled_images.shape()) {
    throw DimensionError("loss_ditc: cues " + shape_string(cues.shape()) + " vs images " +
                         shape_string(pooled_images.shape()));
  }
  if (!(tau > T(0))) throw InputError("loss_ditc: temperature must be positive");
  const std::size_t n = cues.rows();
  const auto logp = log_softmax_rows(cosine_matrix(cues, pooled_images), tau);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i * n + i;
  return scale(sum(gather_rows(reshape(logp, {n * n, 1}), diag)), T(-1));
}

#define MEFA_INSTANTIATE(T)                                                                                  \
  template std::vector<TokenRelevance> word_relevance_profile(const Tensor<T>&, const Tensor<T>&);         \
  template CueState<T> build_cue_state(const std::vector<TokenRelevance>&, const Tensor<T>&, const DccParams&); \
  template Tensor<T> pool_groups(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&);          \
  template Tensor<T> pool_segments(const Tensor<T>&, std::span<const std::size_t>);                        \
  template Tensor<T> loss_ditc(const Tensor<T>&, const Tensor<T>&, T);
MEFA_INSTANTIATE(float)
MEFA_INSTANTIATE(double)
#undef MEFA_INSTANTIATE

}  // namespace mefa::dcc

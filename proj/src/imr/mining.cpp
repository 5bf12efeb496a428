#include "mefa/imr/mining.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mefa/errors.hpp"

namespace mefa::imr {

namespace {

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

VisualNegatives mine_visual_negatives(std::span<const float> anchor_global, std::uint32_t anchor_id,
                                      const EmbeddingBank& gallery, std::size_t k) {
  if (gallery.modality() != Modality::kImage) throw InputError("visual mining needs an image gallery");
  if (anchor_global.size() != gallery.dim()) {
    throw DimensionError("anchor has " + std::to_string(anchor_global.size()) + " dims, gallery " +
                         std::to_string(gallery.dim()));
  }
  const double na = norm(anchor_global);
  if (na == 0.0) throw DegenerateInputError("visual mining: zero-norm anchor");
  std::vector<std::size_t> candidates;
  std::vector<double> sim(gallery.size(), 0.0);
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto& item = gallery[i];
    if (item.identity_id == anchor_id) continue;
    const double ng = norm(item.global_feat);
    if (ng == 0.0) throw DegenerateInputError("visual mining: zero-norm gallery item " + std::to_string(i));
    double dot = 0.0;
    for (std::size_t d = 0; d < anchor_global.size(); ++d) dot += static_cast<double>(anchor_global[d]) * item.global_feat[d];
    sim[i] = dot / (na * ng);
    candidates.push_back(i);
  }
  const std::size_t take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end(),
                    [&](std::size_t a, std::size_t b) { return sim[a] != sim[b] ? sim[a] > sim[b] : a < b; });
  VisualNegatives out;
  out.indices.assign(candidates.begin(), candidates.begin() + take);
  for (std::size_t i : out.indices) out.similarities.push_back(sim[i]);
  out.shortfall = take < k;
  return out;
}

template <typename T>
VisualNegatives mine_visual_negatives(const EncodedItem<T>& anchor, const EmbeddingBank& gallery, std::size_t k) {
  std::vector<float> g(anchor.global_feat.data().begin(), anchor.global_feat.data().end());
  return mine_visual_negatives(g, anchor.identity_id, gallery, k);
}

template VisualNegatives mine_visual_negatives(const EncodedItem<float>&, const EmbeddingBank&, std::size_t);
template VisualNegatives mine_visual_negatives(const EncodedItem<double>&, const EmbeddingBank&, std::size_t);

}  // namespace mefa::imr

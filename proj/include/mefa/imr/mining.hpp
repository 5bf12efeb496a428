#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mefa/encoders/bank.hpp"

namespace mefa::imr {

struct VisualNegatives {
  std::vector<std::size_t> indices;  // gallery positions, most similar first
  std::vector<double> similarities;
  bool shortfall = false;            // fewer than k wrong-identity items existed
};

/// Top-k gallery items by global cosine similarity to the anchor, skipping the
/// anchor's identity. Ties go to the lower gallery index.
VisualNegatives mine_visual_negatives(std::span<const float> anchor_global, std::uint32_t anchor_id,
                                      const EmbeddingBank& gallery, std::size_t k);

template <typename T>
VisualNegatives mine_visual_negatives(const EncodedItem<T>& anchor, const EmbeddingBank& gallery, std::size_t k);

}  // namespace mefa::imr

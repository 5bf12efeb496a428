#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mefa/encoders/caption.hpp"
#include "mefa/encoders/image.hpp"
#include "mefa/encoders/vocab.hpp"
#include "mefa/numerics/random.hpp"
#include "mefa/numerics/tensor.hpp"

namespace mefa {

using num::Tensor;

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t depth = 2;
  std::size_t patch = 8;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 3;
  std::size_t max_tokens = 77;
  std::size_t mlp_ratio = 2;

  std::size_t patches_per_image() const { return (image_height / patch) * (image_width / patch); }
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

/// Local features plus the global-slot feature of one image or caption.
template <typename T>
struct EncodedItem {
  Tensor<T> locals;       // [n×D] patches or [M×D] tokens
  Tensor<T> global_feat;  // [D]
  std::uint32_t identity_id = 0;
  bool truncated = false;
};

/// A batch of encoded items stored as stacked matrices.
template <typename T>
struct EncodedBatch {
  Tensor<T> globals;                  // [B×D]
  Tensor<T> locals;                   // [Σn×D]
  std::vector<std::size_t> offsets;   // B+1 row offsets into locals
  std::vector<std::uint32_t> identity_ids;
  std::vector<bool> truncated;

  std::size_t size() const { return identity_ids.size(); }
  std::size_t local_count(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  Tensor<T> locals_of(std::size_t i) const;
  Tensor<T> global_of(std::size_t i) const;
  EncodedItem<T> item(std::size_t i) const;
};

/// Pre-norm transformer block with a single attention head.
template <typename T>
struct TransformerBlock {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> w_q, w_k, w_v, w_o;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w_in, b_in, w_out, b_out;

  TransformerBlock(std::size_t dim, std::size_t hidden, num::Rng& rng);
  /// x + Attn(LN(x)) then + MLP(LN(·)), attention confined to each segment.
  Tensor<T> forward(const Tensor<T>& x, std::span<const std::size_t> offsets) const;
  void collect(NamedParams<T>& out, const std::string& prefix) const;
};

/// Patch-embedding vision encoder. Each image becomes n=(H/P)(W/P) patch rows
/// preceded by a learned global slot; the stack's output at the slot is the
/// global feature.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder(const EncoderConfig& config, num::Rng& rng);

  EncodedBatch<T> encode(std::span<const ImageGrid> images) const;
  EncodedItem<T> encode(const ImageGrid& image) const;

  NamedParams<T> parameters() const;
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  Tensor<T> patch_w_, patch_b_, global_slot_, position_;
  std::vector<TransformerBlock<T>> blocks_;
  Tensor<T> ln_gamma_, ln_beta_, proj_;
};

/// Token-embedding text encoder with the same stack layout. Unknown tokens use
/// the reserved UNK row; captions beyond max_tokens are truncated and flagged.
template <typename T>
class TextEncoder {
 public:
  TextEncoder(const EncoderConfig& config, std::size_t vocab_size, num::Rng& rng);

  EncodedBatch<T> encode(std::span<const Caption> captions, const Vocabulary& vocab) const;
  EncodedItem<T> encode(const Caption& caption, const Vocabulary& vocab) const;

  NamedParams<T> parameters() const;
  const EncoderConfig& config() const { return config_; }
  std::size_t vocab_size() const { return token_table_.dim(0); }

 private:
  EncoderConfig config_;
  Tensor<T> token_table_, global_slot_, position_;
  std::vector<TransformerBlock<T>> blocks_;
  Tensor<T> ln_gamma_, ln_beta_, proj_;
};

}  // namespace mefa

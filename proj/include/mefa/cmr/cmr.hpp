#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mefa/encoders/encoder.hpp"
#include "mefa/numerics/random.hpp"
#include "mefa/numerics/tensor.hpp"

namespace mefa::cmr {

using num::Tensor;

/// A[i,j] = exp(cos(v_i,t_j)) / Σ_{i'j'} exp(cos(v_i',t_j')), normalized over all n×M pairs.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& img_locals, const Tensor<T>& txt_locals);

template <typename T>
struct WeightedLocals {
  Tensor<T> v_hat;  // [n×D]
  Tensor<T> t_hat;  // [M×D]
};

/// Scales each local by its total attention mass: v̂_i = (Σ_j A_ij)·v_i, t̂_j = (Σ_i A_ij)·t_j.
template <typename T>
WeightedLocals<T> weight_locals(const Tensor<T>& attention, const Tensor<T>& img_locals, const Tensor<T>& txt_locals);

template <typename T>
struct FusionParams {
  Tensor<T> w_u;  // [2D×D]
  Tensor<T> w_f;  // [2D×D]
  Tensor<T> b_f;  // [D]

  static FusionParams init(std::size_t dim, num::Rng& rng);
  void collect(NamedParams<T>& out, const std::string& prefix) const;
};

/// Per row: c = local ⊕ g, output (c·W_u) ⊙ tanh(c·W_f + b_f).
template <typename T>
Tensor<T> gated_fuse(const Tensor<T>& locals_hat, const Tensor<T>& g, const FusionParams<T>& params);

struct CmrConfig {
  double tau_n = 0.07;
  bool shared_fusion = false;
};

/// Learnable parameters of the refinement path.
template <typename T>
struct CmrHead {
  CmrConfig config;
  FusionParams<T> image_fusion;
  FusionParams<T> text_fusion;   // unused when shared
  Tensor<T> image_global_proj;   // [2D×D]
  Tensor<T> text_global_proj;    // [2D×D], unused when shared

  CmrHead(std::size_t dim, const CmrConfig& config, num::Rng& rng);
  const FusionParams<T>& text_params() const { return config.shared_fusion ? image_fusion : text_fusion; }
  const Tensor<T>& text_proj() const { return config.shared_fusion ? image_global_proj : text_global_proj; }
  NamedParams<T> parameters() const;
};

template <typename T>
struct RefinedPair {
  Tensor<T> image_locals_refined;  // [n×D]
  Tensor<T> text_locals_refined;   // [M×D]
  Tensor<T> attention_matrix;      // [n×M]
  Tensor<T> g_img;                 // [D] refined global
  Tensor<T> g_txt;                 // [D] refined global
};

/// Attention weighting, gated fusion with each modality's own global, then
/// ĝ = [mean(refined locals) ⊕ global]·W_g.
template <typename T>
RefinedPair<T> refine_pair(const Tensor<T>& img_locals, const Tensor<T>& img_global, const Tensor<T>& txt_locals,
                           const Tensor<T>& txt_global, const CmrHead<T>& head);

/// Row i is 1/|{j : id_j = id_i}| at every j sharing i's identity.
std::vector<double> identity_targets(std::span<const std::uint32_t> ids);

/// Symmetric soft-label InfoNCE over an image/text batch (rows are items):
/// −(1/2N) Σ_ij p_ij [log softmax_j(cos(g_i,t_j)/τ) + log softmax_i(cos(g_i,t_j)/τ)].
template <typename T>
Tensor<T> loss_nitc(const Tensor<T>& g_img, const Tensor<T>& g_txt, std::span<const std::uint32_t> ids, T tau);

}  // namespace mefa::cmr

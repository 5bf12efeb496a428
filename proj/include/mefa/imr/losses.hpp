#pragma once

#include <cstddef>
#include <span>

#include "mefa/numerics/tensor.hpp"

namespace mefa::imr {

using num::Tensor;

struct ImrLossParams {
  double alpha = 0.2;
  double gamma = 8.0;
  /// Use D = cos instead of D = 1 − cos.
  bool d_as_similarity = false;

  void validate() const;
};

/// D(a,b) for corresponding rows of two [r×D] matrices, or two vectors → [1].
template <typename T>
Tensor<T> distance(const Tensor<T>& a, const Tensor<T>& b, const ImrLossParams& params);

/// max(0, α + D(f_a,f_p) − D(f_a,f_n)) for single vectors.
template <typename T>
Tensor<T> loss_imr(const Tensor<T>& f_a, const Tensor<T>& f_p, const Tensor<T>& f_n, const ImrLossParams& params);

/// Mean hinge over triples stored as rows of three [N×D] matrices.
template <typename T>
Tensor<T> loss_imr_batch(const Tensor<T>& anchors, const Tensor<T>& positives, const Tensor<T>& negatives,
                         const ImrLossParams& params);

/// (1/N) Σ_i log(1 + exp(γ·(D(a_i,p_i) − min_{n∈𝒩_i} D(a_i,n)))).
/// Negatives of anchor i are rows offsets[i]..offsets[i+1] of `negatives`.
template <typename T>
Tensor<T> loss_imc(const Tensor<T>& anchors, const Tensor<T>& positives, const Tensor<T>& negatives,
                   std::span<const std::size_t> offsets, const ImrLossParams& params);

}  // namespace mefa::imr

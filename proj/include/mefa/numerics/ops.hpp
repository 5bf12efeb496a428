#pragma once

// Differentiable tensor operations.
//
// Matrices are rank-2 row-major tensors; vectors are rank 1. Every function
// records a backward closure on the thread's active Tape when at least one
// input requires a gradient, and is a plain computation otherwise.

#include <cstddef>
#include <span>
#include <vector>

#include "mefa/numerics/tensor.hpp"

namespace mefa::num {

// Linear algebra
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a · bᵀ
template <typename T> Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

// Pointwise. `b` may match `a`'s shape, be a vector matching a's trailing
// dimension (broadcast over rows), or hold a single value.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
/// max(0, x); the gradient at exactly 0 is taken as 0.
template <typename T> Tensor<T> relu(const Tensor<T>& a);
/// log(1 + exp(x)), evaluated without overflow.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
/// Tanh-approximated GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// Shape manipulation
/// Concatenates along the last dimension; leading dimensions must agree.
template <typename T> Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b);
/// Stacks matrices (or vectors, as single rows) vertically.
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
/// Row i of a matrix as a vector.
template <typename T> Tensor<T> row(const Tensor<T>& a, std::size_t i);
/// Rows picked by index (repeats allowed); doubles as an embedding lookup.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> index);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Repeats vector v as `count` rows.
template <typename T> Tensor<T> broadcast_rows(const Tensor<T>& v, std::size_t count);

// Reductions
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Column sums of a matrix: [r×c] → [c].
template <typename T> Tensor<T> sum_rows(const Tensor<T>& a);
/// Row sums of a matrix: [r×c] → [r].
template <typename T> Tensor<T> sum_cols(const Tensor<T>& a);
/// Mean over rows: [r×c] → [c].
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);
/// Smallest element as a scalar; gradient goes to the first minimizer.
template <typename T> Tensor<T> min_element(const Tensor<T>& a);
/// Per-segment minimum of a vector, segments given by offsets (size S+1).
template <typename T>
Tensor<T> segment_min(const Tensor<T>& a, std::span<const std::size_t> offsets);

/// Scales row i of `a` by w[i].
template <typename T> Tensor<T> mul_rows(const Tensor<T>& a, const Tensor<T>& w);

// Similarities. Zero-norm inputs raise DegenerateInputError.
template <typename T> Tensor<T> normalize_rows(const Tensor<T>& a);
/// ⟨u,v⟩ / (‖u‖‖v‖) for two vectors of equal length, as a scalar tensor.
template <typename T> Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v);
/// Cosine similarity of corresponding rows: [r×d],[r×d] → [r].
template <typename T> Tensor<T> row_cosine(const Tensor<T>& a, const Tensor<T>& b);
/// All pairwise cosine similarities: [r×d],[s×d] → [r×s].
template <typename T> Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b);

// Normalizations
/// exp(x_i/τ) / Σ_j exp(x_j/τ) over a vector, max-subtracted.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, T temperature);
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x, T temperature);
template <typename T> Tensor<T> log_softmax_rows(const Tensor<T>& x, T temperature);
/// Softmax over every entry jointly; output keeps the input shape.
template <typename T> Tensor<T> softmax_all(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5));

/// Single-head scaled dot-product self-attention within each row segment.
template <typename T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            std::span<const std::size_t> offsets);

}  // namespace mefa::num

#pragma once

// Dense inner loops behind the tensor ops.
//
// The top-level functions are the production kernels: OpenMP-parallel over
// independent output rows (or attention segments) when the work is large
// enough. Each output element is accumulated in a fixed order, so results are
// bit-identical for any thread count. `reference::` holds plain serial
// versions used only by tests and the benchmark.

#include <cstddef>
#include <span>

namespace mefa::num::kernels {

/// Number of threads the parallel kernels may use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

/// C[m×n] (+)= A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

/// C[m×n] (+)= A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

/// C[m×n] (+)= A[k×m]ᵀ · B[k×n]
template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

/// Scaled dot-product self-attention applied independently to each row segment
/// [offsets[s], offsets[s+1]) of q, k, v (all R×d). Writes out (R×d) and the
/// row-softmax probabilities of every segment, packed one after another.
template <typename T>
void segment_attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const std::size_t> offsets, std::size_t d,
                               std::span<T> out, std::span<T> probs);

/// Accumulates dq, dk, dv given dout and the probabilities saved by the forward pass.
template <typename T>
void segment_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                                std::span<const T> probs, std::span<const std::size_t> offsets,
                                std::size_t d, std::span<const T> dout, std::span<T> dq,
                                std::span<T> dk, std::span<T> dv);

/// Size of the probability buffer needed for the given segment offsets.
std::size_t attention_prob_size(std::span<const std::size_t> offsets);

namespace reference {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n);

template <typename T>
void segment_attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const std::size_t> offsets, std::size_t d,
                               std::span<T> out);

}  // namespace reference

}  // namespace mefa::num::kernels

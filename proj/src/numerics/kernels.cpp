#include "mefa/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef MEFA_HAVE_OPENMP
#include <omp.h>
#endif

namespace mefa::num::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 16;

#ifdef MEFA_HAVE_OPENMP
int g_threads = omp_get_max_threads();
#else
int g_threads = 1;
#endif

template <typename T>
inline void gemm_nn_row(const T* a_row, const T* b, T* __restrict c_row, std::size_t k, std::size_t n) {
  // Four k-steps per pass with the accumulator held in a register; the
  // additions still happen in ascending p order.
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const T a0 = a_row[p], a1 = a_row[p + 1], a2 = a_row[p + 2], a3 = a_row[p + 3];
    const T* b0 = b + p * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
    for (std::size_t j = 0; j < n; ++j) {
      T acc = c_row[j];
      acc += a0 * b0[j];
      acc += a1 * b1[j];
      acc += a2 * b2[j];
      acc += a3 * b3[j];
      c_row[j] = acc;
    }
  }
  for (; p < k; ++p) {
    const T av = a_row[p];
    const T* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

template <typename T>
void segment_forward(const T* q, const T* k, const T* v, std::size_t begin, std::size_t len,
                     std::size_t d, T scale, T* out, T* probs) {
  for (std::size_t i = 0; i < len; ++i) {
    const T* qi = q + (begin + i) * d;
    T* pi = probs + i * len;
    T mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      const T* kj = k + (begin + j) * d;
      T s = 0;
      for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
      pi[j] = s * scale;
      mx = std::max(mx, pi[j]);
    }
    T z = 0;
    for (std::size_t j = 0; j < len; ++j) {
      pi[j] = std::exp(pi[j] - mx);
      z += pi[j];
    }
    T* oi = out + (begin + i) * d;
    std::fill(oi, oi + d, T{0});
    for (std::size_t j = 0; j < len; ++j) {
      pi[j] /= z;
      const T* vj = v + (begin + j) * d;
      for (std::size_t t = 0; t < d; ++t) oi[t] += pi[j] * vj[t];
    }
  }
}

template <typename T>
void segment_backward(const T* q, const T* k, const T* v, const T* probs, std::size_t begin,
                      std::size_t len, std::size_t d, T scale, const T* dout, T* dq, T* dk,
                      T* dv) {
  std::vector<T> ds(len);
  for (std::size_t i = 0; i < len; ++i) {
    const T* pi = probs + i * len;
    const T* doi = dout + (begin + i) * d;
    // dP[i,j] = <dO_i, V_j>; dS = P ⊙ (dP − Σ_j P dP)
    T dot = 0;
    for (std::size_t j = 0; j < len; ++j) {
      const T* vj = v + (begin + j) * d;
      T g = 0;
      for (std::size_t t = 0; t < d; ++t) g += doi[t] * vj[t];
      ds[j] = g;
      dot += pi[j] * g;
    }
    for (std::size_t j = 0; j < len; ++j) ds[j] = pi[j] * (ds[j] - dot) * scale;
    const T* qi = q + (begin + i) * d;
    T* dqi = dq + (begin + i) * d;
    for (std::size_t j = 0; j < len; ++j) {
      const T* kj = k + (begin + j) * d;
      T* dkj = dk + (begin + j) * d;
      T* dvj = dv + (begin + j) * d;
      for (std::size_t t = 0; t < d; ++t) {
        dqi[t] += ds[j] * kj[t];
        dkj[t] += ds[j] * qi[t];
        dvj[t] += pi[j] * doi[t];
      }
    }
  }
}

std::vector<std::size_t> prob_offsets(std::span<const std::size_t> offsets) {
  std::vector<std::size_t> po(offsets.size(), 0);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    po[s + 1] = po[s] + len * len;
  }
  return po;
}

}  // namespace

int max_threads() { return g_threads; }

void set_threads(int n) {
  g_threads = std::max(1, n);
#ifdef MEFA_HAVE_OPENMP
  omp_set_num_threads(g_threads);
#endif
}

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), T{0});
  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = c.data();
  const long rows = static_cast<long>(m);
#ifdef MEFA_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork && g_threads > 1)
#endif
  for (long i = 0; i < rows; ++i) {
    gemm_nn_row(ap + i * k, bp, cp + i * n, k, n);
  }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  // Transposing B once keeps the inner loop contiguous in both operands.
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn<T>(a, bt, c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), T{0});
  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = c.data();
  const long rows = static_cast<long>(m);
#ifdef MEFA_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork && g_threads > 1)
#endif
  for (long i = 0; i < rows; ++i) {
    T* __restrict c_row = cp + i * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T a0 = ap[p * m + i], a1 = ap[(p + 1) * m + i], a2 = ap[(p + 2) * m + i], a3 = ap[(p + 3) * m + i];
      const T* b0 = bp + p * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) {
        T acc = c_row[j];
        acc += a0 * b0[j];
        acc += a1 * b1[j];
        acc += a2 * b2[j];
        acc += a3 * b3[j];
        c_row[j] = acc;
      }
    }
    for (; p < k; ++p) {
      const T av = ap[p * m + i];
      const T* b_row = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

std::size_t attention_prob_size(std::span<const std::size_t> offsets) {
  return prob_offsets(offsets).back();
}

template <typename T>
void segment_attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const std::size_t> offsets, std::size_t d,
                               std::span<T> out, std::span<T> probs) {
  const auto po = prob_offsets(offsets);
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  const long segments = static_cast<long>(offsets.size()) - 1;
  const std::size_t work = po.back() * d;
#ifdef MEFA_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic) if (work >= kParallelWork && g_threads > 1)
#endif
  for (long s = 0; s < segments; ++s) {
    segment_forward(q.data(), k.data(), v.data(), offsets[s], offsets[s + 1] - offsets[s], d,
                    scale, out.data(), probs.data() + po[s]);
  }
  (void)work;
}

template <typename T>
void segment_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                                std::span<const T> probs, std::span<const std::size_t> offsets,
                                std::size_t d, std::span<const T> dout, std::span<T> dq,
                                std::span<T> dk, std::span<T> dv) {
  const auto po = prob_offsets(offsets);
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  const long segments = static_cast<long>(offsets.size()) - 1;
  const std::size_t work = po.back() * d;
#ifdef MEFA_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic) if (work >= kParallelWork && g_threads > 1)
#endif
  for (long s = 0; s < segments; ++s) {
    segment_backward(q.data(), k.data(), v.data(), probs.data() + po[s], offsets[s],
                     offsets[s + 1] - offsets[s], d, scale, dout.data(), dq.data(), dk.data(),
                     dv.data());
  }
  (void)work;
}

namespace reference {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void segment_attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const std::size_t> offsets, std::size_t d,
                               std::span<T> out) {
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    for (std::size_t i = b; i < e; ++i) {
      std::vector<T> w;
      for (std::size_t j = b; j < e; ++j) {
        T dot = 0;
        for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
        w.push_back(dot * scale);
      }
      const T mx = *std::max_element(w.begin(), w.end());
      T z = 0;
      for (auto& x : w) z += (x = std::exp(x - mx));
      for (std::size_t t = 0; t < d; ++t) {
        T acc = 0;
        for (std::size_t j = b; j < e; ++j) acc += w[j - b] / z * v[j * d + t];
        out[i * d + t] = acc;
      }
    }
  }
}

}  // namespace reference

#define MEFA_INSTANTIATE_KERNELS(T)                                                              \
  template void gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,   \
                           std::size_t, std::size_t, bool);                                     \
  template void gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,   \
                           std::size_t, std::size_t, bool);                                     \
  template void gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,   \
                           std::size_t, std::size_t, bool);                                     \
  template void segment_attention_forward<T>(std::span<const T>, std::span<const T>,            \
                                             std::span<const T>, std::span<const std::size_t>,  \
                                             std::size_t, std::span<T>, std::span<T>);          \
  template void segment_attention_backward<T>(                                                   \
      std::span<const T>, std::span<const T>, std::span<const T>, std::span<const T>,           \
      std::span<const std::size_t>, std::size_t, std::span<const T>, std::span<T>,              \
      std::span<T>, std::span<T>);                                                               \
  template void reference::gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      std::size_t, std::size_t, std::size_t);                   \
  template void reference::segment_attention_forward<T>(                                         \
      std::span<const T>, std::span<const T>, std::span<const T>,                               \
      std::span<const std::size_t>, std::size_t, std::span<T>);

MEFA_INSTANTIATE_KERNELS(float)
MEFA_INSTANTIATE_KERNELS(double)

}  // namespace mefa::num::kernels

#include "mefa/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mefa/numerics/kernels.hpp"

namespace mefa::num {

namespace {

template <typename T>
Tape<T>* recording(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(a.shape()));
  }
}

template <typename T>
[[noreturn]] void mismatch(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

enum class Broadcast { kSame, kRow, kScalar };

template <typename T>
Broadcast broadcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() == 2 && b.size() == a.cols()) return Broadcast::kRow;
  mismatch(op, a, b);
}

inline std::size_t bindex(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return i;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

template <typename T>
T norm2(const T* x, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

template <typename T>
void require_nonzero(T norm, const char* op) {
  if (!(norm > std::numeric_limits<T>::min())) {
    throw DegenerateInputError(std::string(op) + ": zero-norm input");
  }
}

// Shared body of unary pointwise ops: f gives the value, df the derivative
// given (input, output).
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* name, const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record(name, [a, result, df]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto x = a.data();
      const auto y = result.data();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul", a, b);
  std::vector<T> out(m * n);
  kernels::gemm_nn<T>(a.data(), b.data(), out, m, k, n, false);
  Tensor<T> result({m, n}, std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("matmul", [a, b, result, m, k, n]() mutable {
      if (!result.has_grad()) return;
      if (a.requires_grad()) kernels::gemm_nt<T>(result.grad(), b.data(), a.grad_mut(), m, n, k, true);
      if (b.requires_grad()) kernels::gemm_tn<T>(a.data(), result.grad(), b.grad_mut(), k, m, n, true);
    });
  }
  return result;
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_bt");
  require_matrix(b, "matmul_bt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) mismatch("matmul_bt", a, b);
  std::vector<T> out(m * n);
  kernels::gemm_nt<T>(a.data(), b.data(), out, m, k, n, false);
  Tensor<T> result({m, n}, std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("matmul_bt", [a, b, result, m, k, n]() mutable {
      if (!result.has_grad()) return;
      // dA = G·B, dB = Gᵀ·A
      if (a.requires_grad()) kernels::gemm_nn<T>(result.grad(), b.data(), a.grad_mut(), m, n, k, true);
      if (b.requires_grad()) kernels::gemm_tn<T>(result.grad(), a.data(), b.grad_mut(), n, m, k, true);
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  Tensor<T> result({c, r}, std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("transpose", [a, result, r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind("add", a, b);
  const std::size_t cols = a.cols();
  std::vector<T> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[bindex(kind, i, cols)];
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("add", [a, b, result, kind, cols]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(kind, i, cols)] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind("sub", a, b);
  const std::size_t cols = a.cols();
  std::vector<T> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[bindex(kind, i, cols)];
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("sub", [a, b, result, kind, cols]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(kind, i, cols)] -= g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind("mul", a, b);
  const std::size_t cols = a.cols();
  std::vector<T> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[bindex(kind, i, cols)];
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("mul", [a, b, result, kind, cols]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto x = a.data();
      const auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[bindex(kind, i, cols)];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(kind, i, cols)] += g[i] * x[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>("scale", a, [factor](T x) { return x * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary<T>("add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>("tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>("relu", a, [](T x) { return x > T{0} ? x : T{0}; },
                  [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary<T>(
      "softplus", a, [](T x) { return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x))); },
      [](T x, T) {
        return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T{1} + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T t = std::tanh(c * (x + k * x * x * x));
        return T(0.5) * (T{1} + t) + T(0.5) * x * (T{1} - t * t) * c * (T{1} + T{3} * k * x * x);
      });
}

template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rows() != b.rows() || a.rank() > 2) mismatch("concat_last", a, b);
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<T> out(r * c);
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.begin() + i * ca, ca, out.begin() + i * c);
    std::copy_n(y.begin() + i * cb, cb, out.begin() + i * c + ca);
  }
  Shape shape = a.rank() == 1 ? Shape{c} : Shape{r, c};
  Tensor<T> result(std::move(shape), std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("concat_last", [a, b, result, r, ca, cb, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * c + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * c + ca + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c || p.rank() > 2) mismatch("concat_rows", parts.front(), p);
    r += p.rows();
  }
  std::vector<T> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor<T> result({r, c}, std::move(out));
  Tape<T>* tape = Tape<T>::active();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape && any) {
    result.set_requires_grad(true);
    tape->record("concat_rows", [parts, result]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.size();
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  if (begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(a.shape()));
  }
  const std::size_t c = a.cols();
  std::vector<T> out(a.data().begin() + begin * c, a.data().begin() + end * c);
  Tensor<T> result({end - begin, c}, std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("slice_rows", [a, result, begin, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * c + i] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> row(const Tensor<T>& a, std::size_t i) {
  return reshape(slice_rows(a, i, i + 1), Shape{a.cols()});
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> index) {
  require_matrix(a, "gather_rows");
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  const std::size_t c = a.cols();
  std::vector<T> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.dim(0)) {
      throw DimensionError("gather_rows: row " + std::to_string(index[i]) + " outside " +
                           shape_string(a.shape()));
    }
    std::copy_n(a.data().begin() + index[i] * c, c, out.begin() + i * c);
  }
  Tensor<T> result({index.size(), c}, std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    std::vector<std::size_t> idx(index.begin(), index.end());
    tape->record("gather_rows", [a, result, idx = std::move(idx), c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += g[i * c + j];
    });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Tensor<T> result(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("reshape", [a, result]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& v, std::size_t count) {
  if (v.rank() != 1) throw DimensionError("broadcast_rows expects a vector, got " + shape_string(v.shape()));
  const std::size_t c = v.size();
  std::vector<T> out;
  out.reserve(count * c);
  for (std::size_t i = 0; i < count; ++i) out.insert(out.end(), v.data().begin(), v.data().end());
  Tensor<T> result({count, c}, std::move(out));
  if (auto* tape = recording<T>({&v})) {
    result.set_requires_grad(true);
    tape->record("broadcast_rows", [v, result, count, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gv = v.grad_mut();
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto x = a.data();
  const T total = std::accumulate(x.begin(), x.end(), T{0});
  Tensor<T> result = Tensor<T>::scalar(total);
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("sum", [a, result]() mutable {
      if (!result.has_grad()) return;
      const T g = result.grad()[0];
      for (auto& ga : a.grad_mut()) ga += g;
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  require_matrix(a, "sum_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(c, T{0});
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  Tensor<T> result({c}, std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("sum_rows", [a, result, r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j];
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  require_matrix(a, "sum_cols");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r, T{0});
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  Tensor<T> result({r}, std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("sum_cols", [a, result, r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  return scale(sum_rows(a), T{1} / static_cast<T>(a.dim(0)));
}

template <typename T>
Tensor<T> segment_min(const Tensor<T>& a, std::span<const std::size_t> offsets) {
  if (a.rank() != 1) throw DimensionError("segment_min expects a vector, got " + shape_string(a.shape()));
  if (offsets.size() < 2 || offsets.back() != a.size()) {
    throw DimensionError("segment_min: offsets do not cover " + shape_string(a.shape()));
  }
  const std::size_t segments = offsets.size() - 1;
  std::vector<T> out(segments);
  std::vector<std::size_t> argmin(segments);
  const auto x = a.data();
  for (std::size_t s = 0; s < segments; ++s) {
    if (offsets[s] >= offsets[s + 1]) throw DimensionError("segment_min: empty segment");
    std::size_t best = offsets[s];
    for (std::size_t i = offsets[s] + 1; i < offsets[s + 1]; ++i)
      if (x[i] < x[best]) best = i;
    argmin[s] = best;
    out[s] = x[best];
  }
  Tensor<T> result({segments}, std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("segment_min", [a, result, argmin = std::move(argmin)]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto ga = a.grad_mut();
      for (std::size_t s = 0; s < argmin.size(); ++s) ga[argmin[s]] += g[s];
    });
  }
  return result;
}

template <typename T>
Tensor<T> min_element(const Tensor<T>& a) {
  const std::size_t offsets[2] = {0, a.size()};
  return segment_min(reshape(a, Shape{a.size()}), std::span<const std::size_t>(offsets));
}

template <typename T>
Tensor<T> mul_rows(const Tensor<T>& a, const Tensor<T>& w) {
  require_matrix(a, "mul_rows");
  if (w.size() != a.dim(0)) mismatch("mul_rows", a, w);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.size());
  const auto x = a.data();
  const auto s = w.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * s[i];
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording<T>({&a, &w})) {
    result.set_requires_grad(true);
    tape->record("mul_rows", [a, w, result, r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto x = a.data();
      const auto s = w.data();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * s[i];
      }
      if (w.requires_grad()) {
        auto gw = w.grad_mut();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gw[i] += g[i * c + j] * x[i * c + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.size());
  std::vector<T> norms(r);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    norms[i] = norm2(x.data() + i * c, c);
    require_nonzero(norms[i], "normalize_rows");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  Tensor<T> result(a.shape(), std::move(out));
  if (auto* tape = recording<T>({&a})) {
    result.set_requires_grad(true);
    tape->record("normalize_rows", [a, result, norms = std::move(norms), r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto y = result.data();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < r; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          ga[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> row_cosine(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() > 2) mismatch("row_cosine", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(r), na(r), nb(r);
  for (std::size_t i = 0; i < r; ++i) {
    na[i] = norm2(x.data() + i * c, c);
    nb[i] = norm2(y.data() + i * c, c);
    require_nonzero(na[i], "cosine_similarity");
    require_nonzero(nb[i], "cosine_similarity");
    T dot = 0;
    for (std::size_t j = 0; j < c; ++j) dot += x[i * c + j] * y[i * c + j];
    out[i] = dot / (na[i] * nb[i]);
  }
  Tensor<T> result({r}, std::move(out));
  if (auto* tape = recording<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("row_cosine", [a, b, result, na = std::move(na), nb = std::move(nb), r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto cs = result.data();
      const auto x = a.data();
      const auto y = b.data();
      for (std::size_t i = 0; i < r; ++i) {
        const T inv = T{1} / (na[i] * nb[i]);
        if (a.requires_grad()) {
          auto ga = a.grad_mut();
          const T k = cs[i] / (na[i] * na[i]);
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * (y[i * c + j] * inv - k * x[i * c + j]);
        }
        if (b.requires_grad()) {
          auto gb = b.grad_mut();
          const T k = cs[i] / (nb[i] * nb[i]);
          for (std::size_t j = 0; j < c; ++j) gb[i * c + j] += g[i] * (x[i * c + j] * inv - k * y[i * c + j]);
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v) {
  if (u.rank() != 1 || u.shape() != v.shape()) mismatch("cosine_similarity", u, v);
  return row_cosine(u, v);
}

template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) mismatch("cosine_matrix", a, b);
  const auto as = a.rank() == 1 ? reshape(a, Shape{1, a.size()}) : a;
  const auto bs = b.rank() == 1 ? reshape(b, Shape{1, b.size()}) : b;
  return matmul_bt(normalize_rows(as), normalize_rows(bs));
}

namespace {

template <typename T>
Tensor<T> softmax_impl(const char* name, const Tensor<T>& x, std::size_t r, std::size_t c,
                       T temperature, bool log_space) {
  if (!(temperature > T{0})) throw InputError(std::string(name) + ": temperature must be positive");
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = in.data() + i * c;
    T* yi = out.data() + i * c;
    T mx = xi[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp((xi[j] - mx) / temperature);
    if (log_space) {
      const T lz = std::log(z);
      for (std::size_t j = 0; j < c; ++j) yi[j] = (xi[j] - mx) / temperature - lz;
    } else {
      for (std::size_t j = 0; j < c; ++j) yi[j] = std::exp((xi[j] - mx) / temperature) / z;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording<T>({&x})) {
    result.set_requires_grad(true);
    tape->record(name, [x, result, r, c, temperature, log_space]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto y = result.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < r; ++i) {
        if (log_space) {
          T gs = 0;
          for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] += (g[i * c + j] - std::exp(y[i * c + j]) * gs) / temperature;
        } else {
          T dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot) / temperature;
        }
      }
    });
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T temperature) {
  if (x.rank() != 1) throw DimensionError("softmax expects a vector, got " + shape_string(x.shape()));
  return softmax_impl<T>("softmax", x, 1, x.size(), temperature, false);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T temperature) {
  return softmax_impl<T>("softmax_rows", x, x.rows(), x.cols(), temperature, false);
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x, T temperature) {
  return softmax_impl<T>("log_softmax_rows", x, x.rows(), x.cols(), temperature, true);
}

template <typename T>
Tensor<T> softmax_all(const Tensor<T>& x) {
  return softmax_impl<T>("softmax_all", x, 1, x.size(), T{1}, false);
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c) mismatch("layer_norm_rows", x, gamma);
  const auto in = x.data();
  const auto ga = gamma.data();
  const auto be = beta.data();
  std::vector<T> xhat(x.size()), out(x.size()), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = in.data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<T>(c);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xi[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * ga[j] + be[j];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (auto* tape = recording<T>({&x, &gamma, &beta})) {
    result.set_requires_grad(true);
    tape->record("layer_norm_rows", [x, gamma, beta, result, xhat = std::move(xhat),
                                     inv_std = std::move(inv_std), r, c]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto gm = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            if (gamma.requires_grad()) gamma.grad_mut()[j] += g[i * c + j] * xhat[i * c + j];
            if (beta.requires_grad()) beta.grad_mut()[j] += g[i * c + j];
          }
        }
      }
      if (x.requires_grad()) {
        auto gx = x.grad_mut();
        const T n = static_cast<T>(c);
        for (std::size_t i = 0; i < r; ++i) {
          T s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[i * c + j] * gm[j];
            s1 += d;
            s2 += d * xhat[i * c + j];
          }
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[i * c + j] * gm[j];
            gx[i * c + j] += inv_std[i] / n * (n * d - s1 - xhat[i * c + j] * s2);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            std::span<const std::size_t> offsets) {
  require_matrix(q, "segment_attention");
  if (k.shape() != q.shape()) mismatch("segment_attention", q, k);
  if (v.shape() != q.shape()) mismatch("segment_attention", q, v);
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != q.dim(0)) {
    throw DimensionError("segment_attention: offsets do not cover " + shape_string(q.shape()));
  }
  const std::size_t d = q.cols();
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  std::vector<T> out(q.size());
  std::vector<T> probs(kernels::attention_prob_size(offs));
  kernels::segment_attention_forward<T>(q.data(), k.data(), v.data(), offs, d, out, probs);
  Tensor<T> result(q.shape(), std::move(out));
  if (auto* tape = recording<T>({&q, &k, &v})) {
    result.set_requires_grad(true);
    tape->record("segment_attention", [q, k, v, result, offs = std::move(offs),
                                       probs = std::move(probs), d]() mutable {
      if (!result.has_grad()) return;
      // Kernel writes all three; route unused ones to scratch.
      std::vector<T> scratch_q, scratch_k, scratch_v;
      auto target = [](const Tensor<T>& t, std::vector<T>& scratch) -> std::span<T> {
        if (t.requires_grad()) return t.grad_mut();
        scratch.assign(t.size(), T{0});
        return scratch;
      };
      auto dq = target(q, scratch_q);
      auto dk = target(k, scratch_k);
      auto dv = target(v, scratch_v);
      kernels::segment_attention_backward<T>(q.data(), k.data(), v.data(), probs, offs, d,
                                             result.grad(), dq, dk, dv);
    });
  }
  return result;
}

#define MEFA_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul_bt<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                           \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                               \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                \
  template Tensor<T> log<T>(const Tensor<T>&);                                                \
  template Tensor<T> relu<T>(const Tensor<T>&);                                               \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                           \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                               \
  template Tensor<T> concat_last<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                           \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> row<T>(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);          \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
  template Tensor<T> broadcast_rows<T>(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                \
  template Tensor<T> mean<T>(const Tensor<T>&);                                               \
  template Tensor<T> sum_rows<T>(const Tensor<T>&);                                           \
  template Tensor<T> sum_cols<T>(const Tensor<T>&);                                           \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                                          \
  template Tensor<T> min_element<T>(const Tensor<T>&);                                        \
  template Tensor<T> segment_min<T>(const Tensor<T>&, std::span<const std::size_t>);          \
  template Tensor<T> mul_rows<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> normalize_rows<T>(const Tensor<T>&);                                     \
  template Tensor<T> cosine_similarity<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> row_cosine<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> cosine_matrix<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> softmax<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&, T);                                    \
  template Tensor<T> log_softmax_rows<T>(const Tensor<T>&, T);                                \
  template Tensor<T> softmax_all<T>(const Tensor<T>&);                                        \
  template Tensor<T> layer_norm_rows<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        T);                                                   \
  template Tensor<T> segment_attention<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                          const Tensor<T>&, std::span<const std::size_t>);

MEFA_INSTANTIATE_OPS(float)
MEFA_INSTANTIATE_OPS(double)

}  // namespace mefa::num

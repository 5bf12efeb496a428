#include "mefa/imr/losses.hpp"

#include <vector>

#include "mefa/errors.hpp"
#include "mefa/numerics/ops.hpp"

namespace mefa::imr {

using namespace num;

void ImrLossParams::validate() const {
  if (!(alpha > 0.0 && alpha < 2.0)) throw InputError("alpha must lie in (0, 2)");
  if (!(gamma > 0.0)) throw InputError("gamma must be positive");
}

namespace {

template <typename T>
Tensor<T> as_rows(const Tensor<T>& x) {
  return x.rank() == 1 ? reshape(x, {1, x.size()}) : x;
}

}  // namespace

template <typename T>
Tensor<T> distance(const Tensor<T>& a, const Tensor<T>& b, const ImrLossParams& params) {
  const auto cos = row_cosine(as_rows(a), as_rows(b));
  return params.d_as_similarity ? cos : add_scalar(scale(cos, T(-1)), T(1));
}

template <typename T>
Tensor<T> loss_imr(const Tensor<T>& f_a, const Tensor<T>& f_p, const Tensor<T>& f_n, const ImrLossParams& params) {
  return loss_imr_batch(as_rows(f_a), as_rows(f_p), as_rows(f_n), params);
}

template <typename T>
Tensor<T> loss_imr_batch(const Tensor<T>& anchors, const Tensor<T>& positives, const Tensor<T>& negatives,
                         const ImrLossParams& params) {
  params.validate();
  const auto gap = sub(distance(anchors, positives, params), distance(anchors, negatives, params));
  return mean(relu(add_scalar(gap, static_cast<T>(params.alpha))));
}

template <typename T>
Tensor<T> loss_imc(const Tensor<T>& anchors, const Tensor<T>& positives, const Tensor<T>& negatives,
                   std::span<const std::size_t> offsets, const ImrLossParams& params) {
  params.validate();
  const std::size_t n = as_rows(anchors).rows();
  if (offsets.size() != n + 1 || offsets.front() != 0 || offsets.back() != as_rows(negatives).rows()) {
    throw DimensionError("loss_imc: offsets do not partition the negatives");
  }
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < n; ++i) {
    if (offsets[i + 1] <= offsets[i]) throw InputError("loss_imc: anchor " + std::to_string(i) + " has no negatives");
    owner.insert(owner.end(), offsets[i + 1] - offsets[i], i);
  }
  const auto d_ap = distance(anchors, positives, params);
  const auto d_an = distance(gather_rows(as_rows(anchors), owner), negatives, params);
  const auto gap = sub(d_ap, segment_min(d_an, offsets));
  return mean(softplus(scale(gap, static_cast<T>(params.gamma))));
}

#define MEFA_INSTANTIATE(T)                                                                                 \
  template Tensor<T> distance(const Tensor<T>&, const Tensor<T>&, const ImrLossParams&);                  \
  template Tensor<T> loss_imr(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ImrLossParams&); \
  template Tensor<T> loss_imr_batch(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                    const ImrLossParams&);                                                \
  template Tensor<T> loss_imc(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                       \
                              std::span<const std::size_t>, const ImrLossParams&);
MEFA_INSTANTIATE(float)
MEFA_INSTANTIATE(double)
#undef MEFA_INSTANTIATE

}  // namespace mefa::imr

#include "mefa/cmr/cmr.hpp"

#include <cmath>

#include "mefa/errors.hpp"
#include "mefa/numerics/ops.hpp"

namespace mefa::cmr {

using namespace num;

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& img_locals, const Tensor<T>& txt_locals) {
  return softmax_all(cosine_matrix(img_locals, txt_locals));
}

template <typename T>
WeightedLocals<T> weight_locals(const Tensor<T>& attention, const Tensor<T>& img_locals, const Tensor<T>& txt_locals) {
  if (attention.rank() != 2 || attention.rows() != img_locals.rows() || attention.cols() != txt_locals.rows()) {
    throw DimensionError("attention " + shape_string(attention.shape()) + " does not match locals " +
                         shape_string(img_locals.shape()) + " and " + shape_string(txt_locals.shape()));
  }
  return {mul_rows(img_locals, sum_cols(attention)), mul_rows(txt_locals, sum_rows(attention))};
}

template <typename T>
FusionParams<T> FusionParams<T>::init(std::size_t dim, Rng& rng) {
  const double s = 1.0 / std::sqrt(2.0 * static_cast<double>(dim));
  FusionParams p;
  p.w_u = randn<T>({2 * dim, dim}, rng, s, true);
  p.w_f = randn<T>({2 * dim, dim}, rng, s, true);
  p.b_f = Tensor<T>::filled({dim}, T(1), true);
  return p;
}

template <typename T>
void FusionParams<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + "w_u", w_u);
  out.emplace_back(prefix + "w_f", w_f);
  out.emplace_back(prefix + "b_f", b_f);
}

template <typename T>
Tensor<T> gated_fuse(const Tensor<T>& locals_hat, const Tensor<T>& g, const FusionParams<T>& params) {
  const std::size_t d = locals_hat.cols();
  if (g.size() != d || params.w_u.shape() != Shape{2 * d, d} || params.w_f.shape() != Shape{2 * d, d} ||
      params.b_f.size() != d) {
    throw DimensionError("gated_fuse: locals " + shape_string(locals_hat.shape()) + ", global " +
                         shape_string(g.shape()) + ", W_u " + shape_string(params.w_u.shape()));
  }
  const auto c = concat_last(locals_hat, broadcast_rows(reshape(g, {d}), locals_hat.rows()));
  return mul(matmul(c, params.w_u), tanh(add(matmul(c, params.w_f), params.b_f)));
}

template <typename T>
CmrHead<T>::CmrHead(std::size_t dim, const CmrConfig& cfg, Rng& rng)
    : config(cfg),
      image_fusion(FusionParams<T>::init(dim, rng)),
      text_fusion(FusionParams<T>::init(dim, rng)),
      image_global_proj(randn<T>({2 * dim, dim}, rng, 1.0 / std::sqrt(2.0 * dim), true)),
      text_global_proj(randn<T>({2 * dim, dim}, rng, 1.0 / std::sqrt(2.0 * dim), true)) {}

template <typename T>
NamedParams<T> CmrHead<T>::parameters() const {
  NamedParams<T> out;
  image_fusion.collect(out, "cmr.image.");
  out.emplace_back("cmr.image.global_proj", image_global_proj);
  if (!config.shared_fusion) {
    text_fusion.collect(out, "cmr.text.");
    out.emplace_back("cmr.text.global_proj", text_global_proj);
  }
  return out;
}

template <typename T>
RefinedPair<T> refine_pair(const Tensor<T>& img_locals, const Tensor<T>& img_global, const Tensor<T>& txt_locals,
                           const Tensor<T>& txt_global, const CmrHead<T>& head) {
  RefinedPair<T> out;
  out.attention_matrix = attention_weights(img_locals, txt_locals);
  const auto w = weight_locals(out.attention_matrix, img_locals, txt_locals);
  out.image_locals_refined = gated_fuse(w.v_hat, img_global, head.image_fusion);
  out.text_locals_refined = gated_fuse(w.t_hat, txt_global, head.text_params());
  const std::size_t d = img_global.size();
  const auto gi = reshape(img_global, {d});
  const auto gt = reshape(txt_global, {d});
  out.g_img = matmul(reshape(concat_last(mean_rows(out.image_locals_refined), gi), {1, 2 * d}), head.image_global_proj);
  out.g_txt = matmul(reshape(concat_last(mean_rows(out.text_locals_refined), gt), {1, 2 * d}), head.text_proj());
  out.g_img = reshape(out.g_img, {d});
  out.g_txt = reshape(out.g_txt, {d});
  return out;
}

std::vector<double> identity_targets(std::span<const std::uint32_t> ids) {
  const std::size_t n = ids.size();
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t matches = 0;
    for (std::size_t j = 0; j < n; ++j) matches += ids[j] == ids[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (ids[j] == ids[i]) p[i * n + j] = 1.0 / static_cast<double>(matches);
    }
  }
  return p;
}

template <typename T>
Tensor<T> loss_nitc(const Tensor<T>& g_img, const Tensor<T>& g_txt, std::span<const std::uint32_t> ids, T tau) {
  const std::size_t n = ids.size();
  if (n < 2) throw InputError("loss_nitc needs at least 2 pairs");
  if (g_img.rows() != n || g_txt.rows() != n) throw DimensionError("loss_nitc: batch size does not match labels");
  if (!(tau > T(0))) throw InputError("loss_nitc: temperature must be positive");
  const auto targets = identity_targets(ids);
  const Tensor<T> p({n, n}, std::vector<T>(targets.begin(), targets.end()));
  const auto s = cosine_matrix(g_img, g_txt);
  const auto i2t = sum(mul(p, log_softmax_rows(s, tau)));
  const auto t2i = sum(mul(p, log_softmax_rows(transpose(s), tau)));
  return scale(add(i2t, t2i), T(-1) / static_cast<T>(2 * n));
}

#define MEFA_INSTANTIATE(T)                                                                                  \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&);                                \
  template WeightedLocals<T> weight_locals(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template struct FusionParams<T>;                                                                         \
  template Tensor<T> gated_fuse(const Tensor<T>&, const Tensor<T>&, const FusionParams<T>&);               \
  template struct CmrHead<T>;                                                                              \
  template RefinedPair<T> refine_pair(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      const CmrHead<T>&);                                                  \
  template Tensor<T> loss_nitc(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint32_t>, T);
MEFA_INSTANTIATE(float)
MEFA_INSTANTIATE(double)
#undef MEFA_INSTANTIATE

}  // namespace mefa::cmr

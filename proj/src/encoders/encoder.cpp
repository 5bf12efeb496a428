#include "mefa/encoders/encoder.hpp"

#include <cmath>

#include "mefa/errors.hpp"
#include "mefa/numerics/ops.hpp"

namespace mefa {

using namespace num;

namespace {

template <typename T>
Tensor<T> linear_init(std::size_t in, std::size_t out, Rng& rng) {
  return randn<T>({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true);
}

// Row layout shared by both encoders: for item b, its global slot row followed
// by its local rows. Builds the gather index that interleaves a stacked
// [slot; locals_0; locals_1; ...] matrix into that layout, and the positional
// index of each row.
struct SequenceLayout {
  std::vector<std::size_t> gather;     // into [slot; all locals]
  std::vector<std::size_t> positions;  // positional-embedding row per sequence row
  std::vector<std::size_t> segments;   // B+1 offsets of sequences
  std::vector<std::size_t> global_rows;
  std::vector<std::size_t> local_rows;
  std::vector<std::size_t> local_offsets;
};

SequenceLayout make_layout(const std::vector<std::size_t>& counts) {
  SequenceLayout l;
  l.segments.push_back(0);
  l.local_offsets.push_back(0);
  std::size_t next_local = 1;
  for (std::size_t n : counts) {
    l.global_rows.push_back(l.gather.size());
    l.gather.push_back(0);
    l.positions.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
      l.local_rows.push_back(l.gather.size());
      l.gather.push_back(next_local++);
      l.positions.push_back(i + 1);
    }
    l.segments.push_back(l.gather.size());
    l.local_offsets.push_back(l.local_offsets.back() + n);
  }
  return l;
}

template <typename T>
EncodedBatch<T> run_stack(const Tensor<T>& slot, const Tensor<T>& local_embed, const Tensor<T>& position,
                          const std::vector<TransformerBlock<T>>& blocks, const Tensor<T>& ln_gamma,
                          const Tensor<T>& ln_beta, const Tensor<T>& proj,
                          const std::vector<std::size_t>& counts) {
  const SequenceLayout layout = make_layout(counts);
  Tensor<T> x = gather_rows(concat_rows<T>({slot, local_embed}), layout.gather);
  x = add(x, gather_rows(position, layout.positions));
  for (const auto& block : blocks) x = block.forward(x, layout.segments);
  x = matmul(layer_norm_rows(x, ln_gamma, ln_beta), proj);
  EncodedBatch<T> out;
  out.globals = gather_rows(x, layout.global_rows);
  out.locals = gather_rows(x, layout.local_rows);
  out.offsets = layout.local_offsets;
  return out;
}

}  // namespace

template <typename T>
Tensor<T> EncodedBatch<T>::locals_of(std::size_t i) const {
  return slice_rows(locals, offsets[i], offsets[i + 1]);
}

template <typename T>
Tensor<T> EncodedBatch<T>::global_of(std::size_t i) const {
  return row(globals, i);
}

template <typename T>
EncodedItem<T> EncodedBatch<T>::item(std::size_t i) const {
  return EncodedItem<T>{locals_of(i), global_of(i), identity_ids[i], truncated.empty() ? false : bool(truncated[i])};
}

template <typename T>
TransformerBlock<T>::TransformerBlock(std::size_t dim, std::size_t hidden, Rng& rng)
    : ln1_gamma(Tensor<T>::filled({dim}, T{1}, true)),
      ln1_beta(Tensor<T>::zeros({dim}, true)),
      w_q(linear_init<T>(dim, dim, rng)),
      w_k(linear_init<T>(dim, dim, rng)),
      w_v(linear_init<T>(dim, dim, rng)),
      w_o(linear_init<T>(dim, dim, rng)),
      ln2_gamma(Tensor<T>::filled({dim}, T{1}, true)),
      ln2_beta(Tensor<T>::zeros({dim}, true)),
      w_in(linear_init<T>(dim, hidden, rng)),
      b_in(Tensor<T>::zeros({hidden}, true)),
      w_out(linear_init<T>(hidden, dim, rng)),
      b_out(Tensor<T>::zeros({dim}, true)) {}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x, std::span<const std::size_t> offsets) const {
  const auto h = layer_norm_rows(x, ln1_gamma, ln1_beta);
  const auto attn = segment_attention(matmul(h, w_q), matmul(h, w_k), matmul(h, w_v), offsets);
  const auto x1 = add(x, matmul(attn, w_o));
  const auto h2 = layer_norm_rows(x1, ln2_gamma, ln2_beta);
  const auto mlp = add(matmul(gelu(add(matmul(h2, w_in), b_in)), w_out), b_out);
  return add(x1, mlp);
}

template <typename T>
void TransformerBlock<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + "ln1_gamma", ln1_gamma);
  out.emplace_back(prefix + "ln1_beta", ln1_beta);
  out.emplace_back(prefix + "w_q", w_q);
  out.emplace_back(prefix + "w_k", w_k);
  out.emplace_back(prefix + "w_v", w_v);
  out.emplace_back(prefix + "w_o", w_o);
  out.emplace_back(prefix + "ln2_gamma", ln2_gamma);
  out.emplace_back(prefix + "ln2_beta", ln2_beta);
  out.emplace_back(prefix + "w_in", w_in);
  out.emplace_back(prefix + "b_in", b_in);
  out.emplace_back(prefix + "w_out", w_out);
  out.emplace_back(prefix + "b_out", b_out);
}

template <typename T>
ImageEncoder<T>::ImageEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.patch == 0 || config.image_height % config.patch || config.image_width % config.patch) {
    throw DimensionError("image size must be divisible by the patch size");
  }
  const std::size_t d = config.dim;
  const std::size_t patch_len = config.patch * config.patch * config.channels;
  const std::size_t n = config.patches_per_image();
  patch_w_ = linear_init<T>(patch_len, d, rng);
  patch_b_ = Tensor<T>::zeros({d}, true);
  global_slot_ = randn<T>({1, d}, rng, 0.1, true);
  position_ = randn<T>({n + 1, d}, rng, 0.1, true);
  for (std::size_t i = 0; i < config.depth; ++i) blocks_.emplace_back(d, d * config.mlp_ratio, rng);
  ln_gamma_ = Tensor<T>::filled({d}, T{1}, true);
  ln_beta_ = Tensor<T>::zeros({d}, true);
  proj_ = linear_init<T>(d, d, rng);
}

template <typename T>
EncodedBatch<T> ImageEncoder<T>::encode(std::span<const ImageGrid> images) const {
  if (images.empty()) throw InputError("encode: empty image batch");
  const std::size_t n = config_.patches_per_image();
  const std::size_t patch_len = config_.patch * config_.patch * config_.channels;
  std::vector<T> patches;
  patches.reserve(images.size() * n * patch_len);
  for (const auto& img : images) {
    if (img.height != config_.image_height || img.width != config_.image_width || img.channels != config_.channels) {
      throw DimensionError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                           std::to_string(img.channels) + ", encoder expects " +
                           std::to_string(config_.image_height) + "x" + std::to_string(config_.image_width) +
                           "x" + std::to_string(config_.channels));
    }
    const auto rows = patchify(img, config_.patch);
    patches.insert(patches.end(), rows.begin(), rows.end());
  }
  const Tensor<T> patch_matrix({images.size() * n, patch_len}, std::move(patches));
  const auto embedded = add(matmul(patch_matrix, patch_w_), patch_b_);
  std::vector<std::size_t> counts(images.size(), n);
  auto out = run_stack(global_slot_, embedded, position_, blocks_, ln_gamma_, ln_beta_, proj_, counts);
  for (const auto& img : images) out.identity_ids.push_back(img.identity_id);
  out.truncated.assign(images.size(), false);
  return out;
}

template <typename T>
EncodedItem<T> ImageEncoder<T>::encode(const ImageGrid& image) const {
  return encode(std::span<const ImageGrid>(&image, 1)).item(0);
}

template <typename T>
NamedParams<T> ImageEncoder<T>::parameters() const {
  NamedParams<T> out;
  out.emplace_back("image.patch_w", patch_w_);
  out.emplace_back("image.patch_b", patch_b_);
  out.emplace_back("image.global_slot", global_slot_);
  out.emplace_back("image.position", position_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "image.block" + std::to_string(i) + ".");
  out.emplace_back("image.ln_gamma", ln_gamma_);
  out.emplace_back("image.ln_beta", ln_beta_);
  out.emplace_back("image.proj", proj_);
  return out;
}

template <typename T>
TextEncoder<T>::TextEncoder(const EncoderConfig& config, std::size_t vocab_size, Rng& rng) : config_(config) {
  if (vocab_size == 0) throw InputError("vocabulary is empty");
  const std::size_t d = config.dim;
  token_table_ = randn<T>({vocab_size, d}, rng, 0.1, true);
  global_slot_ = randn<T>({1, d}, rng, 0.1, true);
  position_ = randn<T>({config.max_tokens + 1, d}, rng, 0.1, true);
  for (std::size_t i = 0; i < config.depth; ++i) blocks_.emplace_back(d, d * config.mlp_ratio, rng);
  ln_gamma_ = Tensor<T>::filled({d}, T{1}, true);
  ln_beta_ = Tensor<T>::zeros({d}, true);
  proj_ = linear_init<T>(d, d, rng);
}

template <typename T>
EncodedBatch<T> TextEncoder<T>::encode(std::span<const Caption> captions, const Vocabulary& vocab) const {
  if (captions.empty()) throw InputError("encode: empty caption batch");
  std::vector<std::size_t> ids, counts;
  std::vector<bool> truncated;
  for (const auto& c : captions) {
    if (c.tokens.empty()) throw InputError("encode: caption has no tokens");
    if (c.tokens.size() != c.pos_tags.size()) throw InputError("encode: tokens and pos_tags differ in length");
    const std::size_t m = std::min(c.tokens.size(), config_.max_tokens);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t id = vocab.id(c.tokens[i]);
      ids.push_back(id < vocab_size() ? id : Vocabulary::kUnk);
    }
    counts.push_back(m);
    truncated.push_back(c.tokens.size() > config_.max_tokens);
  }
  const auto embedded = gather_rows(token_table_, ids);
  auto out = run_stack(global_slot_, embedded, position_, blocks_, ln_gamma_, ln_beta_, proj_, counts);
  for (const auto& c : captions) out.identity_ids.push_back(c.identity_id);
  out.truncated = std::move(truncated);
  return out;
}

template <typename T>
EncodedItem<T> TextEncoder<T>::encode(const Caption& caption, const Vocabulary& vocab) const {
  return encode(std::span<const Caption>(&caption, 1), vocab).item(0);
}

template <typename T>
NamedParams<T> TextEncoder<T>::parameters() const {
  NamedParams<T> out;
  out.emplace_back("text.token_table", token_table_);
  out.emplace_back("text.global_slot", global_slot_);
  out.emplace_back("text.position", position_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "text.block" + std::to_string(i) + ".");
  out.emplace_back("text.ln_gamma", ln_gamma_);
  out.emplace_back("text.ln_beta", ln_beta_);
  out.emplace_back("text.proj", proj_);
  return out;
}

template struct EncodedBatch<float>;
template struct EncodedBatch<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace mefa

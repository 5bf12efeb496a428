#include "mefa/harness/model.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include "mefa/errors.hpp"
#include "mefa/io/binary.hpp"

namespace mefa::harness {

namespace {

constexpr std::string_view kMagic = "MEFACKP1";
constexpr std::uint32_t kFormatVersion = 1;

num::Rng stream(std::uint64_t seed, std::uint64_t salt) { return num::Rng(num::mix_seed(seed, salt)); }

}  // namespace

Model::Model(const EncoderConfig& encoder, const cmr::CmrConfig& cmr, Vocabulary vocabulary, std::uint64_t seed)
    : vocab(std::move(vocabulary)),
      image([&] {
        auto rng = stream(seed, 1);
        return ImageEncoder<float>(encoder, rng);
      }()),
      text([&] {
        auto rng = stream(seed, 2);
        return TextEncoder<float>(encoder, vocab.size(), rng);
      }()),
      head([&] {
        auto rng = stream(seed, 3);
        return cmr::CmrHead<float>(encoder.dim, cmr, rng);
      }()) {}

NamedParams<float> Model::parameters() const {
  auto out = image.parameters();
  for (auto& p : text.parameters()) out.push_back(std::move(p));
  for (auto& p : head.parameters()) out.emplace_back("cmr." + p.first, p.second);
  return out;
}

std::vector<Tensor<float>> Model::parameter_tensors() const {
  std::vector<Tensor<float>> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const auto params = model.parameters();
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  io::write_file(path, w.buffer());
}

void load_checkpoint(Model& model, const std::string& path) {
  io::ByteReader r(io::read_file(path));
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad magic, expected MEFACKP1", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kFormatVersion) throw FormatError("unsupported checkpoint version", version_at);
  auto params = model.parameters();
  std::map<std::string, Tensor<float>> by_name(params.begin(), params.end());
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("block count");
  if (count != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " blocks, model has " +
                          std::to_string(params.size()),
                      count_at);
  }
  // Parse everything before touching the model so a bad file leaves it intact.
  std::vector<std::pair<Tensor<float>, std::vector<float>>> staged;
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::size_t at = r.offset();
    const std::string name = r.bytes(r.u32("name length"), "name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("unknown parameter block '" + name + "'", at);
    num::Shape shape(r.u32("rank"));
    for (auto& d : shape) d = r.u32("dimension");
    if (shape != it->second.shape()) {
      throw FormatError("block '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                            shape_string(it->second.shape()),
                        at);
    }
    std::vector<float> values(num::shape_size(shape));
    for (auto& v : values) v = r.f32("values");
    staged.emplace_back(it->second, std::move(values));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last block", r.offset());
  for (auto& [t, values] : staged) std::copy(values.begin(), values.end(), t.mutable_data().begin());
}

void save_model_dir(const Model& model, const TrainConfig& config, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_checkpoint(model, (fs::path(dir) / "model.ckpt").string());
  model.vocab.save((fs::path(dir) / "vocab.txt").string());
  write_json_file((fs::path(dir) / "config.json").string(), to_json(config));
}

LoadedModel load_model_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  auto config = load_train_config((fs::path(dir) / "config.json").string());
  LoadedModel out{config, Model(config.encoder, config.cmr, Vocabulary::load((fs::path(dir) / "vocab.txt").string()),
                                config.seed)};
  load_checkpoint(out.model, (fs::path(dir) / "model.ckpt").string());
  return out;
}

EmbeddingBank encode_image_bank(const Model& model, const std::vector<ImageGrid>& images, std::size_t chunk) {
  num::NoGradScope<float> no_grad;
  EmbeddingBank bank(Modality::kImage, model.image.config().dim);
  for (std::size_t b = 0; b < images.size(); b += chunk) {
    const std::size_t e = std::min(images.size(), b + chunk);
    const auto part = EmbeddingBank::from_batch(
        model.image.encode(std::span<const ImageGrid>(images.data() + b, e - b)), Modality::kImage);
    for (const auto& item : part.items()) bank.add(item);
  }
  return bank;
}

EmbeddingBank encode_text_bank(const Model& model, const std::vector<Caption>& captions, std::size_t chunk) {
  num::NoGradScope<float> no_grad;
  EmbeddingBank bank(Modality::kText, model.text.config().dim);
  for (std::size_t b = 0; b < captions.size(); b += chunk) {
    const std::size_t e = std::min(captions.size(), b + chunk);
    const auto part = EmbeddingBank::from_batch(
        model.text.encode(std::span<const Caption>(captions.data() + b, e - b), model.vocab), Modality::kText);
    for (const auto& item : part.items()) bank.add(item);
  }
  return bank;
}

}  // namespace mefa::harness

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mefa/cmr/cmr.hpp"
#include "mefa/encoders/bank.hpp"
#include "mefa/encoders/encoder.hpp"
#include "mefa/harness/config.hpp"

namespace mefa::harness {

/// Dual encoders plus the refinement head, initialized from independent
/// streams of one seed so every toggle combination starts from the same weights.
struct Model {
  Vocabulary vocab;
  ImageEncoder<float> image;
  TextEncoder<float> text;
  cmr::CmrHead<float> head;

  Model(const EncoderConfig& encoder, const cmr::CmrConfig& cmr, Vocabulary vocabulary, std::uint64_t seed);

  NamedParams<float> parameters() const;
  std::vector<Tensor<float>> parameter_tensors() const;
};

/// Flat checkpoint: magic "MEFACKP1", u32 {version=1, block_count}, then per
/// block u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 values; all
/// little-endian.
void save_checkpoint(const Model& model, const std::string& path);
/// Loads into a model of matching architecture; names and shapes must agree.
void load_checkpoint(Model& model, const std::string& path);

/// Checkpoint directory: model.ckpt, vocab.txt, config.json.
void save_model_dir(const Model& model, const TrainConfig& config, const std::string& dir);
struct LoadedModel {
  TrainConfig config;
  Model model;
};
LoadedModel load_model_dir(const std::string& dir);

/// No-grad encoding in fixed-size chunks.
EmbeddingBank encode_image_bank(const Model& model, const std::vector<ImageGrid>& images, std::size_t chunk = 64);
EmbeddingBank encode_text_bank(const Model& model, const std::vector<Caption>& captions, std::size_t chunk = 64);

}  // namespace mefa::harness

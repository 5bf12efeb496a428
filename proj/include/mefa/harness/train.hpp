#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mefa/harness/config.hpp"
#include "mefa/harness/model.hpp"
#include "mefa/harness/synthetic.hpp"
#include "mefa/imr/perturb.hpp"

namespace mefa::harness {

/// Unweighted component values; total is the weighted sum of the enabled ones.
struct LossBreakdown {
  double itc = 0.0;
  double imr_t = 0.0;
  double imc_t = 0.0;
  double imr_v = 0.0;
  double imc_v = 0.0;
  double nitc = 0.0;
  double ditc = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double f) const;
  bool operator==(const LossBreakdown&) const = default;
};

/// Training-split resources reused across steps.
struct TrainContext {
  const Dataset* data = nullptr;
  imr::Lexicon lexicon;
  imr::CorpusStats stats;
  /// Per training image: mined wrong-identity image indices, refreshed each epoch.
  std::vector<std::vector<std::size_t>> visual_negatives;

  explicit TrainContext(const Dataset& train);
  void refresh_visual_negatives(const Model& model, std::size_t k);
};

struct BatchLoss {
  Tensor<float> total;
  LossBreakdown parts;
  std::size_t text_negatives = 0;
  std::size_t skipped_captions = 0;  // no tier applied
};

/// Encodes the batch's caption/image pairs and builds every enabled loss.
/// `negative_seed` salts the text perturbations.
BatchLoss batch_loss(const Model& model, const TrainConfig& config, const TrainContext& context,
                     std::span<const std::size_t> caption_indices, std::uint64_t negative_seed);

/// Caption indices grouped into batches with distinct identities where possible,
/// from a seeded shuffle. A trailing single-pair batch joins the one before it.
std::vector<std::vector<std::size_t>> make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;  // mean over the epoch's batches
  double val_rank1 = 0.0;
  std::size_t text_negatives = 0;
  std::size_t skipped_captions = 0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
};

/// Identity-disjoint train/val/test subsets from the config's fractions and seed.
struct SplitData {
  Split ids;
  Dataset train, val, test;
};
SplitData split_dataset(const Dataset& data, const TrainConfig& config);

Json to_json(const EpochRecord& record);

/// Builds the vocabulary from the training captions and initializes from config.seed.
Model build_model(const TrainConfig& config, const Dataset& train);

/// Runs config.epochs epochs of LAMB on the warmup schedule. Throws
/// DivergenceError naming the epoch and step if a loss or gradient is non-finite.
TrainResult train(Model& model, const TrainConfig& config, const Dataset& train, const Dataset* val = nullptr,
                  std::ostream* log = nullptr);

}  // namespace mefa::harness

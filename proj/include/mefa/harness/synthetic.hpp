#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mefa/encoders/caption.hpp"
#include "mefa/encoders/image.hpp"

namespace mefa::harness {

/// Attribute vocabularies. Every entry becomes both a rendering rule and a caption word.
struct AttributeCatalog {
  std::vector<std::string> genders;      // NOUN
  std::vector<std::string> upper_types;  // NOUN
  std::vector<std::string> lower_types;  // NOUN
  std::vector<std::string> colors;       // ADJ
  std::vector<std::string> accessories;  // NOUN
  std::vector<std::string> actions;      // VERB

  static AttributeCatalog standard();
  std::array<std::size_t, 7> sizes() const;
};

enum Attribute : std::size_t {
  kGender = 0,
  kUpperType,
  kUpperColor,
  kLowerType,
  kLowerColor,
  kAccessory,
  kAction,
  kAttributeCount
};

using PersonAttributes = std::array<std::size_t, kAttributeCount>;

std::size_t attribute_differences(const PersonAttributes& a, const PersonAttributes& b);

/// Per-image nuisance factors.
struct RenderVariation {
  int shift_x = 0;
  float background = 0.5f;
  float noise = 0.0f;
  std::uint64_t noise_seed = 0;
};

ImageGrid render_person(const PersonAttributes& attrs, const AttributeCatalog& catalog,
                        const RenderVariation& variation, std::uint32_t identity_id, std::size_t height = 32,
                        std::size_t width = 32);

/// Number of caption templates available to describe_person.
std::size_t caption_template_count();
Caption describe_person(const PersonAttributes& attrs, const AttributeCatalog& catalog, std::size_t template_index,
                        std::uint32_t identity_id);

struct SyntheticSpec {
  std::size_t n_identities = 200;
  std::size_t images_per_identity = 4;
  std::size_t captions_per_image = 2;
  double confuser_rate = 0.2;
  double noise = 0.05;
  std::uint64_t seed = 7;
  std::size_t height = 32;
  std::size_t width = 32;
  AttributeCatalog catalog = AttributeCatalog::standard();

  void validate() const;
};

struct Dataset {
  std::vector<ImageGrid> images;
  std::vector<Caption> captions;  // image_index set on every caption
  std::vector<PersonAttributes> identities;
  std::vector<bool> confuser;      // identity was derived from another by one attribute change
};

/// Identities are drawn so that non-confusers differ pairwise in at least two
/// attributes; confusers copy an earlier identity and change exactly one.
Dataset generate_dataset(const SyntheticSpec& spec);

/// Directory layout: images.bin, captions.jsonl, identities.json.
void save_dataset(const Dataset& data, const AttributeCatalog& catalog, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct Split {
  std::vector<std::uint32_t> train, val, test;  // identity ids
};

/// Seeded identity-disjoint partition.
Split split_identities(std::size_t n_identities, double val_fraction, double test_fraction, std::uint64_t seed);

/// Images and captions of the given identities, with image_index remapped.
Dataset subset(const Dataset& data, const std::vector<std::uint32_t>& identity_ids);

}  // namespace mefa::harness

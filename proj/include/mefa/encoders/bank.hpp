#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mefa/encoders/encoder.hpp"

namespace mefa {

enum class Modality : std::uint32_t { kImage = 0, kText = 1, kSimilarity = 2 };

struct BankItem {
  std::uint32_t identity_id = 0;
  std::size_t local_count = 0;
  std::vector<float> global_feat;  // [D]
  std::vector<float> locals;       // [local_count×D]

  bool operator==(const BankItem&) const = default;
};

/// Detached per-item embeddings of one modality with an identity index.
class EmbeddingBank {
 public:
  EmbeddingBank(Modality modality, std::size_t dim) : modality_(modality), dim_(dim) {}

  template <typename T>
  static EmbeddingBank from_batch(const EncodedBatch<T>& batch, Modality modality);

  void add(BankItem item);
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t dim() const { return dim_; }
  Modality modality() const { return modality_; }
  const BankItem& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<BankItem>& items() const { return items_; }
  /// Positions of the items with the given identity, ascending.
  const std::vector<std::size_t>& positions_of(std::uint32_t identity_id) const;
  std::vector<std::uint32_t> identity_ids() const;
  /// [size×D] matrix of global features.
  std::vector<float> global_matrix() const;

  bool operator==(const EmbeddingBank& o) const {
    return modality_ == o.modality_ && dim_ == o.dim_ && items_ == o.items_;
  }

 private:
  Modality modality_;
  std::size_t dim_;
  std::vector<BankItem> items_;
  std::map<std::uint32_t, std::vector<std::size_t>> index_;
};

/// Binary format: magic "MEFAEMB1", u32 {version=1, modality, item_count, D},
/// then per item {u32 identity_id, u32 local_count, f32 global[D],
/// f32 locals[local_count×D]}; all little-endian.
void save_bank(const EmbeddingBank& bank, const std::string& path);
EmbeddingBank load_bank(const std::string& path);
std::vector<char> serialize_bank(const EmbeddingBank& bank);
EmbeddingBank deserialize_bank(std::vector<char> bytes);

}  // namespace mefa

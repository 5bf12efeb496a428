#include "mefa/encoders/bank.hpp"

#include "mefa/errors.hpp"
#include "mefa/io/binary.hpp"

namespace mefa {

namespace {
constexpr std::string_view kMagic = "MEFAEMB1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

template <typename T>
EmbeddingBank EmbeddingBank::from_batch(const EncodedBatch<T>& batch, Modality modality) {
  const std::size_t d = batch.globals.cols();
  EmbeddingBank bank(modality, d);
  const auto& g = batch.globals.data();
  const auto& l = batch.locals.data();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    BankItem item;
    item.identity_id = batch.identity_ids[i];
    item.local_count = batch.local_count(i);
    item.global_feat.assign(g.begin() + i * d, g.begin() + (i + 1) * d);
    item.locals.assign(l.begin() + batch.offsets[i] * d, l.begin() + batch.offsets[i + 1] * d);
    bank.add(std::move(item));
  }
  return bank;
}

template EmbeddingBank EmbeddingBank::from_batch(const EncodedBatch<float>&, Modality);
template EmbeddingBank EmbeddingBank::from_batch(const EncodedBatch<double>&, Modality);

void EmbeddingBank::add(BankItem item) {
  if (item.global_feat.size() != dim_ || item.locals.size() != item.local_count * dim_) {
    throw DimensionError("bank item does not match dimension " + std::to_string(dim_));
  }
  index_[item.identity_id].push_back(items_.size());
  items_.push_back(std::move(item));
}

const std::vector<std::size_t>& EmbeddingBank::positions_of(std::uint32_t identity_id) const {
  static const std::vector<std::size_t> kNone;
  const auto it = index_.find(identity_id);
  return it == index_.end() ? kNone : it->second;
}

std::vector<std::uint32_t> EmbeddingBank::identity_ids() const {
  std::vector<std::uint32_t> ids;
  ids.reserve(items_.size());
  for (const auto& it : items_) ids.push_back(it.identity_id);
  return ids;
}

std::vector<float> EmbeddingBank::global_matrix() const {
  std::vector<float> out;
  out.reserve(items_.size() * dim_);
  for (const auto& it : items_) out.insert(out.end(), it.global_feat.begin(), it.global_feat.end());
  return out;
}

std::vector<char> serialize_bank(const EmbeddingBank& bank) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(bank.modality()));
  w.u32(static_cast<std::uint32_t>(bank.size()));
  w.u32(static_cast<std::uint32_t>(bank.dim()));
  for (const auto& item : bank.items()) {
    w.u32(item.identity_id);
    w.u32(static_cast<std::uint32_t>(item.local_count));
    for (float v : item.global_feat) w.f32(v);
    for (float v : item.locals) w.f32(v);
  }
  return w.buffer();
}

EmbeddingBank deserialize_bank(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad magic, expected MEFAEMB1", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kVersion) throw FormatError("unsupported bank version", version_at);
  const std::size_t modality_at = r.offset();
  const std::uint32_t modality = r.u32("modality");
  if (modality > 2) throw FormatError("unknown modality tag " + std::to_string(modality), modality_at);
  const std::uint32_t count = r.u32("item_count");
  const std::uint32_t dim = r.u32("dimension");
  EmbeddingBank bank(static_cast<Modality>(modality), dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    BankItem item;
    item.identity_id = r.u32("identity_id");
    item.local_count = r.u32("local_count");
    if (r.remaining() / 4 / (dim ? dim : 1) < item.local_count + 1 && dim) {
      throw FormatError("truncated file reading item " + std::to_string(i), r.offset());
    }
    item.global_feat.resize(dim);
    for (auto& v : item.global_feat) v = r.f32("global");
    item.locals.resize(item.local_count * dim);
    for (auto& v : item.locals) v = r.f32("locals");
    bank.add(std::move(item));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last item", r.offset());
  return bank;
}

void save_bank(const EmbeddingBank& bank, const std::string& path) { io::write_file(path, serialize_bank(bank)); }

EmbeddingBank load_bank(const std::string& path) { return deserialize_bank(io::read_file(path)); }

}  // namespace mefa

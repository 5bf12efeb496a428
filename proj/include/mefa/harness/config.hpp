#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "mefa/cmr/cmr.hpp"
#include "mefa/dcc/dcc.hpp"
#include "mefa/encoders/encoder.hpp"
#include "mefa/harness/lamb.hpp"
#include "mefa/harness/synthetic.hpp"
#include "mefa/imr/losses.hpp"

namespace mefa::harness {

using Json = nlohmann::ordered_json;

/// Which loss paths contribute. base_itc is identity-aware InfoNCE on the
/// encoder globals, the alignment every ablation row starts from.
struct Toggles {
  bool base_itc = true;
  bool imr_t = true;
  bool imr_v = true;
  bool cmr = true;
  bool dcc = true;

  bool any() const { return base_itc || imr_t || imr_v || cmr || dcc; }
  bool operator==(const Toggles&) const = default;
};

struct TrainConfig {
  EncoderConfig encoder;
  std::size_t batch_size = 32;
  std::size_t epochs = 12;
  double lr_start = 1e-6;
  double lr_end = 1e-5;
  double lambda_itc = 1.0;
  double lambda_imr = 1.0;
  double lambda_imc = 1.0;
  double lambda_nitc = 1.0;
  double lambda_ditc = 1.0;
  double tau_itc = 0.07;
  Toggles toggles;
  imr::ImrLossParams imr;
  std::size_t visual_k = 5;
  cmr::CmrConfig cmr;
  dcc::DccParams dcc;
  LambConfig lamb;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 1;
  /// Kernel threads; 0 keeps the runtime default. Does not affect results.
  std::size_t threads = 0;

  void validate() const;
};

Json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const Json& j);
TrainConfig load_train_config(const std::string& path);

Json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const Json& j);

Json to_json(const Toggles& t);
Toggles toggles_from_json(const Json& j);

/// 16 hex digits of 64-bit FNV-1a over the canonical JSON (threads excluded).
std::string config_fingerprint(const TrainConfig& config);
std::string fnv1a_hex(const std::string& bytes);

/// manifest.json: tool version, command, seed, config fingerprint, plus extras.
void write_manifest(const std::string& dir, const std::string& command, std::uint64_t seed,
                    const std::string& fingerprint, const Json& extra = Json::object());

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mefa::harness

#pragma once

// Self-describing checkpoint container.
//
//   "IACK" | u32 version | string metadata (JSON) | u32 count |
//   count x { string name | u32 flags | u32 rank | rank x u32 dim | float32 payload }
//
// Strings are u32 length-prefixed; all integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "integral_action/model.hpp"
#include "integral_action/nn.hpp"
#include "integral_action/tensor.hpp"

namespace integral_action {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  bool is_buffer = false;
  bool frozen = false;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::string variant;  // ModelVariant tag
  std::string stage;    // "init", "stream", "integrator"
  nlohmann::json metadata = nlohmann::json::object();  // epoch, scores, rng state, config snapshot
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of every parameter and buffer of a model, in canonical order.
Checkpoint capture_checkpoint(ActionModel<float>& model, const std::string& stage);

// Copies tensors whose names match a model parameter. With `require_all`, every model
// parameter must be present. Shape mismatches always throw. Returns the count copied.
std::size_t load_parameters(ActionModel<float>& model, const Checkpoint& ckpt, bool require_all);
// Restricted to names starting with `prefix` (e.g. "appearance.").
std::size_t load_parameters_with_prefix(ActionModel<float>& model, const Checkpoint& ckpt,
                                        const std::string& prefix);

// FNV-1a over names, shapes and raw float bits of the given parameters.
std::uint64_t parameter_hash(const nn::ParameterRefs<float>& params);

std::string rng_state_string(const nn::Rng& rng);
nn::Rng rng_from_state_string(const std::string& state);

}  // namespace integral_action

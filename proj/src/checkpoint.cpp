#include "integral_action/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "integral_action/binary_io.hpp"

namespace integral_action {

using nlohmann::json;

namespace {

constexpr std::uint32_t kFlagBuffer = 1u;
constexpr std::uint32_t kFlagFrozen = 2u;

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  binary::write_magic(os, "IACK");
  binary::write_u32(os, kCheckpointVersion);
  const json header{{"variant", ckpt.variant}, {"stage", ckpt.stage}, {"metadata", ckpt.metadata}};
  binary::write_string(os, header.dump());
  binary::write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    binary::write_string(os, t.name);
    binary::write_u32(os, (t.is_buffer ? kFlagBuffer : 0u) | (t.frozen ? kFlagFrozen : 0u));
    binary::write_u32(os, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) binary::write_u32(os, static_cast<std::uint32_t>(d));
    binary::write_f32_array(os, t.value.data(), t.value.size());
  }
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  binary::expect_magic(is, "IACK");
  const auto version = binary::read_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const json header = json::parse(binary::read_string(is));
  ckpt.variant = header.at("variant").get<std::string>();
  ckpt.stage = header.at("stage").get<std::string>();
  ckpt.metadata = header.at("metadata");
  const auto count = binary::read_u32(is);
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = binary::read_string(is);
    const auto flags = binary::read_u32(is);
    t.is_buffer = (flags & kFlagBuffer) != 0;
    t.frozen = (flags & kFlagFrozen) != 0;
    Shape shape(binary::read_u32(is));
    for (auto& d : shape) d = binary::read_u32(is);
    t.value = Tensor<float>(shape);
    binary::read_f32_array(is, t.value.data(), t.value.size());
    ckpt.tensors.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint capture_checkpoint(ActionModel<float>& model, const std::string& stage) {
  Checkpoint ckpt;
  ckpt.variant = to_string(model.config().variant);
  ckpt.stage = stage;
  for (auto* p : model.parameters()) ckpt.tensors.push_back({p->name, p->value, p->is_buffer, p->frozen});
  return ckpt;
}

namespace {

std::size_t copy_matching(ActionModel<float>& model, const Checkpoint& ckpt, const std::string& prefix,
                          bool require_all) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  std::size_t copied = 0;
  for (auto* p : model.parameters()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      if (require_all) throw std::invalid_argument("checkpoint is missing parameter " + p->name);
      continue;
    }
    if (it->second->value.shape() != p->value.shape()) {
      throw std::invalid_argument("checkpoint parameter " + p->name + " has shape " +
                                  shape_string(it->second->value.shape()) + ", model expects " +
                                  shape_string(p->value.shape()));
    }
    p->value = it->second->value;
    ++copied;
  }
  return copied;
}

}  // namespace

std::size_t load_parameters(ActionModel<float>& model, const Checkpoint& ckpt, bool require_all) {
  return copy_matching(model, ckpt, "", require_all);
}

std::size_t load_parameters_with_prefix(ActionModel<float>& model, const Checkpoint& ckpt,
                                        const std::string& prefix) {
  const std::size_t n = copy_matching(model, ckpt, prefix, false);
  if (n == 0) throw std::invalid_argument("checkpoint has no parameters under '" + prefix + "'");
  return n;
}

std::uint64_t parameter_hash(const nn::ParameterRefs<float>& params) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFFu;
      h *= 0x100000001B3ull;
    }
  };
  for (const auto* p : params) {
    for (char c : p->name) mix(static_cast<unsigned char>(c));
    for (std::size_t d : p->value.shape()) mix(d);
    for (float v : p->value.values()) mix(std::bit_cast<std::uint32_t>(v));
  }
  return h;
}

std::string rng_state_string(const nn::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

nn::Rng rng_from_state_string(const std::string& state) {
  nn::Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::invalid_argument("malformed rng state");
  return rng;
}

}  // namespace integral_action

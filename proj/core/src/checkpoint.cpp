#include "lcm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "lcm/digest.hpp"
#include "lcm/errors.hpp"

namespace lcm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kWeights = "weights.bin";

constexpr const char* native_dtype() { return sizeof(Scalar) == 8 ? "f64" : "f32"; }

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "f32") return 4;
  throw CorruptionError("unknown dtype '" + dtype + "' in manifest");
}

template <typename T>
void append_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace

std::string save_checkpoint(const fs::path& dir, std::span<const NamedTensor> tensors,
                            const json& metadata) {
  std::set<std::string> names;
  std::string blob;
  json table = json::array();
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) throw InvalidArgument("duplicate tensor name '" + t.name + "'");
    const std::size_t offset = blob.size();
    for (const Scalar v : t.value.data()) append_le(blob, v);
    table.push_back({{"name", t.name},
                     {"shape", t.value.shape()},
                     {"dtype", native_dtype()},
                     {"offset", offset},
                     {"length", blob.size() - offset}});
  }
  const std::string digest = sha256_hex(blob);
  json manifest = {{"format_version", kCheckpointFormatVersion},
                   {"tensors", std::move(table)},
                   {"metadata", metadata},
                   {"sha256", digest}};
  fs::create_directories(dir);
  write_file(dir / kWeights, blob);
  write_file(dir / kManifest, manifest.dump(2) + "\n");
  return digest;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CorruptionError("checkpoint directory " + dir.string() + " not found");
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifest));
  } catch (const json::exception& e) {
    throw CorruptionError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw UnsupportedVersionError("checkpoint format version " + std::to_string(version) +
                                    " is not supported (expected " +
                                    std::to_string(kCheckpointFormatVersion) + ")");
    }
    const std::string blob = read_file(dir / kWeights);
    Checkpoint ckpt;
    ckpt.sha256 = manifest.at("sha256").get<std::string>();
    ckpt.metadata = manifest.value("metadata", json::object());

    std::size_t cursor = 0;
    std::set<std::string> names;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (!names.insert(name).second) throw CorruptionError("duplicate tensor '" + name + "'");
      const auto shape = entry.at("shape").get<Shape>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      const std::size_t width = dtype_size(dtype);
      if (offset != cursor || length != shape_numel(shape) * width) {
        throw CorruptionError("tensor table entry '" + name + "' has inconsistent offset/length");
      }
      if (offset + length > blob.size()) {
        throw CorruptionError("weights.bin is truncated: '" + name + "' needs bytes up to " +
                              std::to_string(offset + length) + ", file has " +
                              std::to_string(blob.size()));
      }
      std::vector<Scalar> values(shape_numel(shape));
      for (std::size_t i = 0; i < values.size(); ++i) {
        const char* p = blob.data() + offset + i * width;
        values[i] = width == 8 ? static_cast<Scalar>(read_le<double>(p))
                               : static_cast<Scalar>(read_le<float>(p));
      }
      ckpt.tensors.push_back({name, Tensor(shape, std::move(values))});
      cursor = offset + length;
    }
    if (cursor != blob.size()) {
      throw CorruptionError("weights.bin has " + std::to_string(blob.size()) +
                            " bytes but the tensor table covers " + std::to_string(cursor));
    }
    if (sha256_hex(blob) != ckpt.sha256) {
      throw CorruptionError("SHA-256 of weights.bin does not match manifest in " + dir.string());
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw CorruptionError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const NumericError& e) {
    throw CorruptionError("non-finite value in " + dir.string() + ": " + e.what());
  }
}

json to_json(const DenoiserConfig& c) {
  return {{"data_dim", c.data_dim},
          {"widths", c.hidden},
          {"time_features", c.time_features},
          {"guidance_features", c.guidance_features},
          {"cond_dim", c.cond_dim},
          {"num_conditions", c.num_conditions},
          {"omega_ref", c.omega_ref}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.data_dim = j.at("data_dim").get<std::size_t>();
  c.hidden = j.at("widths").get<std::vector<std::size_t>>();
  c.time_features = j.at("time_features").get<std::size_t>();
  c.guidance_features = j.at("guidance_features").get<std::size_t>();
  c.cond_dim = j.at("cond_dim").get<std::size_t>();
  c.num_conditions = j.at("num_conditions").get<std::size_t>();
  c.omega_ref = j.at("omega_ref").get<double>();
  return c;
}

json to_json(const NoiseSchedule& s) {
  return {{"N", s.steps()}, {"beta_min", s.beta_min()}, {"beta_max", s.beta_max()}};
}

NoiseSchedule schedule_from_json(const json& j) {
  return NoiseSchedule::linear(j.at("N").get<std::size_t>(), j.at("beta_min").get<double>(),
                               j.at("beta_max").get<double>());
}

std::string save_net(const fs::path& dir, const DenoiserNet& net, const NoiseSchedule& schedule,
                     const json& config_echo) {
  const json meta = {{"kind", "net"},
                     {"net", to_json(net.config())},
                     {"schedule", to_json(schedule)},
                     {"fingerprint", net.fingerprint()},
                     {"config", config_echo}};
  return save_checkpoint(dir, net.parameters(), meta);
}

NetCheckpoint load_net(const fs::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  try {
    if (ckpt.metadata.at("kind") != "net") {
      throw IncompatibleError(dir.string() + " holds an adapter, not a network");
    }
    const DenoiserConfig config = denoiser_config_from_json(ckpt.metadata.at("net"));
    NoiseSchedule schedule = schedule_from_json(ckpt.metadata.at("schedule"));
    DenoiserNet net = DenoiserNet::from_parameters(config, std::move(ckpt.tensors));
    return NetCheckpoint{std::move(net), std::move(schedule), std::move(ckpt.metadata),
                         std::move(ckpt.sha256)};
  } catch (const json::exception& e) {
    throw CorruptionError("malformed network metadata in " + dir.string() + ": " + e.what());
  }
}

std::string save_adapter(const fs::path& dir, const AdapterBundle& bundle, const json& config_echo) {
  std::vector<NamedTensor> tensors;
  json entries = json::object();
  std::vector<std::string> targets;
  for (const auto& [layer, e] : bundle.adapter.entries()) {
    tensors.push_back({layer + ".lora_a", e.a});
    tensors.push_back({layer + ".lora_b", e.b});
    entries[layer] = {{"rank", e.rank}, {"scale", e.scale}};
    targets.push_back(layer);
  }
  json meta = {{"kind", "adapter"},
               {"role", std::string(to_string(bundle.role))},
               {"name", bundle.name},
               {"fingerprint", bundle.adapter.base_fingerprint()},
               {"targets", targets},
               {"entries", std::move(entries)},
               {"config", config_echo}};
  if (bundle.provenance) {
    const auto& p = *bundle.provenance;
    meta["provenance"] = {{"lambda_style", p.lambda_style},
                          {"lambda_accel", p.lambda_accel},
                          {"style_source", p.style_source},
                          {"accel_source", p.accel_source}};
  }
  return save_checkpoint(dir, tensors, meta);
}

AdapterCheckpoint load_adapter(const fs::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  try {
    const json& meta = ckpt.metadata;
    if (meta.at("kind") != "adapter") {
      throw IncompatibleError(dir.string() + " holds a network, not an adapter");
    }
    std::map<std::string, Tensor, std::less<>> by_name;
    for (auto& t : ckpt.tensors) by_name.emplace(t.name, std::move(t.value));
    AdapterBundle bundle;
    for (const auto& [layer, info] : meta.at("entries").items()) {
      const auto a = by_name.find(layer + ".lora_a");
      const auto b = by_name.find(layer + ".lora_b");
      if (a == by_name.end() || b == by_name.end()) {
        throw CorruptionError("adapter entry '" + layer + "' is missing a factor");
      }
      bundle.adapter.insert(layer, LoraEntry{a->second, b->second, info.at("rank").get<std::size_t>(),
                                             info.at("scale").get<double>()});
    }
    if (by_name.size() != 2 * bundle.adapter.entries().size()) {
      throw CorruptionError("adapter in " + dir.string() + " has stray tensors");
    }
    bundle.adapter.set_base_fingerprint(meta.at("fingerprint").get<std::string>());
    bundle.role = parse_adapter_role(meta.at("role").get<std::string>());
    bundle.name = meta.value("name", std::string(to_string(bundle.role)));
    if (meta.contains("provenance")) {
      const json& p = meta.at("provenance");
      bundle.provenance = CombineProvenance{p.at("lambda_style").get<double>(),
                                            p.at("lambda_accel").get<double>(),
                                            p.value("style_source", ""), p.value("accel_source", "")};
    }
    return AdapterCheckpoint{std::move(bundle), std::move(ckpt.metadata), std::move(ckpt.sha256)};
  } catch (const json::exception& e) {
    throw CorruptionError("malformed adapter metadata in " + dir.string() + ": " + e.what());
  }
}

}  // namespace lcm

// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>

#include "sparseforge/errors.hpp"

namespace sparseforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "sparseforge-checkpoint";
constexpr int kVersion = 1;

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename T>
void write_values(const fs::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError(fmt::format("cannot write {}", path.string()));
  for (T v : values) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  }
}

template <typename T>
std::vector<T> read_values(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError(fmt::format("cannot read {}", path.string()));
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::array<char, sizeof(T)> bytes;
    if (!in.read(bytes.data(), sizeof(T))) throw RunError(fmt::format("{} is truncated", path.string()));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&out[i], bytes.data(), sizeof(T));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw RunError(fmt::format("{} has trailing bytes", path.string()));
  return out;
}

json to_json(const ArchitectureSpec& s) {
  return json{{"vocab_size", s.vocab_size}, {"hidden_dim", s.hidden_dim},       {"num_layers", s.num_layers},
              {"num_heads", s.num_heads},   {"ffn_dim", s.ffn_dim},             {"max_positions", s.max_positions},
              {"num_segments", s.num_segments}, {"num_labels", s.num_labels}};
}

ArchitectureSpec architecture_from_json(const json& j) {
  ArchitectureSpec s;
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  s.num_layers = j.at("num_layers").get<std::size_t>();
  s.num_heads = j.at("num_heads").get<std::size_t>();
  s.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  s.max_positions = j.at("max_positions").get<std::size_t>();
  s.num_segments = j.at("num_segments").get<std::size_t>();
  s.num_labels = j.at("num_labels").get<std::size_t>();
  return s;
}

json to_json(const ScopePolicy& p) {
  json tags = json::array();
  for (ComponentTag t : p.included) tags.push_back(std::string(to_string(t)));
  return json{{"include", tags}, {"granularity", std::string(to_string(p.granularity))}};
}

ScopePolicy scope_from_json(const json& j) {
  ScopePolicy p;
  p.included.clear();
  for (const auto& t : j.at("include")) p.included.insert(component_tag_from_string(t.get<std::string>()));
  p.granularity = granularity_from_string(j.at("granularity").get<std::string>());
  return p;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError(fmt::format("cannot read {}", path.string()));
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw RunError(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

}  // namespace

std::vector<std::uint8_t> pack_bits(const Mask& mask) {
  std::vector<std::uint8_t> packed((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) packed[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
  }
  return packed;
}

Mask unpack_bits(const std::vector<std::uint8_t>& packed, std::size_t count) {
  if (packed.size() != (count + 7) / 8) {
    throw ContractError(fmt::format("{} packed bytes cannot hold exactly {} bits", packed.size(), count));
  }
  Mask mask(count);
  for (std::size_t i = 0; i < count; ++i) mask[i] = (packed[i / 8] >> (i % 8)) & 1U;
  return mask;
}

template <typename T>
void save_checkpoint(const fs::path& dir, const Model<T>& model, std::uint64_t seed, std::uint64_t step,
                     const MaskSet* masks, const MaskManifest* mask_manifest) {
  fs::create_directories(dir / "params");
  json tensors = json::array();
  for (const auto& p : model.parameters()) {
    const std::string file = "params/" + p.info.name + ".bin";
    write_values<T>(dir / file, p.value.data());
    tensors.push_back(json{{"name", p.info.name},
                           {"tag", std::string(to_string(p.info.tag))},
                           {"shape", p.info.shape},
                           {"file", file}});
  }
  json manifest{{"format", kFormat},
                {"version", kVersion},
                {"precision", precision_name<T>()},
                {"seed", seed},
                {"step", step},
                {"architecture", to_json(model.spec())},
                {"forward",
                 {{"activation", std::string(to_string(model.config().activation))},
                  {"dropout", model.config().dropout}}},
                {"tensors", tensors}};
  write_json(dir / "manifest.json", manifest);

  if (masks == nullptr) return;
  check_masks(model.layout(), *masks);
  fs::create_directories(dir / "masks");
  json entries = json::array();
  for (const auto& [id, mask] : masks->masks()) {
    const std::string& name = model.parameters()[id].info.name;
    const std::string file = name + ".bits";
    const auto packed = pack_bits(mask);
    std::ofstream out(dir / "masks" / file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    entries.push_back(json{{"name", name}, {"numel", mask.size()}, {"file", file}});
  }
  const MaskManifest meta = mask_manifest != nullptr ? *mask_manifest : MaskManifest{ScopePolicy{}, step, masks->sparsity()};
  write_json(dir / "masks" / "manifest.json", json{{"scope", to_json(meta.scope)},
                                                   {"step", meta.step},
                                                   {"achieved_sparsity", meta.achieved_sparsity},
                                                   {"tensors", entries}});
}

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != kFormat) throw RunError(fmt::format("{} is not a checkpoint", dir.string()));
  const ArchitectureSpec spec = architecture_from_json(manifest.at("architecture"));
  ForwardConfig config;
  config.activation = activation_from_string(manifest.at("forward").at("activation").get<std::string>());
  config.dropout = manifest.at("forward").at("dropout").get<double>();
  Checkpoint<T> ckpt{Model<T>(spec, config), manifest.at("seed").get<std::uint64_t>(),
                     manifest.at("step").get<std::uint64_t>(), std::nullopt, std::nullopt};
  const std::string precision = manifest.at("precision").get<std::string>();
  for (const auto& entry : manifest.at("tensors")) {
    auto& param = ckpt.model.parameter(entry.at("name").get<std::string>());
    if (entry.at("shape").get<Shape>() != param.info.shape) {
      throw RunError(fmt::format("checkpoint tensor '{}' has an unexpected shape", param.info.name));
    }
    const fs::path file = dir / entry.at("file").get<std::string>();
    const std::size_t n = param.value.numel();
    if (precision == "float32") {
      param.value = Tensor<float>(param.info.shape, read_values<float>(file, n)).template cast<T>();
    } else if (precision == "float64") {
      param.value = Tensor<double>(param.info.shape, read_values<double>(file, n)).template cast<T>();
    } else {
      throw RunError(fmt::format("unknown checkpoint precision '{}'", precision));
    }
  }

  const fs::path mask_manifest = dir / "masks" / "manifest.json";
  if (fs::exists(mask_manifest)) {
    const json meta = read_json(mask_manifest);
    MaskSet masks;
    for (const auto& entry : meta.at("tensors")) {
      const std::size_t id = ckpt.model.index_of(entry.at("name").get<std::string>());
      const std::size_t numel = entry.at("numel").get<std::size_t>();
      std::ifstream in(dir / "masks" / entry.at("file").get<std::string>(), std::ios::binary);
      std::vector<std::uint8_t> packed((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      masks.set(id, unpack_bits(packed, numel));
    }
    check_masks(ckpt.model.layout(), masks);
    ckpt.masks = std::move(masks);
    ckpt.mask_manifest = MaskManifest{scope_from_json(meta.at("scope")), meta.at("step").get<std::uint64_t>(),
                                      meta.at("achieved_sparsity").get<double>()};
  }
  return ckpt;
}

template void save_checkpoint(const fs::path&, const Model<float>&, std::uint64_t, std::uint64_t, const MaskSet*,
                              const MaskManifest*);
template void save_checkpoint(const fs::path&, const Model<double>&, std::uint64_t, std::uint64_t, const MaskSet*,
                              const MaskManifest*);
template Checkpoint<float> load_checkpoint(const fs::path&);
template Checkpoint<double> load_checkpoint(const fs::path&);

}  // namespace sparseforge

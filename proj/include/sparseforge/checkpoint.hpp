// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "sparseforge/model.hpp"
#include "sparseforge/pruning.hpp"

namespace sparseforge {

/// Mask metadata recorded next to the bit-packed mask files.
struct MaskManifest {
  ScopePolicy scope;
  std::uint64_t step = 0;
  double achieved_sparsity = 0.0;
};

/// On-disk layout:
///   manifest.json          architecture, forward config, seed, step, precision, tensor list
///   params/<name>.bin      raw little-endian values, row-major
///   masks/manifest.json    scope policy, step, achieved sparsity (when masks are saved)
///   masks/<name>.bits      one bit per weight, LSB first, 1 = kept
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Model<T>& model, std::uint64_t seed, std::uint64_t step,
                     const MaskSet* masks = nullptr, const MaskManifest* mask_manifest = nullptr);

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::optional<MaskSet> masks;
  std::optional<MaskManifest> mask_manifest;
};

/// Loads a checkpoint, converting stored values to T when the precision differs.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir);

std::vector<std::uint8_t> pack_bits(const Mask& mask);
Mask unpack_bits(const std::vector<std::uint8_t>& packed, std::size_t count);

}  // namespace sparseforge

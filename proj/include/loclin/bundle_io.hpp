#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "loclin/frozen.hpp"

namespace loclin {

// Container layout (all integers little-endian):
//   bytes 0..7    magic "LLTENSR1"
//   bytes 8..15   u64 manifest length N
//   next N bytes  UTF-8 JSON manifest
//   remainder     payload, IEEE-754 f32 little-endian, row-major
// Manifest keys, in this order: format_version, config (object or null),
// tensors [{name, dtype "f32", shape, byte_offset}], checksum (FNV-1a 64 of
// the payload as 16 lowercase hex digits). Offsets are relative to the
// payload start.

inline constexpr int kFormatVersion = 1;
inline constexpr char kMagic[8] = {'L', 'L', 'T', 'E', 'N', 'S', 'R', '1'};

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  std::size_t element_count() const;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct TensorFile {
  std::optional<ModelConfig> config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize(const TensorFile& file);
TensorFile deserialize(std::span<const std::uint8_t> bytes);

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path);
TensorFile read_tensor_file(const std::filesystem::path& path);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json);

std::vector<NamedTensor> bundle_tensors(const ModelBundle& bundle);
ModelBundle bundle_from_tensors(const TensorFile& file);

void write_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle read_bundle(const std::filesystem::path& path);

/// Analysis tensors (Jacobian blocks, SVD panels, frozen state) use the same
/// container with a null config.
void export_tensors(const std::vector<NamedTensor>& tensors,
                    const std::filesystem::path& path);

NamedTensor matrix_tensor(std::string name, const Matrix& m);
NamedTensor matrix_tensor(std::string name, const DMatrix& m);
Matrix tensor_matrix(const NamedTensor& t);

/// Names: frozen.layers.{i}.attn_norm_divisor [k], .mlp_norm_divisor [k],
/// .mlp_gate [k, d_ff], .attn_probs [heads, k, k]; frozen.final_norm_divisor
/// [k]; frozen.meta [6] = (seq_len, d_model, anchor hash as four 16-bit
/// limbs, least significant first).
std::vector<NamedTensor> frozen_tensors(const FrozenState& frozen);
FrozenState frozen_from_tensors(const TensorFile& file);

}  // namespace loclin

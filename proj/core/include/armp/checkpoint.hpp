#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "armp/nn.hpp"
#include "armp/tensor.hpp"

namespace armp::ckpt {

/// ARMP checkpoint container (little-endian):
///   magic "ARMP", u16 version=1,
///   u32 config_len, config bytes (canonical config text),
///   u32 tensor_count, per tensor:
///     u16 name_len, name, u8 dtype (0 = f32), u8 rank, u32 dims[rank],
///     f32 data (row-major),
///   u32 CRC-32 of everything before it.
/// The checksum is verified before any parsing.
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& config_text, const nn::ParamList& params,
                     const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into the target parameters by name.
/// Missing name, extra name, or shape disagreement is a FormatError.
void load_into(const Checkpoint& ckpt, const nn::ParamList& target);

/// Throws ConfigMismatchError unless the snapshot equals the expected text.
void require_config(const Checkpoint& ckpt, const std::string& expected_config_text);

}  // namespace armp::ckpt

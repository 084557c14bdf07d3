#pragma once

#include <array>
#include <string>
#include <vector>

#include "armp/phantom.hpp"
#include "armp/tensor.hpp"

namespace armp {

/// What the tokenizer sees per phase: intensity, one-hot organ masks, or both.
enum class ChannelMode { kCtOnly, kMaskOnly, kCtAndMask };

inline int channel_count(ChannelMode mode) {
  switch (mode) {
    case ChannelMode::kCtOnly: return 1;
    case ChannelMode::kMaskOnly: return 3;
    case ChannelMode::kCtAndMask: return 4;
  }
  return 0;
}

inline bool mode_has_intensity(ChannelMode m) { return m != ChannelMode::kMaskOnly; }
inline bool mode_has_masks(ChannelMode m) { return m != ChannelMode::kCtOnly; }

const char* channel_mode_name(ChannelMode mode);
ChannelMode channel_mode_from_name(const std::string& name);

/// [C,H,W] model input for one phase: intensity first (when present), then
/// one-hot lung/heart/tumor planes.
Tensor phase_to_channels(const phantom::PhaseVolume& phase, ChannelMode mode);

/// Decoded image split back into per-channel buffers. Mask logits become
/// probabilities here (sigmoid).
struct DecodedChannels {
  std::vector<float> intensity;                    // empty for mask_only
  std::array<std::vector<float>, 3> mask_probs;    // empty for ct_only
};
DecodedChannels split_decoded(const Tensor& decoded, ChannelMode mode);

}  // namespace armp

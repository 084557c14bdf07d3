#include "armp/channels.hpp"

#include <cmath>

namespace armp {

const char* channel_mode_name(ChannelMode mode) {
  switch (mode) {
    case ChannelMode::kCtOnly: return "ct_only";
    case ChannelMode::kMaskOnly: return "mask_only";
    case ChannelMode::kCtAndMask: return "ct_and_mask";
  }
  return "?";
}

ChannelMode channel_mode_from_name(const std::string& name) {
  if (name == "ct_only") return ChannelMode::kCtOnly;
  if (name == "mask_only") return ChannelMode::kMaskOnly;
  if (name == "ct_and_mask") return ChannelMode::kCtAndMask;
  throw ValueError("unknown channel mode: " + name);
}

Tensor phase_to_channels(const phantom::PhaseVolume& phase, ChannelMode mode) {
  const int c = channel_count(mode);
  const size_t px = phase.intensity.size();
  std::vector<float> data(static_cast<size_t>(c) * px, 0.0f);
  int ch = 0;
  if (mode_has_intensity(mode)) {
    std::copy(phase.intensity.begin(), phase.intensity.end(), data.begin());
    ch = 1;
  }
  if (mode_has_masks(mode)) {
    for (int organ = 1; organ <= 3; ++organ) {
      float* plane = data.data() + static_cast<size_t>(ch + organ - 1) * px;
      for (size_t i = 0; i < px; ++i) plane[i] = phase.labels[i] == organ ? 1.0f : 0.0f;
    }
  }
  return Tensor::from_data({c, phase.height, phase.width}, std::move(data));
}

DecodedChannels split_decoded(const Tensor& decoded, ChannelMode mode) {
  if (decoded.rank() != 3 || decoded.dim(0) != channel_count(mode))
    throw ShapeError("split_decoded: channel count mismatch");
  const size_t px = static_cast<size_t>(decoded.dim(1)) * decoded.dim(2);
  DecodedChannels out;
  const auto d = decoded.data();
  int ch = 0;
  if (mode_has_intensity(mode)) {
    out.intensity.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(px));
    ch = 1;
  }
  if (mode_has_masks(mode)) {
    for (int organ = 0; organ < 3; ++organ) {
      const float* plane = d.data() + static_cast<size_t>(ch + organ) * px;
      auto& probs = out.mask_probs[static_cast<size_t>(organ)];
      probs.resize(px);
      for (size_t i = 0; i < px; ++i) {
        const float l = plane[i];
        probs[i] = l >= 0 ? 1.0f / (1.0f + std::exp(-l)) : std::exp(l) / (1.0f + std::exp(l));
      }
    }
  }
  return out;
}

}  // namespace armp

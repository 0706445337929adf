#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace spvnas {

// Encoder stages 0-3 downsample, decoder stages 4-7 upsample.
inline constexpr int kEncoderStages = 4;
inline constexpr int kStages = 8;
// Channel widths are drawn from multiples of this.
inline constexpr int kChannelGranularity = 8;

enum class Family { kSpvcnn, kVoxelOnly };

const char* family_name(Family f);
Family family_from_name(const std::string& name);

// One point of the architecture space.
//
// stage_channels[s][0] is the width of the stage's strided (down or up)
// convolution and stage_channels[s][b] (1 <= b <= m) the output width of
// residual block b - 1. Only the first stage_depths[s] blocks run, so the
// stage output width is stage_channels[s][stage_depths[s]].
struct ArchSpec {
  int input_channels = 4;
  int num_classes = 4;
  double voxel_size = 0.2;
  int stem_channels = 16;
  std::array<std::vector<int>, kStages> stage_channels;
  std::array<int, kStages> stage_depths{};

  int max_depth(int s) const { return static_cast<int>(stage_channels[s].size()) - 1; }
  int stage_output(int s) const { return stage_channels[s][stage_depths[s]]; }
  // Width of the encoder feature concatenated into decoder stage s (4..7).
  int skip_width(int s) const {
    return s == kStages - 1 ? stem_channels : stage_output(kStages - 2 - s);
  }
  int total_depth() const;

  bool operator==(const ArchSpec&) const = default;
};

// Every stage gets `width` channels for all m + 1 layers and depth `depth`.
ArchSpec uniform_arch(int stem, const std::array<int, kStages>& widths, int max_depth, int depth,
                      int input_channels = 4, int num_classes = 4, double voxel_size = 0.2);

// Empty when valid; otherwise one message per violated constraint.
std::vector<std::string> validate(const ArchSpec& spec);
// Throws ConfigError listing every violation.
void require_valid(const ArchSpec& spec);

// True when every width and depth of `inner` fits inside `outer`.
bool fits_within(const ArchSpec& inner, const ArchSpec& outer);

// Canonical JSON: sorted keys, no insignificant whitespace.
std::string to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const std::string& text);

}  // namespace spvnas

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "icanet/tensor.hpp"

namespace icanet::model {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Cumulative strides of the four emitted encoder stages (stages 2..5).
inline constexpr std::array<std::size_t, 4> kStageStrides{4, 8, 16, 32};
inline constexpr std::size_t kNumStages = 4;

/// One atrous CBR in a serial chain.
struct AtrousLayer {
  std::size_t kernel = 1;
  std::size_t dilation = 1;
  friend bool operator==(const AtrousLayer&, const AtrousLayer&) = default;
};

using AtrousChain = std::vector<AtrousLayer>;

/// Branch chains for encoder stage `stage` (2..5). Branch j runs kernels
/// 2j-1, ..., 3, 1; dilations start at {7:4, 5:3, 3:2, 1:1} on stage 2 and are
/// halved (floor, minimum 1) per deeper stage.
inline std::vector<AtrousChain> default_svp_branches(int stage) {
  auto dilation = [stage](std::size_t kernel) {
    std::size_t d = kernel == 7 ? 4 : kernel == 5 ? 3 : kernel == 3 ? 2 : 1;
    for (int s = 2; s < stage; ++s) d = std::max<std::size_t>(1, d / 2);
    return d;
  };
  std::vector<AtrousChain> branches;
  for (std::size_t top : {1u, 3u, 5u, 7u}) {
    AtrousChain chain;
    for (std::size_t k = top; k >= 1; k -= 2) {
      chain.push_back({k, dilation(k)});
      if (k == 1) break;
    }
    branches.push_back(chain);
  }
  return branches;
}

/// Down-sample ratios of the pooled branches for stage `stage` (2..5).
inline std::vector<std::size_t> default_ssp_ratios(int stage) {
  switch (stage) {
    case 2: return {2, 4, 8};
    case 3: return {2, 4};
    case 4: return {2};
    default: return {};
  }
}

struct ModelConfig {
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t unified_channels = 16;
  std::array<std::size_t, 5> backbone_widths{8, 16, 24, 32, 40};
  std::array<std::vector<AtrousChain>, kNumStages> svp_table{
      default_svp_branches(2), default_svp_branches(3), default_svp_branches(4), default_svp_branches(5)};
  std::array<std::vector<std::size_t>, kNumStages> ssp_ratio_table{
      default_ssp_ratios(2), default_ssp_ratios(3), default_ssp_ratios(4), default_ssp_ratios(5)};
  std::size_t bam_reduction = 4;
  std::uint32_t seed = 1;

  // Ablation switches; a disabled extractor acts as identity, a disabled BAM drops its branch.
  bool use_svp = true;
  bool use_ssp = true;
  bool use_bam = true;

  /// Smallest configuration the whole pipeline accepts: 32x32 input, 8 channels.
  static ModelConfig tiny() {
    ModelConfig c;
    c.input_h = c.input_w = 32;
    c.unified_channels = 8;
    c.backbone_widths = {8, 8, 8, 8, 8};
    return c;
  }

  [[nodiscard]] std::size_t stage_h(std::size_t i) const { return input_h / kStageStrides[i]; }
  [[nodiscard]] std::size_t stage_w(std::size_t i) const { return input_w / kStageStrides[i]; }

  void validate() const {
    if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
      throw ConfigError("model: input size must be a positive multiple of 32, got " + std::to_string(input_h) + "x" +
                        std::to_string(input_w));
    }
    if (bam_reduction < 1) throw ConfigError("model: bam_reduction must be >= 1");
    const std::size_t min_width = 2 * bam_reduction;
    if (unified_channels < min_width) {
      throw ConfigError("model: unified_channels must be >= 2 * bam_reduction = " + std::to_string(min_width));
    }
    for (auto w : backbone_widths) {
      if (w < min_width) throw ConfigError("model: backbone widths must be >= 2 * bam_reduction");
    }
    for (std::size_t i = 0; i < kNumStages; ++i) {
      if (svp_table[i].empty()) throw ConfigError("model: svp table missing for stage " + std::to_string(i + 2));
      for (const auto& chain : svp_table[i]) {
        if (chain.empty()) throw ConfigError("model: empty svp branch at stage " + std::to_string(i + 2));
        for (const auto& l : chain) {
          if (l.kernel % 2 == 0 || l.dilation < 1) {
            throw ConfigError("model: svp layers need odd kernels and dilation >= 1");
          }
        }
      }
      for (auto r : ssp_ratio_table[i]) {
        if (r < 1 || stage_h(i) % r != 0 || stage_w(i) % r != 0) {
          throw ConfigError("model: stage " + std::to_string(i + 2) + " extent not divisible by ssp ratio " +
                            std::to_string(r));
        }
      }
    }
  }
};

}  // namespace icanet::model

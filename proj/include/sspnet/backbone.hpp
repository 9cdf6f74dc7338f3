#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "sspnet/autodiff.hpp"
#include "sspnet/rng.hpp"
#include "sspnet/schema.hpp"

namespace sspnet {

// Batched three-level pyramid; levels[i] has shape (B, C, H/s, W/s) with
// stride s = 4 << i.
struct FeaturePyramid {
    std::array<ad::Value, 3> levels;

    const ad::Value& at(Level l) const { return levels[static_cast<size_t>(l)]; }
};

struct BackboneConfig {
    int in_channels = 3;
    std::vector<int> stage_widths{16, 32, 48, 64};  // four stride-2 stages
    int pyramid_channels = 64;                      // C, shared across levels
};

// Strided convolutional stages plus lateral 1x1 merges and a nearest-up
// top-down pathway. All arrays are trainable leaves.
struct BackboneParams {
    BackboneConfig config;
    std::vector<ad::Value> stage_w;  // (width, prev, 3, 3)
    std::vector<ad::Value> stage_b;
    std::array<ad::Value, 3> lateral_w;  // (C, stage_width, 1, 1) for stages 2..4
    std::array<ad::Value, 3> lateral_b;

    static BackboneParams init(const BackboneConfig& config, Rng& rng);

    std::vector<std::pair<std::string, ad::Value>> parameters() const;

    // Same structure with every array wrapped as a constant (for evaluation).
    BackboneParams detached() const;
};

// images: (B, in_channels, H, W) with H, W divisible by 16 and B >= 1.
// Shape checks run before any compute.
FeaturePyramid extract_pyramid(const ad::Value& images, const BackboneParams& params);

}  // namespace sspnet

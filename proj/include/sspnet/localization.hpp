#pragma once

#include <map>
#include <optional>
#include <vector>

#include "sspnet/data.hpp"
#include "sspnet/tensor.hpp"

namespace sspnet::loc {

// Activations of the level feeding an attribute's head, the gradient of the
// attribute logit with respect to them, and the logit itself.
struct CamData {
    Tensor activations;  // (C, h, w)
    Tensor gradients;    // (C, h, w), d(logit)/d(activations)
    double logit = 0.0;
};

// Anything that can produce CamData per (sample, attribute); the trained
// models adapt to this, and tests can plug in hand-built instances.
struct CamSource {
    virtual ~CamSource() = default;
    virtual std::vector<CamData> evaluate(const Sample& sample,
                                          const std::vector<int>& attributes) const = 0;
};

struct AttributeHeatmap {
    int attribute = -1;
    Tensor map;        // (h, w) on the level grid, min-max normalized, >= 0
    Tensor upsampled;  // (H, W) bilinear resize of map
};

struct BinaryMask {
    int height = 0, width = 0;
    std::vector<uint8_t> mask;
    double tau = 0.5;

    bool at(int y, int x) const { return mask[static_cast<size_t>(y) * width + x] != 0; }
};

// Pixel-level weighting: ReLU(sum_k dA_k ⊙ A_k), element-wise per pixel.
Tensor gradcam_pixel_raw(const Tensor& activations, const Tensor& gradients);

// Channel-level weighting (the original formulation, used as a comparison
// baseline in tests): ReLU(sum_k mean(dA_k) * A_k).
Tensor gradcam_channel_raw(const Tensor& activations, const Tensor& gradients);

// (v - min) / (max - min); an all-equal map becomes all ones when positive
// and stays zero otherwise.
Tensor minmax_normalize(const Tensor& map);

AttributeHeatmap gradcam_p(const CamSource& source, const Sample& sample, int attribute,
                           int out_height, int out_width);

// mask[p] = normalized[p] >= tau.
BinaryMask binarize(const Tensor& normalized_map, double tau);

// Tightest axis-aligned rectangle containing every true pixel (one box even
// for disconnected foreground); nullopt for an empty mask.
std::optional<Box> external_rect(const BinaryMask& mask);

struct LocalizationResult {
    std::optional<Box> box;
    double confidence = 0.0;  // sigmoid of the attribute logit
};

// Full pipeline per attribute: Grad-CAM-P -> binarize -> external rectangle.
std::map<int, LocalizationResult> localize(const CamSource& source, const Sample& sample,
                                           const std::vector<int>& attributes, double tau,
                                           int out_height, int out_width);

}  // namespace sspnet::loc

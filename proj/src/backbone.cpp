#include "sspnet/backbone.hpp"

#include <cmath>

namespace sspnet {

namespace {

Tensor conv_init(int out_ch, int in_ch, int k, Rng& rng) {
    Tensor w({out_ch, in_ch, k, k});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * k * k);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

}  // namespace

BackboneParams BackboneParams::init(const BackboneConfig& config, Rng& rng) {
    if (config.stage_widths.size() != 4)
        throw ValidationError("backbone: exactly four stages expected");
    if (config.pyramid_channels <= 0) throw ValidationError("backbone: pyramid channels must be > 0");
    BackboneParams p;
    p.config = config;
    int prev = config.in_channels;
    for (size_t i = 0; i < config.stage_widths.size(); ++i) {
        const int width = config.stage_widths[i];
        p.stage_w.push_back(ad::param(conv_init(width, prev, 3, rng),
                                      "backbone.stage" + std::to_string(i) + ".w"));
        p.stage_b.push_back(
            ad::param(Tensor({width}), "backbone.stage" + std::to_string(i) + ".b"));
        prev = width;
    }
    for (int l = 0; l < 3; ++l) {
        const int src = config.stage_widths[static_cast<size_t>(l) + 1];
        p.lateral_w[static_cast<size_t>(l)] =
            ad::param(conv_init(config.pyramid_channels, src, 1, rng),
                      "backbone.lateral" + std::to_string(l) + ".w");
        p.lateral_b[static_cast<size_t>(l)] = ad::param(Tensor({config.pyramid_channels}),
                                                        "backbone.lateral" + std::to_string(l) + ".b");
    }
    return p;
}

std::vector<std::pair<std::string, ad::Value>> BackboneParams::parameters() const {
    std::vector<std::pair<std::string, ad::Value>> out;
    for (size_t i = 0; i < stage_w.size(); ++i) {
        out.emplace_back(stage_w[i]->tag, stage_w[i]);
        out.emplace_back(stage_b[i]->tag, stage_b[i]);
    }
    for (int l = 0; l < 3; ++l) {
        out.emplace_back(lateral_w[static_cast<size_t>(l)]->tag, lateral_w[static_cast<size_t>(l)]);
        out.emplace_back(lateral_b[static_cast<size_t>(l)]->tag, lateral_b[static_cast<size_t>(l)]);
    }
    return out;
}

BackboneParams BackboneParams::detached() const {
    BackboneParams p;
    p.config = config;
    for (size_t i = 0; i < stage_w.size(); ++i) {
        p.stage_w.push_back(ad::constant(stage_w[i]->val, stage_w[i]->tag));
        p.stage_b.push_back(ad::constant(stage_b[i]->val, stage_b[i]->tag));
    }
    for (int l = 0; l < 3; ++l) {
        p.lateral_w[static_cast<size_t>(l)] = ad::constant(lateral_w[static_cast<size_t>(l)]->val);
        p.lateral_b[static_cast<size_t>(l)] = ad::constant(lateral_b[static_cast<size_t>(l)]->val);
    }
    return p;
}

FeaturePyramid extract_pyramid(const ad::Value& images, const BackboneParams& params) {
    const auto& s = images->val.shape();
    if (s.size() != 4) throw ShapeError("extract_pyramid: images must be (B,C,H,W)");
    const int b = s[0], c = s[1], h = s[2], w = s[3];
    if (b < 1) throw ShapeError("extract_pyramid: empty batch");
    if (c != params.config.in_channels)
        throw ShapeError("extract_pyramid: expected " + std::to_string(params.config.in_channels) +
                         " input channels, got " + std::to_string(c));
    if (h % 16 != 0 || w % 16 != 0)
        throw ShapeError("extract_pyramid: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by 16");

    ad::Value x = images;
    std::vector<ad::Value> stages;
    for (size_t i = 0; i < params.stage_w.size(); ++i) {
        x = ad::relu(ad::conv2d(x, params.stage_w[i], params.stage_b[i], /*stride=*/2, /*pad=*/1));
        stages.push_back(x);
    }
    // stages[1..3] sit at strides 4/8/16
    std::array<ad::Value, 3> lat;
    for (int l = 0; l < 3; ++l)
        lat[static_cast<size_t>(l)] =
            ad::conv2d(stages[static_cast<size_t>(l) + 1], params.lateral_w[static_cast<size_t>(l)],
                       params.lateral_b[static_cast<size_t>(l)], 1, 0);
    FeaturePyramid pyr;
    pyr.levels[2] = lat[2];
    pyr.levels[1] = ad::add(lat[1], ad::upsample2x(pyr.levels[2]));
    pyr.levels[0] = ad::add(lat[0], ad::upsample2x(pyr.levels[1]));
    return pyr;
}

}  // namespace sspnet

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sspnet/data.hpp"

namespace sspnet {

// Patch kinds: "rect" draws a solid rectangle inside the group's vertical
// band and records its tight box; "tint" adds a global colour cast (no box).
struct PatchSpec {
    enum class Kind { Rect, Tint } kind = Kind::Rect;
    std::array<double, 3> color{1.0, 1.0, 1.0};
    int height = 8;
    int width = 8;
    double strength = 1.0;  // tint only
};

struct SyntheticAttribute {
    std::string name;
    std::string group;  // All/Head/Torso/Bottom
    double probability = 0.5;
    PatchSpec patch;
};

struct SyntheticSpec {
    int num_samples = 100;
    int image_height = 64;
    int image_width = 48;
    double noise_sigma = 0.05;
    double clutter = 0.0;  // expected count of distractor speckles per image
    std::vector<SyntheticAttribute> attributes;
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// Schema induced by a synthetic spec: attribute order as declared, canonical
// prior bands and keypoint sets for the groups that occur.
AttributeSchema schema_for_spec(const SyntheticSpec& spec);

// Pure function of (spec, seed): labels, images (8-bit quantized), jittered
// stick-figure keypoints and tight ground-truth boxes for drawn patches.
Dataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed);

}  // namespace sspnet

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sspnet/errors.hpp"

namespace sspnet {

// Pyramid levels P1/P2/P3 at strides 4/8/16.
enum class Level : int { P1 = 0, P2 = 1, P3 = 2 };

inline constexpr std::array<Level, 3> kLevels{Level::P1, Level::P2, Level::P3};

inline int level_stride(Level l) { return 4 << static_cast<int>(l); }
const char* level_name(Level l);
Level level_from_name(const std::string& name);

// Vertical band as fractions of feature-map height, [top, bottom).
struct Region {
    double top_frac = 0.0;
    double bottom_frac = 1.0;
};

// Integer row range [r0, r1) of a region on a map of height h (round half
// away from zero). Throws ValidationError when the range is empty.
std::pair<int, int> region_rows(const Region& region, int h);

struct AttributeGroup {
    std::string name;                    // one of All/Head/Torso/Bottom
    std::vector<int> attribute_indices;  // into AttributeSchema::attributes
    Region region;
    std::vector<int> keypoints;  // indices 0..15
};

struct AttributeSchema {
    int input_height = 256;
    int input_width = 192;
    std::vector<std::string> attributes;
    std::vector<AttributeGroup> groups;  // canonical order Head, Torso, Bottom, All

    int num_attributes() const { return static_cast<int>(attributes.size()); }
    int group_index(const std::string& name) const;  // -1 if absent
    const AttributeGroup& group(const std::string& name) const;
    // group index owning each attribute
    std::vector<int> attribute_group_index() const;
    int attribute_index(const std::string& name) const;  // -1 if absent

    void validate() const;  // throws ValidationError
};

// PA100k schema: 26 attributes, the four canonical groups, prior bands and
// keypoint sets, at a 256x192 input.
AttributeSchema default_schema();

AttributeSchema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const AttributeSchema& schema);

AttributeSchema load_schema(const std::filesystem::path& path);
void save_schema(const AttributeSchema& schema, const std::filesystem::path& path);

}  // namespace sspnet

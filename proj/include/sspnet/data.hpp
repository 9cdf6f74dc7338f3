#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sspnet/image.hpp"
#include "sspnet/schema.hpp"

namespace sspnet {

// Axis-aligned rectangle in pixel coordinates, half-open on the max edges.
struct Box {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

    double area() const { return (x_max - x_min) * (y_max - y_min); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
};

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool out_of_frame = false;
};

struct Sample {
    Image image;
    std::vector<uint8_t> labels;  // length M, values 0/1
    std::optional<std::vector<Keypoint>> keypoints;  // 16 entries when present
    std::map<int, Box> gt_boxes;  // attribute index -> tight box, may be empty
};

struct Dataset {
    std::vector<Sample> samples;
    AttributeSchema schema;
    std::string split = "train";  // train / val / test

    int size() const { return static_cast<int>(samples.size()); }
};

// Reads a JSON-lines manifest; image paths are resolved relative to the
// manifest's directory. Images are decoded (binary PPM) and resized to the
// schema input size; keypoints and boxes are rescaled accordingly.
Dataset load_manifest(const std::filesystem::path& manifest_path, const AttributeSchema& schema,
                      const std::string& split = "test");

// Writes dir/manifest.jsonl plus dir/images/NNNNNN.ppm and returns the
// manifest path.
std::filesystem::path save_manifest(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace sspnet

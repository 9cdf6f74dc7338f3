#include "sspnet/data.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sspnet {

using nlohmann::json;

namespace {

std::vector<Keypoint> parse_keypoints(const json& arr, int line_no) {
    const std::string where = "manifest line " + std::to_string(line_no);
    if (!arr.is_array() || arr.size() != 16)
        throw ParseError(where + ": keypoints must be an array of 16 points");
    std::vector<Keypoint> kps;
    kps.reserve(16);
    for (const auto& row : arr) {
        if (!row.is_array() || row.size() < 2 || row.size() > 3)
            throw ParseError(where + ": keypoint row must be [x, y] or [x, y, out_of_frame]");
        Keypoint kp;
        kp.x = row.at(0).get<double>();
        kp.y = row.at(1).get<double>();
        kp.out_of_frame = row.size() == 3 && row.at(2).get<int>() != 0;
        kps.push_back(kp);
    }
    return kps;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& manifest_path, const AttributeSchema& schema,
                      const std::string& split) {
    schema.validate();
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
    const auto base_dir = manifest_path.parent_path();
    const int m = schema.num_attributes();

    Dataset ds;
    ds.schema = schema;
    ds.split = split;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        const std::string where = "manifest line " + std::to_string(line_no);
        if (!rec.contains("image") || !rec.contains("labels"))
            throw ParseError(where + ": record needs 'image' and 'labels'");

        Sample s;
        const auto& labels = rec.at("labels");
        if (!labels.is_array() || static_cast<int>(labels.size()) != m)
            throw SchemaMismatchError(where + ": label vector length " +
                                      std::to_string(labels.size()) + " does not match schema M=" +
                                      std::to_string(m));
        s.labels.reserve(static_cast<size_t>(m));
        for (const auto& v : labels) {
            const int y = v.get<int>();
            if (y != 0 && y != 1) throw ParseError(where + ": labels must be 0/1");
            s.labels.push_back(static_cast<uint8_t>(y));
        }

        const auto image_path = base_dir / rec.at("image").get<std::string>();
        if (!std::filesystem::exists(image_path))
            throw IoError(where + ": missing image file " + image_path.string());
        Image raw = read_ppm(image_path);
        const double sx = static_cast<double>(schema.input_width) / raw.width;
        const double sy = static_cast<double>(schema.input_height) / raw.height;
        s.image = resize_bilinear(raw, schema.input_height, schema.input_width);

        if (rec.contains("keypoints") && !rec.at("keypoints").is_null()) {
            auto kps = parse_keypoints(rec.at("keypoints"), line_no);
            for (auto& kp : kps) {
                kp.x *= sx;
                kp.y *= sy;
                const bool inside = kp.x >= 0.0 && kp.x < schema.input_width && kp.y >= 0.0 &&
                                    kp.y < schema.input_height;
                if (!inside && !kp.out_of_frame)
                    throw ParseError(where + ": keypoint (" + std::to_string(kp.x) + "," +
                                     std::to_string(kp.y) +
                                     ") outside image bounds without out-of-frame flag");
            }
            s.keypoints = std::move(kps);
        }

        if (rec.contains("boxes") && !rec.at("boxes").is_null()) {
            for (const auto& [key, val] : rec.at("boxes").items()) {
                int attr = -1;
                try {
                    attr = std::stoi(key);
                } catch (...) {
                    throw ParseError(where + ": box key '" + key + "' is not an attribute index");
                }
                if (attr < 0 || attr >= m)
                    throw SchemaMismatchError(where + ": box attribute index " + key +
                                              " out of range");
                if (!val.is_array() || val.size() != 4)
                    throw ParseError(where + ": box must be [x_min,y_min,x_max,y_max]");
                Box b{val.at(0).get<double>() * sx, val.at(1).get<double>() * sy,
                      val.at(2).get<double>() * sx, val.at(3).get<double>() * sy};
                if (!b.valid()) throw ParseError(where + ": degenerate box for attribute " + key);
                s.gt_boxes[attr] = b;
            }
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::filesystem::path save_manifest(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    const auto manifest_path = dir / "manifest.jsonl";
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write manifest: " + manifest_path.string());
    char name[32];
    for (size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        std::snprintf(name, sizeof(name), "images/%06zu.ppm", i);
        write_ppm(s.image, dir / name);
        json rec;
        rec["image"] = name;
        std::vector<int> labels(s.labels.begin(), s.labels.end());
        rec["labels"] = labels;
        if (s.keypoints) {
            json arr = json::array();
            for (const auto& kp : *s.keypoints) {
                if (kp.out_of_frame)
                    arr.push_back({kp.x, kp.y, 1});
                else
                    arr.push_back({kp.x, kp.y});
            }
            rec["keypoints"] = arr;
        }
        if (!s.gt_boxes.empty()) {
            json boxes = json::object();
            for (const auto& [attr, b] : s.gt_boxes)
                boxes[std::to_string(attr)] = {b.x_min, b.y_min, b.x_max, b.y_max};
            rec["boxes"] = boxes;
        }
        out << rec.dump() << "\n";
    }
    return manifest_path;
}

}  // namespace sspnet

#include "sspnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sspnet/rng.hpp"

namespace sspnet {

using nlohmann::json;

namespace {

// MPII-style indexing: 0-5 legs, 6 pelvis, 7 thorax, 8 neck, 9 head top,
// 10-15 arms. Unit coordinates (x, y), y growing downward.
constexpr std::array<std::array<double, 2>, 16> kCanonicalKeypoints{{
    {0.42, 0.92},  // 0 right ankle
    {0.42, 0.70},  // 1 right knee
    {0.42, 0.50},  // 2 right hip
    {0.58, 0.50},  // 3 left hip
    {0.58, 0.70},  // 4 left knee
    {0.58, 0.92},  // 5 left ankle
    {0.50, 0.48},  // 6 pelvis
    {0.50, 0.20},  // 7 thorax
    {0.50, 0.14},  // 8 upper neck
    {0.50, 0.06},  // 9 head top
    {0.30, 0.46},  // 10 right wrist
    {0.33, 0.34},  // 11 right elbow
    {0.38, 0.22},  // 12 right shoulder
    {0.62, 0.22},  // 13 left shoulder
    {0.67, 0.34},  // 14 left elbow
    {0.70, 0.46},  // 15 left wrist
}};

struct GroupDefaults {
    Region region;
    std::vector<int> keypoints;
};

GroupDefaults group_defaults(const std::string& name) {
    if (name == "Head") return {{0.0, 24.0 / 64.0}, {7, 8, 9, 12, 13}};
    if (name == "Torso") return {{8.0 / 64.0, 40.0 / 64.0}, {2, 3, 6, 10, 11, 12, 13, 14, 15}};
    if (name == "Bottom") return {{32.0 / 64.0, 1.0}, {0, 1, 2, 3, 4, 5, 6}};
    if (name == "All")
        return {{0.0, 1.0}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}};
    throw ValidationError("synthetic spec: unknown group '" + name + "'");
}

void fill_rect(Image& img, int y0, int x0, int h, int w, const std::array<double, 3>& color) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

void draw_figure(Image& img, double base) {
    const int h = img.height, w = img.width;
    const std::array<double, 3> body{base * 0.75, base * 0.75, base * 0.78};
    auto rect = [&](double fy0, double fx0, double fy1, double fx1) {
        const int y0 = std::clamp(static_cast<int>(std::llround(fy0 * h)), 0, h - 1);
        const int y1 = std::clamp(static_cast<int>(std::llround(fy1 * h)), y0 + 1, h);
        const int x0 = std::clamp(static_cast<int>(std::llround(fx0 * w)), 0, w - 1);
        const int x1 = std::clamp(static_cast<int>(std::llround(fx1 * w)), x0 + 1, w);
        fill_rect(img, y0, x0, y1 - y0, x1 - x0, body);
    };
    rect(0.04, 0.42, 0.16, 0.58);  // head
    rect(0.18, 0.36, 0.52, 0.64);  // torso
    rect(0.52, 0.38, 0.94, 0.47);  // right leg
    rect(0.52, 0.53, 0.94, 0.62);  // left leg
}

void validate_spec(const SyntheticSpec& spec) {
    if (spec.num_samples < 1) throw ValidationError("synthetic spec: num_samples must be >= 1");
    if (spec.attributes.empty()) throw ValidationError("synthetic spec: no attributes");
    if (spec.noise_sigma < 0.0) throw ValidationError("synthetic spec: negative noise");
    if (spec.clutter < 0.0) throw ValidationError("synthetic spec: negative clutter");
    for (const auto& a : spec.attributes) {
        if (a.probability < 0.0 || a.probability > 1.0)
            throw ValidationError("synthetic spec: probability out of range for '" + a.name + "'");
        const auto defaults = group_defaults(a.group);  // throws on unknown group
        if (a.patch.kind == PatchSpec::Kind::Rect) {
            const auto [r0, r1] = region_rows(defaults.region, spec.image_height);
            if (a.patch.height < 1 || a.patch.width < 1)
                throw ValidationError("synthetic spec: empty patch for '" + a.name + "'");
            if (a.patch.height > r1 - r0)
                throw ValidationError("synthetic spec: patch for '" + a.name +
                                      "' does not fit the " + a.group + " band");
            if (a.patch.width > spec.image_width)
                throw ValidationError("synthetic spec: patch for '" + a.name + "' wider than image");
        }
    }
}

}  // namespace

AttributeSchema schema_for_spec(const SyntheticSpec& spec) {
    validate_spec(spec);
    AttributeSchema s;
    s.input_height = spec.image_height;
    s.input_width = spec.image_width;
    for (const auto& a : spec.attributes) s.attributes.push_back(a.name);
    for (const std::string name : {"Head", "Torso", "Bottom", "All"}) {
        std::vector<int> idx;
        for (size_t i = 0; i < spec.attributes.size(); ++i)
            if (spec.attributes[i].group == name) idx.push_back(static_cast<int>(i));
        if (idx.empty()) continue;
        const auto defaults = group_defaults(name);
        s.groups.push_back({name, idx, defaults.region, defaults.keypoints});
    }
    s.validate();
    return s;
}

Dataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    Dataset ds;
    ds.schema = schema_for_spec(spec);
    ds.split = "train";
    const int h = spec.image_height, w = spec.image_width;
    ds.samples.reserve(static_cast<size_t>(spec.num_samples));

    for (int i = 0; i < spec.num_samples; ++i) {
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(i)));
        Sample s;
        const double base = rng.uniform(0.35, 0.55);
        s.image = Image(h, w);
        for (auto& v : s.image.pixels) v = base;
        draw_figure(s.image, base);

        std::vector<Keypoint> kps(16);
        for (int k = 0; k < 16; ++k) {
            const double jx = rng.normal(0.0, 0.015 * h);
            const double jy = rng.normal(0.0, 0.015 * h);
            kps[static_cast<size_t>(k)].x =
                std::clamp(kCanonicalKeypoints[static_cast<size_t>(k)][0] * w + jx, 0.0,
                           static_cast<double>(w - 1));
            kps[static_cast<size_t>(k)].y =
                std::clamp(kCanonicalKeypoints[static_cast<size_t>(k)][1] * h + jy, 0.0,
                           static_cast<double>(h - 1));
        }
        s.keypoints = std::move(kps);

        s.labels.assign(spec.attributes.size(), 0);
        for (size_t a = 0; a < spec.attributes.size(); ++a) {
            const auto& attr = spec.attributes[a];
            if (!rng.bernoulli(attr.probability)) continue;
            s.labels[a] = 1;
            if (attr.patch.kind == PatchSpec::Kind::Tint) {
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        for (int c = 0; c < 3; ++c)
                            s.image.at(y, x, c) += attr.patch.color[c] * attr.patch.strength;
                continue;
            }
            const auto [r0, r1] = region_rows(ds.schema.group(attr.group).region, h);
            const int y0 = rng.uniform_int(r0, r1 - attr.patch.height);
            const int x0 = rng.uniform_int(0, w - attr.patch.width);
            fill_rect(s.image, y0, x0, attr.patch.height, attr.patch.width, attr.patch.color);
            s.gt_boxes[static_cast<int>(a)] =
                Box{static_cast<double>(x0), static_cast<double>(y0),
                    static_cast<double>(x0 + attr.patch.width),
                    static_cast<double>(y0 + attr.patch.height)};
        }

        if (spec.clutter > 0.0) {
            int count = static_cast<int>(spec.clutter);
            if (rng.bernoulli(spec.clutter - count)) ++count;
            for (int k = 0; k < count; ++k) {
                const int cy = rng.uniform_int(0, h - 2);
                const int cx = rng.uniform_int(0, w - 2);
                const double v = rng.uniform();
                fill_rect(s.image, cy, cx, 2, 2, {v, v, v});
            }
        }

        if (spec.noise_sigma > 0.0)
            for (auto& v : s.image.pixels) v += rng.normal(0.0, spec.noise_sigma);
        for (auto& v : s.image.pixels) v = std::clamp(v, 0.0, 1.0);
        quantize_to_8bit(s.image);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
    SyntheticSpec spec;
    if (!j.is_object()) throw ParseError("synthetic spec: top-level JSON object expected");
    for (const char* key : {"num_samples", "image_size", "attributes"})
        if (!j.contains(key))
            throw ParseError(std::string("synthetic spec: missing key '") + key + "'");
    spec.num_samples = j.at("num_samples").get<int>();
    const auto& sz = j.at("image_size");
    if (!sz.is_array() || sz.size() != 2)
        throw ParseError("synthetic spec: image_size must be [height, width]");
    spec.image_height = sz.at(0).get<int>();
    spec.image_width = sz.at(1).get<int>();
    spec.noise_sigma = j.value("noise", 0.05);
    spec.clutter = j.value("clutter", 0.0);
    for (const auto& a : j.at("attributes")) {
        SyntheticAttribute attr;
        attr.name = a.at("name").get<std::string>();
        attr.group = a.at("group").get<std::string>();
        attr.probability = a.value("prob", 0.5);
        if (a.contains("patch")) {
            const auto& p = a.at("patch");
            const std::string kind = p.value("kind", "rect");
            if (kind == "rect")
                attr.patch.kind = PatchSpec::Kind::Rect;
            else if (kind == "tint")
                attr.patch.kind = PatchSpec::Kind::Tint;
            else
                throw ParseError("synthetic spec: unknown patch kind '" + kind + "'");
            if (p.contains("color")) {
                const auto& c = p.at("color");
                if (!c.is_array() || c.size() != 3)
                    throw ParseError("synthetic spec: patch color must be [r,g,b]");
                attr.patch.color = {c.at(0).get<double>(), c.at(1).get<double>(),
                                    c.at(2).get<double>()};
            }
            if (p.contains("size")) {
                const auto& psz = p.at("size");
                if (!psz.is_array() || psz.size() != 2)
                    throw ParseError("synthetic spec: patch size must be [height, width]");
                attr.patch.height = psz.at(0).get<int>();
                attr.patch.width = psz.at(1).get<int>();
            }
            attr.patch.strength = p.value("strength", 1.0);
        }
        spec.attributes.push_back(std::move(attr));
    }
    validate_spec(spec);
    return spec;
}

json synthetic_spec_to_json(const SyntheticSpec& spec) {
    json j;
    j["num_samples"] = spec.num_samples;
    j["image_size"] = {spec.image_height, spec.image_width};
    j["noise"] = spec.noise_sigma;
    j["clutter"] = spec.clutter;
    json attrs = json::array();
    for (const auto& a : spec.attributes) {
        json p;
        p["kind"] = a.patch.kind == PatchSpec::Kind::Rect ? "rect" : "tint";
        p["color"] = {a.patch.color[0], a.patch.color[1], a.patch.color[2]};
        p["size"] = {a.patch.height, a.patch.width};
        p["strength"] = a.patch.strength;
        attrs.push_back({{"name", a.name}, {"group", a.group}, {"prob", a.probability},
                         {"patch", p}});
    }
    j["attributes"] = attrs;
    return j;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open synthetic spec: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("synthetic spec '" + path.string() + "': " + e.what());
    }
    return synthetic_spec_from_json(j);
}

}  // namespace sspnet

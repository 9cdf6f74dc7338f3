#include "sspnet/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace sspnet {

using nlohmann::json;

const char* level_name(Level l) {
    switch (l) {
        case Level::P1: return "P1";
        case Level::P2: return "P2";
        case Level::P3: return "P3";
    }
    throw ValidationError("unknown level");
}

Level level_from_name(const std::string& name) {
    if (name == "P1") return Level::P1;
    if (name == "P2") return Level::P2;
    if (name == "P3") return Level::P3;
    throw ValidationError("unknown pyramid level '" + name + "'");
}

std::pair<int, int> region_rows(const Region& region, int h) {
    const int r0 = static_cast<int>(std::llround(region.top_frac * h));
    const int r1 = static_cast<int>(std::llround(region.bottom_frac * h));
    if (r1 - r0 < 1)
        throw ValidationError("degenerate region: rows [" + std::to_string(r0) + "," +
                              std::to_string(r1) + ") are empty at height " + std::to_string(h));
    return {r0, r1};
}

namespace {

const std::vector<std::string> kCanonicalOrder{"Head", "Torso", "Bottom", "All"};

bool is_canonical_group(const std::string& name) {
    return std::find(kCanonicalOrder.begin(), kCanonicalOrder.end(), name) !=
           kCanonicalOrder.end();
}

}  // namespace

int AttributeSchema::group_index(const std::string& name) const {
    for (size_t i = 0; i < groups.size(); ++i)
        if (groups[i].name == name) return static_cast<int>(i);
    return -1;
}

const AttributeGroup& AttributeSchema::group(const std::string& name) const {
    const int i = group_index(name);
    if (i < 0) throw ValidationError("unknown group '" + name + "'");
    return groups[static_cast<size_t>(i)];
}

std::vector<int> AttributeSchema::attribute_group_index() const {
    std::vector<int> owner(attributes.size(), -1);
    for (size_t g = 0; g < groups.size(); ++g)
        for (int a : groups[g].attribute_indices) owner[static_cast<size_t>(a)] = static_cast<int>(g);
    return owner;
}

int AttributeSchema::attribute_index(const std::string& name) const {
    for (size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i] == name) return static_cast<int>(i);
    return -1;
}

void AttributeSchema::validate() const {
    if (attributes.empty()) throw ValidationError("schema: no attributes");
    if (groups.empty()) throw ValidationError("schema: no groups");
    if (input_height <= 0 || input_width <= 0) throw ValidationError("schema: bad input size");
    if (input_height % 16 != 0 || input_width % 16 != 0)
        throw ValidationError("schema: input size " + std::to_string(input_height) + "x" +
                              std::to_string(input_width) + " must be divisible by 16");
    {
        std::set<std::string> names(attributes.begin(), attributes.end());
        if (names.size() != attributes.size())
            throw ValidationError("schema: duplicate attribute names");
    }
    std::vector<int> owner(attributes.size(), -1);
    std::set<std::string> group_names;
    for (const auto& g : groups) {
        if (!is_canonical_group(g.name))
            throw ValidationError("schema: unknown group '" + g.name + "'");
        if (!group_names.insert(g.name).second)
            throw ValidationError("schema: group '" + g.name + "' defined twice");
        for (int a : g.attribute_indices) {
            if (a < 0 || a >= num_attributes())
                throw ValidationError("schema: attribute index " + std::to_string(a) +
                                      " out of range in group '" + g.name + "'");
            if (owner[static_cast<size_t>(a)] >= 0)
                throw ValidationError("schema: attribute '" + attributes[static_cast<size_t>(a)] +
                                      "' assigned to two groups");
            owner[static_cast<size_t>(a)] = 1;
        }
        if (!(g.region.top_frac >= 0.0 && g.region.top_frac < g.region.bottom_frac &&
              g.region.bottom_frac <= 1.0))
            throw ValidationError("schema: inverted or out-of-range region for group '" + g.name +
                                  "'");
        std::set<int> kp;
        for (int k : g.keypoints) {
            if (k < 0 || k > 15)
                throw ValidationError("schema: keypoint index " + std::to_string(k) +
                                      " out of range in group '" + g.name + "'");
            if (!kp.insert(k).second)
                throw ValidationError("schema: duplicate keypoint index in group '" + g.name + "'");
        }
    }
    for (size_t a = 0; a < attributes.size(); ++a)
        if (owner[a] < 0)
            throw ValidationError("schema: attribute '" + attributes[a] + "' not in any group");
    // Mapped to every pyramid level the band must keep at least one row.
    for (const auto& g : groups)
        for (int s : {4, 8, 16}) region_rows(g.region, input_height / s);
}

AttributeSchema default_schema() {
    AttributeSchema s;
    s.input_height = 256;
    s.input_width = 192;
    s.attributes = {
        "Hat",        "Glasses",
        "ShortSleeve", "LongSleeve", "UpperStride", "UpperLogo", "UpperPlaid", "UpperSplice",
        "Backpack",
        "LowerStripe", "LowerPattern", "Trousers", "Shorts", "Boots",
        "LongCoat",   "Skirt&Dress", "HandBag", "ShoulderBag", "HoldObjectsInFront",
        "AgeOver60",  "Age18-60",    "AgeLess18", "Female", "Front", "Side", "Back"};
    s.groups = {
        {"Head", {0, 1}, {0.0, 24.0 / 64.0}, {7, 8, 9, 12, 13}},
        {"Torso", {2, 3, 4, 5, 6, 7, 8}, {8.0 / 64.0, 40.0 / 64.0}, {2, 3, 6, 10, 11, 12, 13, 14, 15}},
        {"Bottom", {9, 10, 11, 12, 13}, {32.0 / 64.0, 1.0}, {0, 1, 2, 3, 4, 5, 6}},
        {"All",
         {14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25},
         {0.0, 1.0},
         {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}},
    };
    s.validate();
    return s;
}

AttributeSchema schema_from_json(const json& j) {
    AttributeSchema s;
    if (!j.is_object()) throw ParseError("schema: top-level JSON object expected");
    if (j.contains("input_size")) {
        const auto& sz = j.at("input_size");
        if (!sz.is_array() || sz.size() != 2)
            throw ParseError("schema: input_size must be [height, width]");
        s.input_height = sz.at(0).get<int>();
        s.input_width = sz.at(1).get<int>();
    }
    for (const char* key : {"attributes", "groups", "prior_regions", "keypoint_groups"})
        if (!j.contains(key)) throw ParseError(std::string("schema: missing key '") + key + "'");
    s.attributes = j.at("attributes").get<std::vector<std::string>>();

    const auto& groups = j.at("groups");
    const auto& regions = j.at("prior_regions");
    const auto& kps = j.at("keypoint_groups");
    for (const auto& name : kCanonicalOrder) {
        if (!groups.contains(name)) continue;
        AttributeGroup g;
        g.name = name;
        g.attribute_indices = groups.at(name).get<std::vector<int>>();
        if (!regions.contains(name))
            throw ValidationError("schema: group '" + name + "' has no prior region");
        const auto& r = regions.at(name);
        if (!r.is_array() || r.size() != 2)
            throw ParseError("schema: prior region for '" + name + "' must be [top, bottom]");
        g.region = {r.at(0).get<double>(), r.at(1).get<double>()};
        if (!kps.contains(name))
            throw ValidationError("schema: group '" + name + "' has no keypoint set");
        g.keypoints = kps.at(name).get<std::vector<int>>();
        s.groups.push_back(std::move(g));
    }
    for (const auto& [name, value] : groups.items()) {
        (void)value;
        if (!is_canonical_group(name)) throw ValidationError("schema: unknown group '" + name + "'");
    }
    s.validate();
    return s;
}

json schema_to_json(const AttributeSchema& s) {
    json j;
    j["input_size"] = {s.input_height, s.input_width};
    j["attributes"] = s.attributes;
    json groups = json::object(), regions = json::object(), kps = json::object();
    for (const auto& g : s.groups) {
        groups[g.name] = g.attribute_indices;
        regions[g.name] = {g.region.top_frac, g.region.bottom_frac};
        kps[g.name] = g.keypoints;
    }
    j["groups"] = groups;
    j["prior_regions"] = regions;
    j["keypoint_groups"] = kps;
    return j;
}

AttributeSchema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("schema '" + path.string() + "': " + e.what());
    }
    return schema_from_json(j);
}

void save_schema(const AttributeSchema& schema, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write schema file: " + path.string());
    out << schema_to_json(schema).dump(2) << "\n";
}

}  // namespace sspnet

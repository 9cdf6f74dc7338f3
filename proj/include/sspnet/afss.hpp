#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sspnet/schema.hpp"

namespace sspnet::afss {

// Scale selection runs per attribute group by default; the per-attribute
// variant tracks one unit per attribute instead.
enum class Mode { Group, Attribute };

struct UnitStats {
    std::array<double, 3> sum{0.0, 0.0, 0.0};  // indexed by Level
    std::array<int, 3> count{0, 0, 0};
};

// Running mean accuracy per (unit, level) during the search phase, plus the
// frozen per-unit level choice afterwards. Single writer; reads after freeze
// are safe to share.
struct ScaleSelectionState {
    std::vector<std::string> units;
    std::map<std::string, UnitStats> stats;
    std::map<std::string, Level> frozen;
    bool is_frozen = false;

    double mean(const std::string& unit, Level level) const;
    int rounds(const std::string& unit, Level level) const;
};

ScaleSelectionState make_state(const std::vector<std::string>& units);

// Adds one evaluation round; the running estimate is the arithmetic mean of
// all recorded rounds. Throws StateError once frozen, ValidationError for an
// unknown unit or mA outside [0,1].
void record_round(ScaleSelectionState& state, const std::string& unit, Level level, double mA);

// Chooses argmax-mA level per unit, ties broken toward the higher-resolution
// level (P1 before P2 before P3). Requires at least one round for every
// (unit, level) pair; otherwise throws StateError listing the missing pairs.
void freeze(ScaleSelectionState& state);

// Frozen choice for a unit. Throws StateError while still searching.
Level select(const ScaleSelectionState& state, const std::string& unit);

nlohmann::json state_to_json(const ScaleSelectionState& state);
ScaleSelectionState state_from_json(const nlohmann::json& j);

}  // namespace sspnet::afss

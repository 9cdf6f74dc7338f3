#include "sspnet/afss.hpp"

#include <nlohmann/json.hpp>

namespace sspnet::afss {

using nlohmann::json;

double ScaleSelectionState::mean(const std::string& unit, Level level) const {
    const auto it = stats.find(unit);
    if (it == stats.end()) throw ValidationError("afss: unknown unit '" + unit + "'");
    const auto& s = it->second;
    const int i = static_cast<int>(level);
    if (s.count[i] == 0) throw StateError("afss: no rounds recorded for (" + unit + ", " +
                                          level_name(level) + ")");
    return s.sum[i] / s.count[i];
}

int ScaleSelectionState::rounds(const std::string& unit, Level level) const {
    const auto it = stats.find(unit);
    if (it == stats.end()) throw ValidationError("afss: unknown unit '" + unit + "'");
    return it->second.count[static_cast<int>(level)];
}

ScaleSelectionState make_state(const std::vector<std::string>& units) {
    if (units.empty()) throw ValidationError("afss: no units");
    ScaleSelectionState st;
    st.units = units;
    for (const auto& u : units) st.stats[u] = UnitStats{};
    return st;
}

void record_round(ScaleSelectionState& state, const std::string& unit, Level level, double mA) {
    if (state.is_frozen) throw StateError("afss: cannot record a round after freeze");
    if (!(mA >= 0.0 && mA <= 1.0)) throw ValidationError("afss: mA must be in [0,1]");
    const auto it = state.stats.find(unit);
    if (it == state.stats.end()) throw ValidationError("afss: unknown unit '" + unit + "'");
    const int i = static_cast<int>(level);
    it->second.sum[i] += mA;
    it->second.count[i] += 1;
}

void freeze(ScaleSelectionState& state) {
    if (state.is_frozen) throw StateError("afss: already frozen");
    std::string missing;
    for (const auto& u : state.units)
        for (Level l : kLevels)
            if (state.stats.at(u).count[static_cast<int>(l)] == 0)
                missing += (missing.empty() ? "" : ", ") + ("(" + u + ", " + level_name(l) + ")");
    if (!missing.empty())
        throw StateError("afss: freeze before evaluating all pairs; missing: " + missing);
    for (const auto& u : state.units) {
        Level best = Level::P1;
        double best_mean = state.mean(u, Level::P1);
        for (Level l : {Level::P2, Level::P3}) {
            const double m = state.mean(u, l);
            if (m > best_mean) {  // ties keep the higher-resolution level
                best_mean = m;
                best = l;
            }
        }
        state.frozen[u] = best;
    }
    state.is_frozen = true;
}

Level select(const ScaleSelectionState& state, const std::string& unit) {
    if (!state.is_frozen)
        throw StateError("afss: select requires a frozen state (still searching)");
    const auto it = state.frozen.find(unit);
    if (it == state.frozen.end()) throw ValidationError("afss: unknown unit '" + unit + "'");
    return it->second;
}

json state_to_json(const ScaleSelectionState& state) {
    json j;
    j["units"] = state.units;
    j["mode"] = state.is_frozen ? "frozen" : "searching";
    json stats = json::object();
    for (const auto& [unit, s] : state.stats) {
        json u;
        u["sum"] = s.sum;
        u["count"] = s.count;
        stats[unit] = u;
    }
    j["stats"] = stats;
    if (state.is_frozen) {
        json frozen = json::object();
        for (const auto& [unit, level] : state.frozen) frozen[unit] = level_name(level);
        j["frozen"] = frozen;
    }
    return j;
}

ScaleSelectionState state_from_json(const json& j) {
    ScaleSelectionState st = make_state(j.at("units").get<std::vector<std::string>>());
    for (const auto& [unit, u] : j.at("stats").items()) {
        auto it = st.stats.find(unit);
        if (it == st.stats.end()) throw ParseError("afss state: unknown unit '" + unit + "'");
        it->second.sum = u.at("sum").get<std::array<double, 3>>();
        it->second.count = u.at("count").get<std::array<int, 3>>();
    }
    if (j.at("mode").get<std::string>() == "frozen") {
        st.is_frozen = true;
        for (const auto& [unit, level] : j.at("frozen").items())
            st.frozen[unit] = level_from_name(level.get<std::string>());
    }
    return st;
}

}  // namespace sspnet::afss

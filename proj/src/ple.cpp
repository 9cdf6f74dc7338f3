#include "sspnet/ple.hpp"

#include <algorithm>
#include <cmath>

namespace sspnet::ple {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::R: return "R";
        case Variant::K: return "K";
        case Variant::S: return "S";
    }
    throw ValidationError("unknown PLE variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "R") return Variant::R;
    if (name == "K") return Variant::K;
    if (name == "S") return Variant::S;
    throw ValidationError("unknown PLE variant '" + name + "' (expected R, K or S)");
}

ad::Value region_crop(const ad::Value& map, const Region& region) {
    const auto& s = map->val.shape();
    if (s.size() != 4) throw ShapeError("region_crop: map must be (B,C,h,w)");
    const auto [r0, r1] = region_rows(region, s[2]);
    return ad::slice_rows(map, r0, r1);
}

std::map<std::string, PriorPoints> map_keypoints(
    const std::optional<std::vector<Keypoint>>& keypoints, int stride, int level_h, int level_w,
    const AttributeSchema& schema) {
    if (!keypoints)
        throw MissingPriorError(
            "sample has no keypoints; PLE-K needs them (use PLE-R or PLE-S instead)");
    if (keypoints->size() != 16) throw ValidationError("map_keypoints: 16 keypoints expected");
    std::map<std::string, PriorPoints> out;
    for (const auto& g : schema.groups) {
        PriorPoints pp;
        pp.group = g.name;
        pp.provenance = PriorPoints::Provenance::Keypoint;
        for (int k : g.keypoints) {
            const auto& kp = (*keypoints)[static_cast<size_t>(k)];
            const double x = std::clamp(kp.x / stride, 0.0, static_cast<double>(level_w - 1));
            const double y = std::clamp(kp.y / stride, 0.0, static_cast<double>(level_h - 1));
            pp.points.push_back({x, y});
        }
        out[g.name] = std::move(pp);
    }
    return out;
}

PriorPoints build_sparse_points(const Region& region, int level_h, int level_w, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw ValidationError("build_sparse_points: ratio must be in (0,1]");
    const auto [r0, r1] = region_rows(region, level_h);
    PriorPoints pp;
    pp.provenance = PriorPoints::Provenance::SparseGrid;
    int64_t i = 0;
    for (int r = r0; r < r1; ++r)
        for (int c = 0; c < level_w; ++c, ++i) {
            const auto kept = std::floor((i + 1) * ratio) > std::floor(i * ratio);
            if (kept) pp.points.push_back({static_cast<double>(c), static_cast<double>(r)});
        }
    if (pp.points.empty())  // region of a single cell at a tiny ratio
        pp.points.push_back({static_cast<double>(0), static_cast<double>(r0)});
    return pp;
}

OffsetBank OffsetBank::init(int n_points, int m_off, int channels, Rng& rng,
                            const std::string& name_prefix) {
    if (n_points < 1) throw MissingPriorError("offset bank: empty point list");
    if (m_off < 1) throw ValidationError("offset bank: m_off must be >= 1");
    OffsetBank bank;
    Tensor delta({n_points, m_off, 2});
    for (int64_t i = 0; i < delta.numel(); ++i) delta[i] = rng.uniform(-1.0, 1.0);
    bank.delta = ad::param(std::move(delta), name_prefix + ".delta");
    bank.attn = ad::param(Tensor::full({m_off}, 1.0 / m_off), name_prefix + ".attn");
    Tensor sw({m_off, channels, channels});
    for (int m = 0; m < m_off; ++m)
        for (int i = 0; i < channels; ++i)
            for (int j = 0; j < channels; ++j)
                sw.at(m, i, j) = (i == j ? 1.0 : 0.0) + rng.normal(0.0, 0.01);
    bank.slot_w = ad::param(std::move(sw), name_prefix + ".slot_w");
    return bank;
}

ad::Value offset_sample(const ad::Value& map, double x, double y, const OffsetBank& bank,
                        int point_index) {
    const int b = map->val.dim(0);
    Tensor base({b, 1, 2});
    for (int i = 0; i < b; ++i) {
        base.at(i, 0, 0) = x;
        base.at(i, 0, 1) = y;
    }
    const auto delta_row = ad::slice_index0(bank.delta, point_index);
    const auto sampled = ad::offset_points(map, base, delta_row, bank.slot_w, bank.attn);
    return ad::reshape(sampled, {b, map->val.dim(1)});
}

ad::Value offset_sample_all(const ad::Value& map, const Tensor& base, const OffsetBank& bank) {
    return ad::offset_points(map, base, bank.delta, bank.slot_w, bank.attn);
}

ad::Value aggregate_region(const ad::Value& cropped, const ad::Value& proj_w,
                           const ad::Value& proj_b) {
    return ad::linear(ad::spp2(cropped), proj_w, proj_b);
}

ad::Value aggregate_points(const ad::Value& point_feats, const ad::Value& proj_w,
                           const ad::Value& proj_b) {
    if (point_feats->val.rank() != 3) throw ShapeError("aggregate_points: (B,N,C) input required");
    if (point_feats->val.dim(1) < 1) throw MissingPriorError("aggregate_points: empty point list");
    return ad::linear(ad::mean_points(point_feats), proj_w, proj_b);
}

}  // namespace sspnet::ple

#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "sspnet/autodiff.hpp"
#include "sspnet/data.hpp"
#include "sspnet/rng.hpp"
#include "sspnet/schema.hpp"

namespace sspnet::ple {

enum class Variant { R, K, S };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// 2-D reference points in feature-map coordinates (x, y) of one level.
struct PriorPoints {
    std::string group;
    std::vector<std::array<double, 2>> points;
    enum class Provenance { Keypoint, SparseGrid } provenance = Provenance::SparseGrid;
};

// Contiguous row slice of the group's band, full width; gradients flow to
// the sliced rows only. map is batched (B,C,h,w).
ad::Value region_crop(const ad::Value& map, const Region& region);

// Image-pixel keypoints divided by the level stride and clamped into the
// level extent, partitioned into groups by the schema keypoint sets. Throws
// MissingPriorError when keypoints are absent.
std::map<std::string, PriorPoints> map_keypoints(
    const std::optional<std::vector<Keypoint>>& keypoints, int stride, int level_h, int level_w,
    const AttributeSchema& schema);

// Deterministic decimated lattice over the region's rows: position index i
// (row-major) is kept iff floor((i+1)*ratio) > floor(i*ratio), which keeps
// floor(count*ratio) evenly spread positions.
PriorPoints build_sparse_points(const Region& region, int level_h, int level_w, double ratio);

// Learnable offsets for one (group, level): per reference point m_off 2-D
// offsets, plus the per-slot attention scalars and projection maps shared by
// all points of the group.
struct OffsetBank {
    ad::Value delta;   // (N, M, 2)
    ad::Value attn;    // (M)
    ad::Value slot_w;  // (M, C, C)

    int num_points() const { return delta->val.dim(0); }
    int num_slots() const { return delta->val.dim(1); }

    // delta ~ U[-1,1] cells, attn = 1/M, slot_w = identity + N(0, 0.01): the
    // module starts as a plain bilinear lookup at the reference points.
    static OffsetBank init(int n_points, int m_off, int channels, Rng& rng,
                           const std::string& name_prefix);
};

// Spec-level single-point sampler: sum over slots of
// attn[m] * slot_w[m] * bilinear(map, point + delta[point_index, m]).
// map is (B,C,h,w); returns (B,C).
ad::Value offset_sample(const ad::Value& map, double x, double y, const OffsetBank& bank,
                        int point_index);

// Batched variant over all reference points; base is (B,N,2).
ad::Value offset_sample_all(const ad::Value& map, const Tensor& base, const OffsetBank& bank);

// PLE-R aggregation: two-level spatial pyramid pooling (global + 2x2 cells)
// then a linear projection to D. cropped is (B,C,h,w); proj_w is (D,5C).
ad::Value aggregate_region(const ad::Value& cropped, const ad::Value& proj_w,
                           const ad::Value& proj_b);

// PLE-K/S aggregation: arithmetic mean over point vectors then a linear
// projection to D. point_feats is (B,N,C); proj_w is (D,C). Throws
// MissingPriorError for an empty point list.
ad::Value aggregate_points(const ad::Value& point_feats, const ad::Value& proj_w,
                           const ad::Value& proj_b);

}  // namespace sspnet::ple

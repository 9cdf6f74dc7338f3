#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sspnet/afss.hpp"
#include "sspnet/backbone.hpp"
#include "sspnet/data.hpp"
#include "sspnet/heads.hpp"
#include "sspnet/localization.hpp"
#include "sspnet/ple.hpp"

namespace sspnet {

enum class Arch { Sspnet, GlobalBaseline };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct ModelConfig {
    BackboneConfig backbone;
    int feature_dim = 256;  // D
    ple::Variant variant = ple::Variant::R;
    int m_off = 3;
    double sparse_ratio = 0.75;
    Arch arch = Arch::Sspnet;
    afss::Mode afss_mode = afss::Mode::Group;
};

// One (group, level) path: prior extraction parameters plus the group head.
// During the scale search all three level branches exist per group; freezing
// prunes to the selected ones.
struct Branch {
    std::string group;
    Level level = Level::P1;
    std::optional<ple::OffsetBank> bank;                // variants K and S
    std::vector<std::array<double, 2>> sparse_points;   // variant S, level coords
    ad::Value proj_w, proj_b;                           // (D,5C) for R, (D,C) for K/S
    heads::GroupHead head;
};

struct Batch {
    ad::Value images;  // (B, in_channels, H, W)
    Tensor labels;     // (B, M)
    std::vector<const Sample*> samples;
};

Batch make_batch(const Dataset& ds, const std::vector<int>& indices);

struct LossBreakdown {
    double total = 0.0;
    std::map<std::string, double> per_group;
};

class SspModel {
public:
    ModelConfig cfg;
    AttributeSchema schema;
    BackboneParams backbone;
    std::vector<std::array<std::unique_ptr<Branch>, 3>> branches;  // [group][level]
    afss::ScaleSelectionState selection;

    // global-baseline parameters (pool of P3 -> D -> M)
    ad::Value base_proj_w, base_proj_b, base_head_w, base_head_b;

    static SspModel init(const ModelConfig& cfg, const AttributeSchema& schema, uint64_t seed);

    std::vector<std::pair<std::string, ad::Value>> parameters() const;

    // Drops the branches the frozen selection does not use.
    void prune_to_selection();

    // Parameter-constant copy for evaluation and localization.
    SspModel detached() const;

    const Branch& branch(int group_idx, Level level) const;
    bool has_branch(int group_idx, Level level) const;

    std::pair<int, int> level_extent(Level level) const;

    // Attribute columns served by branch (group, level) under the current
    // selection mode/state; empty when the branch is inactive.
    std::vector<int> branch_attributes(int group_idx, Level level) const;
};

// Feature vector F_g of one branch, (B, D).
ad::Value branch_feature(const SspModel& model, const Branch& br, const FeaturePyramid& pyramid,
                         const Batch& batch);

// Assembled (B, M) logits using the frozen selection (or the baseline path).
ad::Value forward_logits(const SspModel& model, const FeaturePyramid& pyramid, const Batch& batch);

// Per-level assembled logits during the search phase: result[l] covers all
// groups evaluated on level l.
std::array<ad::Value, 3> search_level_logits(const SspModel& model, const FeaturePyramid& pyramid,
                                             const Batch& batch);

// Sum of per-branch weighted BCE losses for the current phase (all branches
// while searching, selected ones once frozen).
ad::Value build_loss(const SspModel& model, const FeaturePyramid& pyramid, const Batch& batch,
                     const heads::ImbalanceWeights& weights, LossBreakdown* breakdown = nullptr);

// Sigmoid probabilities over a dataset, batched; uses a detached copy.
Tensor predict_probs(const SspModel& model, const Dataset& ds, int batch_size);

// Labels of a dataset as an (N, M) tensor.
Tensor dataset_labels(const Dataset& ds);

// Grad-CAM adapter: activations are taken at the level selected for the
// attribute's group (P3 for the global baseline), with model parameters
// treated as constants and the level map as the differentiation leaf.
class ModelCamSource : public loc::CamSource {
public:
    explicit ModelCamSource(const SspModel& model);
    std::vector<loc::CamData> evaluate(const Sample& sample,
                                       const std::vector<int>& attributes) const override;

private:
    SspModel detached_;
};

}  // namespace sspnet

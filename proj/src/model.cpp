#include "sspnet/model.hpp"

#include <algorithm>
#include <cmath>

namespace sspnet {

const char* arch_name(Arch a) {
    return a == Arch::Sspnet ? "sspnet" : "global_baseline";
}

Arch arch_from_name(const std::string& name) {
    if (name == "sspnet") return Arch::Sspnet;
    if (name == "global_baseline") return Arch::GlobalBaseline;
    throw ValidationError("unknown arch '" + name + "' (expected sspnet or global_baseline)");
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw ValidationError("make_batch: empty batch");
    const int b = static_cast<int>(indices.size());
    const int h = ds.schema.input_height, w = ds.schema.input_width;
    const int m = ds.schema.num_attributes();
    Tensor images({b, 3, h, w});
    Tensor labels({b, m});
    Batch batch;
    batch.samples.reserve(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        const Sample& s = ds.samples.at(static_cast<size_t>(indices[static_cast<size_t>(i)]));
        if (s.image.height != h || s.image.width != w)
            throw ShapeError("make_batch: sample image size mismatch");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) images.at(i, c, y, x) = s.image.at(y, x, c);
        for (int j = 0; j < m; ++j) labels.at(i, j) = s.labels[static_cast<size_t>(j)];
        batch.samples.push_back(&s);
    }
    batch.images = ad::constant(std::move(images), "batch.images");
    batch.labels = std::move(labels);
    return batch;
}

namespace {

Tensor linear_init(int out_dim, int in_dim, Rng& rng) {
    Tensor w({out_dim, in_dim});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

std::string branch_prefix(const std::string& group, Level level) {
    return "branch." + group + "." + level_name(level);
}

std::unique_ptr<Branch> init_branch(const ModelConfig& cfg, const AttributeSchema& schema,
                                    const AttributeGroup& g, Level level, Rng& rng) {
    auto br = std::make_unique<Branch>();
    br->group = g.name;
    br->level = level;
    const int c = cfg.backbone.pyramid_channels;
    const int d = cfg.feature_dim;
    const std::string prefix = branch_prefix(g.name, level);
    const int lh = schema.input_height / level_stride(level);
    const int lw = schema.input_width / level_stride(level);
    if (cfg.variant == ple::Variant::R) {
        region_rows(g.region, lh);  // fail fast on degenerate bands
        br->proj_w = ad::param(linear_init(d, 5 * c, rng), prefix + ".proj_w");
    } else {
        int n_points = 0;
        if (cfg.variant == ple::Variant::K) {
            n_points = static_cast<int>(g.keypoints.size());
        } else {
            br->sparse_points = ple::build_sparse_points(g.region, lh, lw, cfg.sparse_ratio).points;
            n_points = static_cast<int>(br->sparse_points.size());
        }
        br->bank = ple::OffsetBank::init(n_points, cfg.m_off, c, rng, prefix + ".bank");
        br->proj_w = ad::param(linear_init(d, c, rng), prefix + ".proj_w");
    }
    br->proj_b = ad::param(Tensor({d}), prefix + ".proj_b");
    br->head = heads::GroupHead::init(g.name, static_cast<int>(g.attribute_indices.size()), d, rng,
                                      prefix + ".head");
    return br;
}

}  // namespace

SspModel SspModel::init(const ModelConfig& cfg, const AttributeSchema& schema, uint64_t seed) {
    schema.validate();
    if (cfg.feature_dim < 1) throw ValidationError("model: feature_dim must be >= 1");
    if (cfg.m_off < 1) throw ValidationError("model: m_off must be >= 1");
    if (!(cfg.sparse_ratio > 0.0 && cfg.sparse_ratio <= 1.0))
        throw ValidationError("model: sparse_ratio must be in (0,1]");
    SspModel model;
    model.cfg = cfg;
    model.schema = schema;
    Rng rng(Rng::mix(seed, 0xA11D));
    model.backbone = BackboneParams::init(cfg.backbone, rng);
    if (cfg.arch == Arch::GlobalBaseline) {
        const int c = cfg.backbone.pyramid_channels, d = cfg.feature_dim;
        model.base_proj_w = ad::param(linear_init(d, c, rng), "base.proj_w");
        model.base_proj_b = ad::param(Tensor({d}), "base.proj_b");
        model.base_head_w = ad::param(linear_init(schema.num_attributes(), d, rng), "base.head_w");
        model.base_head_b = ad::param(Tensor({schema.num_attributes()}), "base.head_b");
        model.selection = afss::make_state({"All"});
        return model;
    }
    std::vector<std::string> units;
    if (cfg.afss_mode == afss::Mode::Group)
        for (const auto& g : schema.groups) units.push_back(g.name);
    else
        units = schema.attributes;
    model.selection = afss::make_state(units);
    for (const auto& g : schema.groups) {
        std::array<std::unique_ptr<Branch>, 3> levels;
        for (Level l : kLevels)
            levels[static_cast<size_t>(l)] = init_branch(cfg, schema, g, l, rng);
        model.branches.push_back(std::move(levels));
    }
    return model;
}

std::vector<std::pair<std::string, ad::Value>> SspModel::parameters() const {
    auto out = backbone.parameters();
    for (const auto& group_branches : branches)
        for (const auto& br : group_branches) {
            if (!br) continue;
            if (br->bank) {
                out.emplace_back(br->bank->delta->tag, br->bank->delta);
                out.emplace_back(br->bank->attn->tag, br->bank->attn);
                out.emplace_back(br->bank->slot_w->tag, br->bank->slot_w);
            }
            out.emplace_back(br->proj_w->tag, br->proj_w);
            out.emplace_back(br->proj_b->tag, br->proj_b);
            out.emplace_back(br->head.w->tag, br->head.w);
            out.emplace_back(br->head.b->tag, br->head.b);
        }
    if (cfg.arch == Arch::GlobalBaseline) {
        out.emplace_back("base.proj_w", base_proj_w);
        out.emplace_back("base.proj_b", base_proj_b);
        out.emplace_back("base.head_w", base_head_w);
        out.emplace_back("base.head_b", base_head_b);
    }
    return out;
}

std::vector<int> SspModel::branch_attributes(int group_idx, Level level) const {
    const auto& g = schema.groups.at(static_cast<size_t>(group_idx));
    if (!selection.is_frozen) return g.attribute_indices;
    if (cfg.afss_mode == afss::Mode::Group)
        return afss::select(selection, g.name) == level ? g.attribute_indices : std::vector<int>{};
    std::vector<int> out;
    for (int a : g.attribute_indices)
        if (afss::select(selection, schema.attributes[static_cast<size_t>(a)]) == level)
            out.push_back(a);
    return out;
}

void SspModel::prune_to_selection() {
    if (cfg.arch == Arch::GlobalBaseline) return;
    if (!selection.is_frozen) throw StateError("prune_to_selection: selection is not frozen");
    for (size_t gi = 0; gi < branches.size(); ++gi)
        for (Level l : kLevels)
            if (branch_attributes(static_cast<int>(gi), l).empty())
                branches[gi][static_cast<size_t>(l)].reset();
}

const Branch& SspModel::branch(int group_idx, Level level) const {
    const auto& br = branches.at(static_cast<size_t>(group_idx))[static_cast<size_t>(level)];
    if (!br)
        throw StateError("no branch for group '" +
                         schema.groups[static_cast<size_t>(group_idx)].name + "' at " +
                         level_name(level));
    return *br;
}

bool SspModel::has_branch(int group_idx, Level level) const {
    return static_cast<bool>(branches.at(static_cast<size_t>(group_idx))[static_cast<size_t>(level)]);
}

std::pair<int, int> SspModel::level_extent(Level level) const {
    return {schema.input_height / level_stride(level), schema.input_width / level_stride(level)};
}

SspModel SspModel::detached() const {
    SspModel copy;
    copy.cfg = cfg;
    copy.schema = schema;
    copy.backbone = backbone.detached();
    copy.selection = selection;
    for (const auto& group_branches : branches) {
        std::array<std::unique_ptr<Branch>, 3> levels;
        for (size_t li = 0; li < 3; ++li) {
            const auto& br = group_branches[li];
            if (!br) continue;
            auto nb = std::make_unique<Branch>();
            nb->group = br->group;
            nb->level = br->level;
            nb->sparse_points = br->sparse_points;
            if (br->bank) {
                ple::OffsetBank bank;
                bank.delta = ad::constant(br->bank->delta->val);
                bank.attn = ad::constant(br->bank->attn->val);
                bank.slot_w = ad::constant(br->bank->slot_w->val);
                nb->bank = std::move(bank);
            }
            nb->proj_w = ad::constant(br->proj_w->val);
            nb->proj_b = ad::constant(br->proj_b->val);
            nb->head.group = br->head.group;
            nb->head.w = ad::constant(br->head.w->val);
            nb->head.b = ad::constant(br->head.b->val);
            levels[li] = std::move(nb);
        }
        copy.branches.push_back(std::move(levels));
    }
    if (cfg.arch == Arch::GlobalBaseline) {
        copy.base_proj_w = ad::constant(base_proj_w->val);
        copy.base_proj_b = ad::constant(base_proj_b->val);
        copy.base_head_w = ad::constant(base_head_w->val);
        copy.base_head_b = ad::constant(base_head_b->val);
    }
    return copy;
}

namespace {

Tensor keypoint_base(const SspModel& model, const Batch& batch, const Branch& br) {
    const auto [lh, lw] = model.level_extent(br.level);
    const int stride = level_stride(br.level);
    const int n = static_cast<int>(model.schema.group(br.group).keypoints.size());
    Tensor base({static_cast<int>(batch.samples.size()), n, 2});
    for (size_t b = 0; b < batch.samples.size(); ++b) {
        const auto mapped =
            ple::map_keypoints(batch.samples[b]->keypoints, stride, lh, lw, model.schema);
        const auto& pts = mapped.at(br.group).points;
        for (int i = 0; i < n; ++i) {
            base.at(static_cast<int>(b), i, 0) = pts[static_cast<size_t>(i)][0];
            base.at(static_cast<int>(b), i, 1) = pts[static_cast<size_t>(i)][1];
        }
    }
    return base;
}

Tensor sparse_base(const Batch& batch, const Branch& br) {
    const int n = static_cast<int>(br.sparse_points.size());
    Tensor base({static_cast<int>(batch.samples.size()), n, 2});
    for (size_t b = 0; b < batch.samples.size(); ++b)
        for (int i = 0; i < n; ++i) {
            base.at(static_cast<int>(b), i, 0) = br.sparse_points[static_cast<size_t>(i)][0];
            base.at(static_cast<int>(b), i, 1) = br.sparse_points[static_cast<size_t>(i)][1];
        }
    return base;
}

ad::Value baseline_logits(const SspModel& model, const FeaturePyramid& pyramid) {
    const auto feat = ad::linear(ad::global_avg_pool(pyramid.at(Level::P3)), model.base_proj_w,
                                 model.base_proj_b);
    return ad::linear(feat, model.base_head_w, model.base_head_b);
}

// Positions of `attrs` within the group's attribute list.
std::vector<int> within_group_positions(const AttributeGroup& g, const std::vector<int>& attrs) {
    std::vector<int> pos;
    for (int a : attrs) {
        const auto it = std::find(g.attribute_indices.begin(), g.attribute_indices.end(), a);
        if (it == g.attribute_indices.end())
            throw ValidationError("attribute not in group '" + g.name + "'");
        pos.push_back(static_cast<int>(it - g.attribute_indices.begin()));
    }
    return pos;
}

}  // namespace

ad::Value branch_feature(const SspModel& model, const Branch& br, const FeaturePyramid& pyramid,
                         const Batch& batch) {
    const auto& map = pyramid.at(br.level);
    switch (model.cfg.variant) {
        case ple::Variant::R: {
            const auto cropped = ple::region_crop(map, model.schema.group(br.group).region);
            return ple::aggregate_region(cropped, br.proj_w, br.proj_b);
        }
        case ple::Variant::K: {
            const auto sampled =
                ple::offset_sample_all(map, keypoint_base(model, batch, br), *br.bank);
            return ple::aggregate_points(sampled, br.proj_w, br.proj_b);
        }
        case ple::Variant::S: {
            const auto sampled = ple::offset_sample_all(map, sparse_base(batch, br), *br.bank);
            return ple::aggregate_points(sampled, br.proj_w, br.proj_b);
        }
    }
    throw ValidationError("unknown PLE variant");
}

ad::Value forward_logits(const SspModel& model, const FeaturePyramid& pyramid, const Batch& batch) {
    if (model.cfg.arch == Arch::GlobalBaseline) return baseline_logits(model, pyramid);
    if (!model.selection.is_frozen)
        throw StateError("forward_logits: scale selection is still searching");
    std::vector<ad::Value> parts;
    std::vector<std::vector<int>> destinations;
    for (size_t gi = 0; gi < model.schema.groups.size(); ++gi) {
        const auto& g = model.schema.groups[gi];
        for (Level l : kLevels) {
            const auto attrs = model.branch_attributes(static_cast<int>(gi), l);
            if (attrs.empty()) continue;
            const Branch& br = model.branch(static_cast<int>(gi), l);
            auto logits = ad::linear(branch_feature(model, br, pyramid, batch), br.head.w,
                                     br.head.b);
            if (attrs.size() != g.attribute_indices.size())
                logits = ad::select_columns(logits, within_group_positions(g, attrs));
            parts.push_back(logits);
            destinations.push_back(attrs);
        }
    }
    return ad::assemble_columns(parts, destinations, model.schema.num_attributes());
}

std::array<ad::Value, 3> search_level_logits(const SspModel& model, const FeaturePyramid& pyramid,
                                             const Batch& batch) {
    std::array<ad::Value, 3> out;
    for (Level l : kLevels) {
        std::vector<ad::Value> parts;
        std::vector<std::vector<int>> destinations;
        for (size_t gi = 0; gi < model.schema.groups.size(); ++gi) {
            const auto& g = model.schema.groups[gi];
            const Branch& br = model.branch(static_cast<int>(gi), l);
            parts.push_back(
                ad::linear(branch_feature(model, br, pyramid, batch), br.head.w, br.head.b));
            destinations.push_back(g.attribute_indices);
        }
        out[static_cast<size_t>(l)] =
            ad::assemble_columns(parts, destinations, model.schema.num_attributes());
    }
    return out;
}

namespace {

// Slices (B,M) labels to the given attribute columns together with the
// matching imbalance weights.
std::pair<Tensor, Tensor> sliced_labels_weights(const Tensor& labels,
                                                const heads::ImbalanceWeights& weights,
                                                const std::vector<int>& attrs) {
    const int b = labels.dim(0);
    Tensor lab({b, static_cast<int>(attrs.size())});
    Tensor wts({b, static_cast<int>(attrs.size())});
    for (int i = 0; i < b; ++i)
        for (size_t k = 0; k < attrs.size(); ++k) {
            const double y = labels.at(i, attrs[k]);
            if (y != 0.0 && y != 1.0) throw ValidationError("build_loss: labels must be binary");
            const double rj = weights.r.at(static_cast<size_t>(attrs[k]));
            lab.at(i, static_cast<int>(k)) = y;
            wts.at(i, static_cast<int>(k)) = y == 1.0 ? std::exp(rj) : std::exp(1.0 - rj);
        }
    return {std::move(lab), std::move(wts)};
}

}  // namespace

ad::Value build_loss(const SspModel& model, const FeaturePyramid& pyramid, const Batch& batch,
                     const heads::ImbalanceWeights& weights, LossBreakdown* breakdown) {
    ad::Value total;
    auto add_term = [&](const std::string& group, const ad::Value& term) {
        total = total ? ad::add(total, term) : term;
        if (breakdown) breakdown->per_group[group] += term->val[0];
    };
    if (model.cfg.arch == Arch::GlobalBaseline) {
        std::vector<int> all_attrs(static_cast<size_t>(model.schema.num_attributes()));
        for (size_t i = 0; i < all_attrs.size(); ++i) all_attrs[i] = static_cast<int>(i);
        const auto [lab, wts] = sliced_labels_weights(batch.labels, weights, all_attrs);
        add_term("global", ad::weighted_bce(baseline_logits(model, pyramid), lab, wts));
    } else {
        for (size_t gi = 0; gi < model.schema.groups.size(); ++gi) {
            for (Level l : kLevels) {
                if (!model.has_branch(static_cast<int>(gi), l)) continue;
                const auto attrs = model.branch_attributes(static_cast<int>(gi), l);
                if (attrs.empty()) continue;
                const auto& g = model.schema.groups[gi];
                const Branch& br = model.branch(static_cast<int>(gi), l);
                auto logits = ad::linear(branch_feature(model, br, pyramid, batch), br.head.w,
                                         br.head.b);
                if (attrs.size() != g.attribute_indices.size())
                    logits = ad::select_columns(logits, within_group_positions(g, attrs));
                const auto [lab, wts] = sliced_labels_weights(batch.labels, weights, attrs);
                add_term(g.name, ad::weighted_bce(logits, lab, wts));
            }
        }
    }
    if (!total) throw ValidationError("build_loss: nothing to optimize");
    if (breakdown) breakdown->total = total->val[0];
    return total;
}

Tensor dataset_labels(const Dataset& ds) {
    const int n = ds.size(), m = ds.schema.num_attributes();
    Tensor labels({n, m});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            labels.at(i, j) = ds.samples[static_cast<size_t>(i)].labels[static_cast<size_t>(j)];
    return labels;
}

Tensor predict_probs(const SspModel& model, const Dataset& ds, int batch_size) {
    if (ds.samples.empty()) throw ValidationError("predict_probs: empty dataset");
    const SspModel eval_model = model.detached();
    const int n = ds.size(), m = ds.schema.num_attributes();
    Tensor probs({n, m});
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        std::vector<int> idx(static_cast<size_t>(end - start));
        for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
        const Batch batch = make_batch(ds, idx);
        const auto pyramid = extract_pyramid(batch.images, eval_model.backbone);
        const auto logits = forward_logits(eval_model, pyramid, batch);
        const auto pred = heads::make_prediction(logits->val);
        for (int i = 0; i < end - start; ++i)
            for (int j = 0; j < m; ++j) probs.at(start + i, j) = pred.probs.at(i, j);
    }
    return probs;
}

ModelCamSource::ModelCamSource(const SspModel& model) : detached_(model.detached()) {
    if (detached_.cfg.arch == Arch::Sspnet && !detached_.selection.is_frozen)
        throw StateError("localization requires a frozen model");
}

std::vector<loc::CamData> ModelCamSource::evaluate(const Sample& sample,
                                                   const std::vector<int>& attributes) const {
    Dataset tmp;
    tmp.schema = detached_.schema;
    tmp.samples.push_back(sample);
    const Batch batch = make_batch(tmp, {0});
    const auto pyramid = extract_pyramid(batch.images, detached_.backbone);
    const auto owner = detached_.schema.attribute_group_index();

    std::vector<loc::CamData> out;
    for (int attr : attributes) {
        if (attr < 0 || attr >= detached_.schema.num_attributes())
            throw ValidationError("localize: attribute index " + std::to_string(attr) +
                                  " out of range");
        Level level = Level::P3;
        int gi = 0;
        if (detached_.cfg.arch == Arch::Sspnet) {
            gi = owner[static_cast<size_t>(attr)];
            const auto& g = detached_.schema.groups[static_cast<size_t>(gi)];
            level = detached_.cfg.afss_mode == afss::Mode::Group
                        ? afss::select(detached_.selection, g.name)
                        : afss::select(detached_.selection,
                                       detached_.schema.attributes[static_cast<size_t>(attr)]);
        }
        // The level map becomes the differentiation leaf; everything below
        // stays constant.
        auto leaf = ad::param(pyramid.at(level)->val, "cam.leaf");
        FeaturePyramid patched = pyramid;
        patched.levels[static_cast<size_t>(level)] = leaf;

        ad::Value logits;
        int column = attr;
        if (detached_.cfg.arch == Arch::GlobalBaseline) {
            logits = baseline_logits(detached_, patched);
        } else {
            const auto& g = detached_.schema.groups[static_cast<size_t>(gi)];
            const Branch& br = detached_.branch(gi, level);
            logits = ad::linear(branch_feature(detached_, br, patched, batch), br.head.w,
                                br.head.b);
            column = within_group_positions(g, {attr})[0];
        }
        const auto a_j = ad::select_scalar(logits, 0, column);
        ad::backward(a_j);

        loc::CamData data;
        const auto& shape = leaf->val.shape();  // (1, C, h, w)
        data.activations = Tensor({shape[1], shape[2], shape[3]});
        data.gradients = Tensor({shape[1], shape[2], shape[3]});
        for (int64_t i = 0; i < data.activations.numel(); ++i) {
            data.activations[i] = leaf->val[i];
            data.gradients[i] = leaf->grad[i];
        }
        data.logit = a_j->val[0];
        out.push_back(std::move(data));
    }
    return out;
}

}  // namespace sspnet

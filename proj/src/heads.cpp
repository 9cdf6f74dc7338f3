#include "sspnet/heads.hpp"

#include <cmath>

namespace sspnet::heads {

GroupHead GroupHead::init(const std::string& group, int n_attrs, int feature_dim, Rng& rng,
                          const std::string& name_prefix) {
    GroupHead h;
    h.group = group;
    Tensor w({n_attrs, feature_dim});
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    h.w = ad::param(std::move(w), name_prefix + ".w");
    h.b = ad::param(Tensor({n_attrs}), name_prefix + ".b");
    return h;
}

ImbalanceWeights compute_pos_rates(const Dataset& train) {
    if (train.samples.empty()) throw ValidationError("compute_pos_rates: empty dataset");
    const int m = train.schema.num_attributes();
    ImbalanceWeights w;
    w.r.assign(static_cast<size_t>(m), 0.0);
    for (const auto& s : train.samples) {
        if (static_cast<int>(s.labels.size()) != m)
            throw SchemaMismatchError("compute_pos_rates: label length mismatch");
        for (int j = 0; j < m; ++j) w.r[static_cast<size_t>(j)] += s.labels[static_cast<size_t>(j)];
    }
    for (auto& v : w.r) v /= static_cast<double>(train.samples.size());
    return w;
}

Prediction make_prediction(const Tensor& logits) {
    Prediction p;
    p.logits = logits;
    p.probs = Tensor(logits.shape());
    for (int64_t i = 0; i < logits.numel(); ++i) {
        const double a = logits[i];
        p.probs[i] = a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
    }
    return p;
}

ad::Value forward_heads(const std::map<std::string, ad::Value>& features,
                        const std::vector<GroupHead>& heads, const AttributeSchema& schema) {
    std::vector<ad::Value> parts;
    std::vector<std::vector<int>> columns;
    for (const auto& g : schema.groups) {
        const auto feat = features.find(g.name);
        if (feat == features.end())
            throw ValidationError("forward_heads: missing feature for group '" + g.name + "'");
        const GroupHead* head = nullptr;
        for (const auto& h : heads)
            if (h.group == g.name) head = &h;
        if (!head) throw ValidationError("forward_heads: missing head for group '" + g.name + "'");
        parts.push_back(ad::linear(feat->second, head->w, head->b));
        columns.push_back(g.attribute_indices);
    }
    return ad::assemble_columns(parts, columns, schema.num_attributes());
}

Tensor bce_weight_matrix(const Tensor& labels, const ImbalanceWeights& weights,
                         const std::vector<int>& columns) {
    if (labels.rank() != 2) throw ShapeError("bce_weight_matrix: (B,M) labels required");
    const int m = labels.dim(1);
    if (static_cast<int>(weights.r.size()) != m)
        throw SchemaMismatchError("bce_weight_matrix: positive-rate length mismatch");
    Tensor w(labels.shape());
    for (int j : columns) {
        if (j < 0 || j >= m) throw ShapeError("bce_weight_matrix: column out of range");
        const double rj = weights.r[static_cast<size_t>(j)];
        for (int i = 0; i < labels.dim(0); ++i) {
            const double y = labels.at(i, j);
            if (y != 0.0 && y != 1.0)
                throw ValidationError("weighted_bce: labels must be binary 0/1");
            w.at(i, j) = y == 1.0 ? std::exp(rj) : std::exp(1.0 - rj);
        }
    }
    return w;
}

ad::Value weighted_bce(const ad::Value& logits, const Tensor& labels,
                       const ImbalanceWeights& weights, const std::string& group,
                       const AttributeSchema& schema) {
    if (!logits->val.same_shape(labels)) throw ShapeError("weighted_bce: shape mismatch");
    const auto& g = schema.group(group);
    return ad::weighted_bce(logits, labels, bce_weight_matrix(labels, weights, g.attribute_indices));
}

double total_loss(const std::map<std::string, double>& group_losses,
                  const AttributeSchema& schema) {
    double acc = 0.0;
    for (const auto& g : schema.groups) {
        const auto it = group_losses.find(g.name);
        if (it == group_losses.end())
            throw ValidationError("total_loss: missing loss for group '" + g.name + "'");
        acc += it->second;
    }
    if (group_losses.size() != schema.groups.size())
        throw ValidationError("total_loss: extra group losses supplied");
    return acc;
}

}  // namespace sspnet::heads

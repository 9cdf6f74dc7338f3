#pragma once

#include <map>
#include <string>
#include <vector>

#include "sspnet/autodiff.hpp"
#include "sspnet/data.hpp"
#include "sspnet/rng.hpp"
#include "sspnet/schema.hpp"

namespace sspnet::heads {

// One fully connected layer per attribute group, D -> |group attributes|.
struct GroupHead {
    std::string group;
    ad::Value w;  // (K_g, D)
    ad::Value b;  // (K_g)

    static GroupHead init(const std::string& group, int n_attrs, int feature_dim, Rng& rng,
                          const std::string& name_prefix);
};

// Training-set positive rates r_j, computed once from the training split.
struct ImbalanceWeights {
    std::vector<double> r;  // length M, in [0,1]
};

ImbalanceWeights compute_pos_rates(const Dataset& train);

struct Prediction {
    Tensor logits;  // (B, M)
    Tensor probs;   // sigmoid of logits
};

Prediction make_prediction(const Tensor& logits);

// Assembles per-group logits into schema attribute order. Each group's
// logits depend only on that group's feature vector. Throws ValidationError
// naming the first missing group.
ad::Value forward_heads(const std::map<std::string, ad::Value>& features,
                        const std::vector<GroupHead>& heads, const AttributeSchema& schema);

// Per-element weights of the imbalance-weighted BCE: e^{r_j} for a positive
// label, e^{1-r_j} for a negative one; zero outside the group's columns when
// `group` is non-empty. labels must be binary.
Tensor bce_weight_matrix(const Tensor& labels, const ImbalanceWeights& weights,
                         const std::vector<int>& columns);

// Spec-level loss over one group's columns of an (B,M) logit matrix, negated
// so that lower is better, averaged over the batch only.
ad::Value weighted_bce(const ad::Value& logits, const Tensor& labels,
                       const ImbalanceWeights& weights, const std::string& group,
                       const AttributeSchema& schema);

// Plain sum of per-group losses; requires exactly the schema's groups.
double total_loss(const std::map<std::string, double>& group_losses,
                  const AttributeSchema& schema);

}  // namespace sspnet::heads

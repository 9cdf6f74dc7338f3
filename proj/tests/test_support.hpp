#pragma once

// Shared helpers for the test binaries: central-difference gradient checking
// and small tensor builders.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sspnet/autodiff.hpp"
#include "sspnet/rng.hpp"
#include "sspnet/tensor.hpp"

namespace testsupport {

using sspnet::Tensor;

inline Tensor random_tensor(std::vector<int> shape, sspnet::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

struct GradCheckFailure {
    std::string param;
    int64_t index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

// Central finite differences against the analytic gradient of a scalar
// function rebuilt from leaf tensors on every evaluation. Returns the worst
// relative error; fills `failure` with the first entry above tolerance.
//
// rel_error = |a - n| / max(|a|, |n|, floor)
inline double gradcheck(
    std::vector<std::pair<std::string, Tensor*>> leaves,
    const std::function<sspnet::ad::Value(const std::vector<sspnet::ad::Value>&)>& build,
    double h = 1e-5, double floor = 1e-4, GradCheckFailure* failure = nullptr) {
    using sspnet::ad::Value;

    auto make_nodes = [&]() {
        std::vector<Value> nodes;
        for (auto& [name, t] : leaves) nodes.push_back(sspnet::ad::param(*t, name));
        return nodes;
    };
    auto nodes = make_nodes();
    auto root = build(nodes);
    sspnet::ad::backward(root);

    auto eval = [&]() {
        auto ns = make_nodes();
        return build(ns)->val[0];
    };

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor* t = leaves[li].second;
        for (int64_t i = 0; i < t->numel(); ++i) {
            const double keep = (*t)[i];
            (*t)[i] = keep + h;
            const double fp = eval();
            (*t)[i] = keep - h;
            const double fm = eval();
            (*t)[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = nodes[li]->grad[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), floor});
            if (rel > worst) {
                worst = rel;
                if (failure) {
                    failure->param = leaves[li].first;
                    failure->index = i;
                    failure->analytic = analytic;
                    failure->numeric = numeric;
                    failure->rel_error = rel;
                }
            }
        }
    }
    return worst;
}

}  // namespace testsupport

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sspnet/tensor.hpp"

namespace sspnet::ad {

// Reverse-mode automatic differentiation over Tensor values. A forward pass
// builds a dynamic graph of shared Node objects; backward() walks it in
// reverse topological order. Leaf nodes created with param() persist across
// steps so an optimizer can read and update them in place.
struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backprop;  // accumulates node.grad into parents
    std::string tag;
};

Value constant(Tensor t, std::string tag = "");
Value param(Tensor t, std::string tag = "");

// Seeds root with 1 (root must be scalar) and accumulates gradients into
// every grad-requiring node of the subgraph. Grads are zeroed first.
void backward(const Value& root);

// --- operators -----------------------------------------------------------

Value add(const Value& a, const Value& b);
Value relu(const Value& x);
Value sigmoid(const Value& x);
Value scale(const Value& x, double s);

// x:(B,Cin,H,W), w:(Cout,Cin,kh,kw), b:(Cout) -> (B,Cout,Ho,Wo)
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);

// Nearest-neighbour 2x upsampling of (B,C,h,w).
Value upsample2x(const Value& x);

// Row slice [r0, r1) of (B,C,h,w), full width.
Value slice_rows(const Value& x, int r0, int r1);

// Two-level spatial pyramid pooling of (B,C,h,w): global average plus the
// four half/half cell averages, concatenated as (B,5C).
Value spp2(const Value& x);

// x:(B,In), w:(Out,In), b:(Out) -> (B,Out)
Value linear(const Value& x, const Value& w, const Value& b);

// Mean over the point axis of (B,N,C) -> (B,C).
Value mean_points(const Value& x);

// Global average pool of (B,C,h,w) -> (B,C).
Value global_avg_pool(const Value& x);

// Concatenate per-group logit blocks (B,k_g) into (B,M) columns given each
// block's destination column indices. Every column must be written once.
Value assemble_columns(const std::vector<Value>& parts,
                       const std::vector<std::vector<int>>& columns, int m_total);

// Fused prior-point sampler. For reference point n and offset slot m the
// feature map is bilinearly sampled at base[b,n] + delta[n,m] (border
// clamped; saturated coordinates get zero position gradient), projected by
// slot_w[m] and weighted by attn[m], summed over m:
//   out[b,n] = sum_m attn[m] * slot_w[m] * map_b(base[b,n] + delta[n,m])
// map:(B,C,h,w), base:(B,N,2) x/y order, delta:(N,M,2), slot_w:(M,C,C),
// attn:(M) -> (B,N,C). Differentiable in map, delta, slot_w and attn.
Value offset_points(const Value& map, const Tensor& base, const Value& delta,
                    const Value& slot_w, const Value& attn);

Value sum_all(const Value& x);

// Scalar view of one entry of a rank-2 tensor.
Value select_scalar(const Value& x, int row, int col);

// x[i:i+1, ...] along the leading axis.
Value slice_index0(const Value& x, int i);

// Same data, new shape (element count preserved).
Value reshape(const Value& x, std::vector<int> shape);

// Column subset of a rank-2 tensor in the given order.
Value select_columns(const Value& x, const std::vector<int>& cols);

// Mean over batch of the negated weighted log-likelihood:
//   (1/B) * sum_{b,k} weights[b,k] * (labels[b,k]*softplus(-a) +
//                                     (1-labels[b,k])*softplus(a))
// computed in log-sigmoid form. logits:(B,K); labels/weights same shape.
Value weighted_bce(const Value& logits, const Tensor& labels, const Tensor& weights);

}  // namespace sspnet::ad

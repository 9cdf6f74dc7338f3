#include "sspnet/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sspnet::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Value constant(Tensor t, std::string tag) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = false;
    n->tag = std::move(tag);
    return n;
}

Value param(Tensor t, std::string tag) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    n->tag = std::move(tag);
    return n;
}

static Value make_op(Tensor val, std::vector<Value> parents, std::function<void(Node&)> bp,
                     const char* tag) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(bp);
    n->tag = tag;
    return n;
}

void backward(const Value& root) {
    if (!root) throw Error("backward: null root");
    if (root->val.numel() != 1) throw ShapeError("backward: root must be scalar");

    // Post-order DFS over the ancestor graph.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : topo) {
        if (n->grad.same_shape(n->val))
            n->grad.fill(0.0);
        else
            n->grad = Tensor(n->val.shape());
    }
    root->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

// --- elementwise ----------------------------------------------------------

Value add(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val))
        throw ShapeError("add: shape mismatch " + a->val.shape_str() + " vs " + b->val.shape_str());
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] + b->val[i];
    return make_op(std::move(out), {a, b},
                   [n](Node& self) {
                       for (int64_t i = 0; i < n; ++i) {
                           self.parents[0]->grad[i] += self.grad[i];
                           self.parents[1]->grad[i] += self.grad[i];
                       }
                   },
                   "add");
}

Value relu(const Value& x) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = x->val[i] > 0.0 ? x->val[i] : 0.0;
    return make_op(std::move(out), {x},
                   [n](Node& self) {
                       for (int64_t i = 0; i < n; ++i)
                           if (self.parents[0]->val[i] > 0.0) self.parents[0]->grad[i] += self.grad[i];
                   },
                   "relu");
}

static double sigmoid_stable(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

Value sigmoid(const Value& x) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = sigmoid_stable(x->val[i]);
    return make_op(std::move(out), {x},
                   [n](Node& self) {
                       for (int64_t i = 0; i < n; ++i) {
                           const double s = self.val[i];
                           self.parents[0]->grad[i] += self.grad[i] * s * (1.0 - s);
                       }
                   },
                   "sigmoid");
}

Value scale(const Value& x, double s) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = x->val[i] * s;
    return make_op(std::move(out), {x},
                   [n, s](Node& self) {
                       for (int64_t i = 0; i < n; ++i) self.parents[0]->grad[i] += self.grad[i] * s;
                   },
                   "scale");
}

// --- convolution ----------------------------------------------------------

static void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
                   int ho, int wo, double* col) {
    // col is (cin*kh*kw) x (ho*wo), row-major.
    const int p = ho * wo;
    for (int c = 0; c < cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * p;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        row[oi * wo + oj] =
                            (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                ? x[(static_cast<int64_t>(c) * h + ii) * w + jj]
                                : 0.0;
                    }
                }
            }
        }
    }
}

static void col2im_add(const double* col, int cin, int h, int w, int kh, int kw, int stride,
                       int pad, int ho, int wo, double* dx) {
    const int p = ho * wo;
    for (int c = 0; c < cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * p;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        dx[(static_cast<int64_t>(c) * h + ii) * w + jj] += row[oi * wo + oj];
                    }
                }
            }
        }
    }
}

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d: rank-4 inputs required");
    const int bsz = xs[0], cin = xs[1], h = xs[2], wdt = xs[3];
    const int cout = ws[0], kh = ws[2], kw = ws[3];
    if (ws[1] != cin) throw ShapeError("conv2d: channel mismatch");
    if (b->val.numel() != cout) throw ShapeError("conv2d: bias length mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wdt + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");

    const int k = cin * kh * kw;
    const int p = ho * wo;
    Tensor out({bsz, cout, ho, wo});
    {
        std::vector<double> col(static_cast<size_t>(k) * p);
        CMapMat wm(w->val.data(), cout, k);
        for (int bi = 0; bi < bsz; ++bi) {
            im2col(x->val.data() + static_cast<int64_t>(bi) * cin * h * wdt, cin, h, wdt, kh, kw,
                   stride, pad, ho, wo, col.data());
            CMapMat cm(col.data(), k, p);
            MapMat ym(out.data() + static_cast<int64_t>(bi) * cout * p, cout, p);
            ym.noalias() = wm * cm;
            for (int co = 0; co < cout; ++co) ym.row(co).array() += b->val[co];
        }
    }

    auto bp = [=](Node& self) {
        const Tensor& xv = self.parents[0]->val;
        const Tensor& wv = self.parents[1]->val;
        Tensor& dx = self.parents[0]->grad;
        Tensor& dw = self.parents[1]->grad;
        Tensor& db = self.parents[2]->grad;
        std::vector<double> col(static_cast<size_t>(k) * p);
        std::vector<double> dcol(static_cast<size_t>(k) * p);
        CMapMat wm(wv.data(), cout, k);
        MapMat dwm(dw.data(), cout, k);
        for (int bi = 0; bi < bsz; ++bi) {
            im2col(xv.data() + static_cast<int64_t>(bi) * cin * h * wdt, cin, h, wdt, kh, kw,
                   stride, pad, ho, wo, col.data());
            CMapMat cm(col.data(), k, p);
            CMapMat dym(self.grad.data() + static_cast<int64_t>(bi) * cout * p, cout, p);
            dwm.noalias() += dym * cm.transpose();
            for (int co = 0; co < cout; ++co) db[co] += dym.row(co).sum();
            MapMat dcm(dcol.data(), k, p);
            dcm.noalias() = wm.transpose() * dym;
            col2im_add(dcol.data(), cin, h, wdt, kh, kw, stride, pad, ho, wo,
                       dx.data() + static_cast<int64_t>(bi) * cin * h * wdt);
        }
    };
    return make_op(std::move(out), {x, w, b}, std::move(bp), "conv2d");
}

// --- spatial --------------------------------------------------------------

Value upsample2x(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("upsample2x: rank-4 input required");
    const int bsz = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({bsz, c, 2 * h, 2 * w});
    for (int bi = 0; bi < bsz; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double v = x->val.at(bi, ci, i, j);
                    out.at(bi, ci, 2 * i, 2 * j) = v;
                    out.at(bi, ci, 2 * i, 2 * j + 1) = v;
                    out.at(bi, ci, 2 * i + 1, 2 * j) = v;
                    out.at(bi, ci, 2 * i + 1, 2 * j + 1) = v;
                }
    return make_op(std::move(out), {x},
                   [=](Node& self) {
                       Tensor& dx = self.parents[0]->grad;
                       for (int bi = 0; bi < bsz; ++bi)
                           for (int ci = 0; ci < c; ++ci)
                               for (int i = 0; i < h; ++i)
                                   for (int j = 0; j < w; ++j)
                                       dx.at(bi, ci, i, j) += self.grad.at(bi, ci, 2 * i, 2 * j) +
                                                              self.grad.at(bi, ci, 2 * i, 2 * j + 1) +
                                                              self.grad.at(bi, ci, 2 * i + 1, 2 * j) +
                                                              self.grad.at(bi, ci, 2 * i + 1, 2 * j + 1);
                   },
                   "upsample2x");
}

Value slice_rows(const Value& x, int r0, int r1) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("slice_rows: rank-4 input required");
    const int bsz = s[0], c = s[1], h = s[2], w = s[3];
    if (r0 < 0 || r1 > h || r0 >= r1) throw ShapeError("slice_rows: bad range");
    const int hh = r1 - r0;
    Tensor out({bsz, c, hh, w});
    for (int bi = 0; bi < bsz; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < hh; ++i)
                for (int j = 0; j < w; ++j) out.at(bi, ci, i, j) = x->val.at(bi, ci, r0 + i, j);
    return make_op(std::move(out), {x},
                   [=](Node& self) {
                       Tensor& dx = self.parents[0]->grad;
                       for (int bi = 0; bi < bsz; ++bi)
                           for (int ci = 0; ci < c; ++ci)
                               for (int i = 0; i < hh; ++i)
                                   for (int j = 0; j < w; ++j)
                                       dx.at(bi, ci, r0 + i, j) += self.grad.at(bi, ci, i, j);
                   },
                   "slice_rows");
}

// Half ranges used by spp2; degenerate extents reuse the single row/column.
static std::pair<int, int> half_range(int n, int which) {
    const int mid = n / 2;
    if (which == 0) return {0, std::max(1, mid)};
    return {std::min(n - 1, mid), n};
}

Value spp2(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("spp2: rank-4 input required");
    const int bsz = s[0], c = s[1], h = s[2], w = s[3];
    if (h < 1 || w < 1) throw ShapeError("spp2: empty map");
    Tensor out({bsz, 5 * c});
    // cell 0: global; cells 1..4: (row half, col half) in row-major order
    struct Cell {
        int r0, r1, c0, c1;
    };
    std::vector<Cell> cells;
    cells.push_back({0, h, 0, w});
    for (int ri = 0; ri < 2; ++ri)
        for (int cj = 0; cj < 2; ++cj) {
            auto [r0, r1] = half_range(h, ri);
            auto [c0, c1] = half_range(w, cj);
            cells.push_back({r0, r1, c0, c1});
        }
    for (int bi = 0; bi < bsz; ++bi)
        for (size_t k = 0; k < cells.size(); ++k) {
            const auto& cell = cells[k];
            const double inv = 1.0 / (static_cast<double>(cell.r1 - cell.r0) * (cell.c1 - cell.c0));
            for (int ci = 0; ci < c; ++ci) {
                double acc = 0.0;
                for (int i = cell.r0; i < cell.r1; ++i)
                    for (int j = cell.c0; j < cell.c1; ++j) acc += x->val.at(bi, ci, i, j);
                out.at(bi, static_cast<int>(k) * c + ci) = acc * inv;
            }
        }
    return make_op(std::move(out), {x},
                   [=](Node& self) {
                       Tensor& dx = self.parents[0]->grad;
                       for (int bi = 0; bi < bsz; ++bi)
                           for (size_t k = 0; k < cells.size(); ++k) {
                               const auto& cell = cells[k];
                               const double inv =
                                   1.0 / (static_cast<double>(cell.r1 - cell.r0) * (cell.c1 - cell.c0));
                               for (int ci = 0; ci < c; ++ci) {
                                   const double g =
                                       self.grad.at(bi, static_cast<int>(k) * c + ci) * inv;
                                   for (int i = cell.r0; i < cell.r1; ++i)
                                       for (int j = cell.c0; j < cell.c1; ++j)
                                           dx.at(bi, ci, i, j) += g;
                               }
                           }
                   },
                   "spp2");
}

Value linear(const Value& x, const Value& w, const Value& b) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 2 || ws.size() != 2) throw ShapeError("linear: rank-2 inputs required");
    const int bsz = xs[0], in = xs[1], out_dim = ws[0];
    if (ws[1] != in) throw ShapeError("linear: width mismatch");
    if (b->val.numel() != out_dim) throw ShapeError("linear: bias length mismatch");
    Tensor out({bsz, out_dim});
    {
        CMapMat xm(x->val.data(), bsz, in);
        CMapMat wm(w->val.data(), out_dim, in);
        MapMat ym(out.data(), bsz, out_dim);
        ym.noalias() = xm * wm.transpose();
        for (int i = 0; i < bsz; ++i)
            for (int j = 0; j < out_dim; ++j) ym(i, j) += b->val[j];
    }
    return make_op(std::move(out), {x, w, b},
                   [=](Node& self) {
                       CMapMat xm(self.parents[0]->val.data(), bsz, in);
                       CMapMat wm(self.parents[1]->val.data(), out_dim, in);
                       CMapMat dym(self.grad.data(), bsz, out_dim);
                       MapMat dxm(self.parents[0]->grad.data(), bsz, in);
                       MapMat dwm(self.parents[1]->grad.data(), out_dim, in);
                       dxm.noalias() += dym * wm;
                       dwm.noalias() += dym.transpose() * xm;
                       Tensor& db = self.parents[2]->grad;
                       for (int i = 0; i < bsz; ++i)
                           for (int j = 0; j < out_dim; ++j) db[j] += dym(i, j);
                   },
                   "linear");
}

Value mean_points(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 3) throw ShapeError("mean_points: rank-3 input required");
    const int bsz = s[0], n = s[1], c = s[2];
    if (n < 1) throw ShapeError("mean_points: empty point list");
    Tensor out({bsz, c});
    const double inv = 1.0 / n;
    for (int bi = 0; bi < bsz; ++bi)
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) out.at(bi, ci) += x->val.at(bi, ni, ci) * inv;
    return make_op(std::move(out), {x},
                   [=](Node& self) {
                       Tensor& dx = self.parents[0]->grad;
                       for (int bi = 0; bi < bsz; ++bi)
                           for (int ni = 0; ni < n; ++ni)
                               for (int ci = 0; ci < c; ++ci)
                                   dx.at(bi, ni, ci) += self.grad.at(bi, ci) * inv;
                   },
                   "mean_points");
}

Value global_avg_pool(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("global_avg_pool: rank-4 input required");
    const int bsz = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({bsz, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int bi = 0; bi < bsz; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) acc += x->val.at(bi, ci, i, j);
            out.at(bi, ci) = acc * inv;
        }
    return make_op(std::move(out), {x},
                   [=](Node& self) {
                       Tensor& dx = self.parents[0]->grad;
                       for (int bi = 0; bi < bsz; ++bi)
                           for (int ci = 0; ci < c; ++ci) {
                               const double g = self.grad.at(bi, ci) * inv;
                               for (int i = 0; i < h; ++i)
                                   for (int j = 0; j < w; ++j) dx.at(bi, ci, i, j) += g;
                           }
                   },
                   "global_avg_pool");
}

Value assemble_columns(const std::vector<Value>& parts,
                       const std::vector<std::vector<int>>& columns, int m_total) {
    if (parts.empty() || parts.size() != columns.size())
        throw ValidationError("assemble_columns: parts/columns mismatch");
    const int bsz = parts[0]->val.dim(0);
    std::vector<int> hits(static_cast<size_t>(m_total), 0);
    for (size_t g = 0; g < parts.size(); ++g) {
        if (parts[g]->val.rank() != 2 || parts[g]->val.dim(0) != bsz)
            throw ShapeError("assemble_columns: bad part shape");
        if (parts[g]->val.dim(1) != static_cast<int>(columns[g].size()))
            throw ShapeError("assemble_columns: column count mismatch");
        for (int c : columns[g]) {
            if (c < 0 || c >= m_total) throw ValidationError("assemble_columns: column out of range");
            hits[static_cast<size_t>(c)]++;
        }
    }
    for (int c = 0; c < m_total; ++c)
        if (hits[static_cast<size_t>(c)] != 1)
            throw ValidationError("assemble_columns: column " + std::to_string(c) +
                                  " written " + std::to_string(hits[static_cast<size_t>(c)]) +
                                  " times");
    Tensor out({bsz, m_total});
    for (size_t g = 0; g < parts.size(); ++g)
        for (int bi = 0; bi < bsz; ++bi)
            for (size_t k = 0; k < columns[g].size(); ++k)
                out.at(bi, columns[g][k]) = parts[g]->val.at(bi, static_cast<int>(k));
    auto cols = columns;
    return make_op(std::move(out), parts,
                   [bsz, cols](Node& self) {
                       for (size_t g = 0; g < self.parents.size(); ++g)
                           for (int bi = 0; bi < bsz; ++bi)
                               for (size_t k = 0; k < cols[g].size(); ++k)
                                   self.parents[g]->grad.at(bi, static_cast<int>(k)) +=
                                       self.grad.at(bi, cols[g][k]);
                   },
                   "assemble_columns");
}

// --- prior point sampling ---------------------------------------------------

namespace {

struct Axis {
    int i0 = 0, i1 = 0;
    double f = 0.0;
    bool saturated = false;
};

Axis axis_setup(double base, double delta, int n) {
    Axis a;
    double p = base + delta;
    if (p < 0.0) {
        p = 0.0;
        a.saturated = true;
    } else if (p > n - 1) {
        p = n - 1;
        a.saturated = true;
    }
    if (n == 1) {
        a.i0 = a.i1 = 0;
        a.f = 0.0;
        a.saturated = true;
    } else {
        int i0 = static_cast<int>(std::floor(p));
        if (i0 > n - 2) i0 = n - 2;
        a.i0 = i0;
        a.i1 = i0 + 1;
        a.f = p - i0;
    }
    return a;
}

}  // namespace

Value offset_points(const Value& map, const Tensor& base, const Value& delta,
                    const Value& slot_w, const Value& attn) {
    const auto& ms = map->val.shape();
    if (ms.size() != 4) throw ShapeError("offset_points: map must be rank 4");
    const int bsz = ms[0], c = ms[1], h = ms[2], w = ms[3];
    if (base.rank() != 3 || base.dim(0) != bsz || base.dim(2) != 2)
        throw ShapeError("offset_points: base must be (B,N,2)");
    const int npts = base.dim(1);
    const auto& ds = delta->val.shape();
    if (ds.size() != 3 || ds[0] != npts || ds[2] != 2)
        throw ShapeError("offset_points: delta must be (N,M,2)");
    const int mslots = ds[1];
    if (slot_w->val.rank() != 3 || slot_w->val.dim(0) != mslots || slot_w->val.dim(1) != c ||
        slot_w->val.dim(2) != c)
        throw ShapeError("offset_points: slot_w must be (M,C,C)");
    if (attn->val.numel() != mslots) throw ShapeError("offset_points: attn must be (M)");

    const int rows = bsz * npts;
    // Sampled vectors per slot, kept for the backward GEMMs.
    std::vector<RowMat> v(static_cast<size_t>(mslots));
    for (int m = 0; m < mslots; ++m) v[static_cast<size_t>(m)].setZero(rows, c);
    for (int bi = 0; bi < bsz; ++bi) {
        const double* mb = map->val.data() + static_cast<int64_t>(bi) * c * h * w;
        for (int ni = 0; ni < npts; ++ni) {
            const double bx = base.at(bi, ni, 0);
            const double by = base.at(bi, ni, 1);
            for (int m = 0; m < mslots; ++m) {
                const Axis ax = axis_setup(bx, delta->val.at(ni, m, 0), w);
                const Axis ay = axis_setup(by, delta->val.at(ni, m, 1), h);
                const double w00 = (1.0 - ay.f) * (1.0 - ax.f);
                const double w01 = (1.0 - ay.f) * ax.f;
                const double w10 = ay.f * (1.0 - ax.f);
                const double w11 = ay.f * ax.f;
                double* dst = v[static_cast<size_t>(m)].row(bi * npts + ni).data();
                for (int ci = 0; ci < c; ++ci) {
                    const double* plane = mb + static_cast<int64_t>(ci) * h * w;
                    dst[ci] = w00 * plane[ay.i0 * w + ax.i0] + w01 * plane[ay.i0 * w + ax.i1] +
                              w10 * plane[ay.i1 * w + ax.i0] + w11 * plane[ay.i1 * w + ax.i1];
                }
            }
        }
    }
    Tensor out({bsz, npts, c});
    {
        MapMat om(out.data(), rows, c);
        for (int m = 0; m < mslots; ++m) {
            CMapMat wm(slot_w->val.data() + static_cast<int64_t>(m) * c * c, c, c);
            // y = W v  =>  row form: y_row = v_row * W^T
            om.noalias() += attn->val[m] * (v[static_cast<size_t>(m)] * wm.transpose());
        }
    }

    Tensor base_copy = base;
    auto bp = [=, v = std::move(v), base = std::move(base_copy)](Node& self) {
        const Tensor& mapv = self.parents[0]->val;
        const Tensor& deltav = self.parents[1]->val;
        const Tensor& slotv = self.parents[2]->val;
        const Tensor& attnv = self.parents[3]->val;
        Tensor& dmap = self.parents[0]->grad;
        Tensor& ddelta = self.parents[1]->grad;
        Tensor& dslot = self.parents[2]->grad;
        Tensor& dattn = self.parents[3]->grad;

        CMapMat dout(self.grad.data(), rows, c);
        RowMat t(rows, c);  // unscaled dv for the current slot
        for (int m = 0; m < mslots; ++m) {
            CMapMat wm(slotv.data() + static_cast<int64_t>(m) * c * c, c, c);
            const RowMat& vm = v[static_cast<size_t>(m)];
            // dv_row (unscaled by attn) = dout_row * W
            t.noalias() = dout * wm;
            dattn[m] += (t.array() * vm.array()).sum();
            MapMat dwm(dslot.data() + static_cast<int64_t>(m) * c * c, c, c);
            dwm.noalias() += attnv[m] * (dout.transpose() * vm);
            const double am = attnv[m];
            for (int bi = 0; bi < bsz; ++bi) {
                double* dmb = dmap.data() + static_cast<int64_t>(bi) * c * h * w;
                const double* mb = mapv.data() + static_cast<int64_t>(bi) * c * h * w;
                for (int ni = 0; ni < npts; ++ni) {
                    const Axis ax = axis_setup(base.at(bi, ni, 0), deltav.at(ni, m, 0), w);
                    const Axis ay = axis_setup(base.at(bi, ni, 1), deltav.at(ni, m, 1), h);
                    const double w00 = (1.0 - ay.f) * (1.0 - ax.f);
                    const double w01 = (1.0 - ay.f) * ax.f;
                    const double w10 = ay.f * (1.0 - ax.f);
                    const double w11 = ay.f * ax.f;
                    const double* dv = t.row(bi * npts + ni).data();
                    double gx = 0.0, gy = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        const double g = am * dv[ci];
                        double* dplane = dmb + static_cast<int64_t>(ci) * h * w;
                        dplane[ay.i0 * w + ax.i0] += g * w00;
                        dplane[ay.i0 * w + ax.i1] += g * w01;
                        dplane[ay.i1 * w + ax.i0] += g * w10;
                        dplane[ay.i1 * w + ax.i1] += g * w11;
                        const double* plane = mb + static_cast<int64_t>(ci) * h * w;
                        const double a00 = plane[ay.i0 * w + ax.i0];
                        const double a01 = plane[ay.i0 * w + ax.i1];
                        const double a10 = plane[ay.i1 * w + ax.i0];
                        const double a11 = plane[ay.i1 * w + ax.i1];
                        gx += g * ((1.0 - ay.f) * (a01 - a00) + ay.f * (a11 - a10));
                        gy += g * ((1.0 - ax.f) * (a10 - a00) + ax.f * (a11 - a01));
                    }
                    if (!ax.saturated) ddelta.at(ni, m, 0) += gx;
                    if (!ay.saturated) ddelta.at(ni, m, 1) += gy;
                }
            }
        }
    };
    return make_op(std::move(out), {map, delta, slot_w, attn}, std::move(bp), "offset_points");
}

// --- reductions and losses --------------------------------------------------

Value sum_all(const Value& x) {
    double acc = 0.0;
    const int64_t n = x->val.numel();
    for (int64_t i = 0; i < n; ++i) acc += x->val[i];
    return make_op(Tensor::scalar(acc), {x},
                   [n](Node& self) {
                       const double g = self.grad[0];
                       for (int64_t i = 0; i < n; ++i) self.parents[0]->grad[i] += g;
                   },
                   "sum_all");
}

Value select_scalar(const Value& x, int row, int col) {
    if (x->val.rank() != 2) throw ShapeError("select_scalar: rank-2 input required");
    if (row < 0 || row >= x->val.dim(0) || col < 0 || col >= x->val.dim(1))
        throw ShapeError("select_scalar: index out of range");
    return make_op(Tensor::scalar(x->val.at(row, col)), {x},
                   [row, col](Node& self) { self.parents[0]->grad.at(row, col) += self.grad[0]; },
                   "select_scalar");
}

Value slice_index0(const Value& x, int i) {
    const auto& s = x->val.shape();
    if (s.empty()) throw ShapeError("slice_index0: rank-0 input");
    if (i < 0 || i >= s[0]) throw ShapeError("slice_index0: index out of range");
    std::vector<int> out_shape = s;
    out_shape[0] = 1;
    const int64_t block = x->val.numel() / s[0];
    Tensor out(out_shape);
    for (int64_t k = 0; k < block; ++k) out[k] = x->val[static_cast<int64_t>(i) * block + k];
    return make_op(std::move(out), {x},
                   [i, block](Node& self) {
                       for (int64_t k = 0; k < block; ++k)
                           self.parents[0]->grad[static_cast<int64_t>(i) * block + k] +=
                               self.grad[k];
                   },
                   "slice_index0");
}

Value reshape(const Value& x, std::vector<int> shape) {
    if (Tensor::numel_of(shape) != x->val.numel())
        throw ShapeError("reshape: element count mismatch");
    Tensor out(std::move(shape));
    const int64_t n = out.numel();
    for (int64_t k = 0; k < n; ++k) out[k] = x->val[k];
    return make_op(std::move(out), {x},
                   [n](Node& self) {
                       for (int64_t k = 0; k < n; ++k) self.parents[0]->grad[k] += self.grad[k];
                   },
                   "reshape");
}

Value select_columns(const Value& x, const std::vector<int>& cols) {
    if (x->val.rank() != 2) throw ShapeError("select_columns: rank-2 input required");
    const int bsz = x->val.dim(0), width = x->val.dim(1);
    for (int c : cols)
        if (c < 0 || c >= width) throw ShapeError("select_columns: column out of range");
    Tensor out({bsz, static_cast<int>(cols.size())});
    for (int i = 0; i < bsz; ++i)
        for (size_t k = 0; k < cols.size(); ++k) out.at(i, static_cast<int>(k)) = x->val.at(i, cols[k]);
    auto cc = cols;
    return make_op(std::move(out), {x},
                   [bsz, cc](Node& self) {
                       for (int i = 0; i < bsz; ++i)
                           for (size_t k = 0; k < cc.size(); ++k)
                               self.parents[0]->grad.at(i, cc[k]) +=
                                   self.grad.at(i, static_cast<int>(k));
                   },
                   "select_columns");
}

static double softplus(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

Value weighted_bce(const Value& logits, const Tensor& labels, const Tensor& weights) {
    if (!logits->val.same_shape(labels) || !logits->val.same_shape(weights))
        throw ShapeError("weighted_bce: shape mismatch");
    if (logits->val.rank() != 2) throw ShapeError("weighted_bce: rank-2 input required");
    const int bsz = logits->val.dim(0);
    const int64_t n = logits->val.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double a = logits->val[i];
        const double y = labels[i];
        acc += weights[i] * (y * softplus(-a) + (1.0 - y) * softplus(a));
    }
    acc /= bsz;
    Tensor lab = labels, wts = weights;
    return make_op(Tensor::scalar(acc), {logits},
                   [n, bsz, lab = std::move(lab), wts = std::move(wts)](Node& self) {
                       const double g = self.grad[0] / bsz;
                       for (int64_t i = 0; i < n; ++i) {
                           const double a = self.parents[0]->val[i];
                           self.parents[0]->grad[i] +=
                               g * wts[i] * (sigmoid_stable(a) - lab[i]);
                       }
                   },
                   "weighted_bce");
}

}  // namespace sspnet::ad

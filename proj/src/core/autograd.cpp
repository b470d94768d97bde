#include "mcactrl/core/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mcactrl {

namespace {

thread_local bool g_grad_enabled = true;

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using MatRd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward_fn = std::move(fn);
        }
    }
    return node;
}

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

struct ConvGeom {
    int cin, h, w, k, stride, pad, hout, wout;
    int rows() const { return cin * k * k; }
    int cols() const { return hout * wout; }
};

// Valid output range [lo, hi) for kernel offset `kofs` along one axis.
inline void valid_range(int out, int in, int stride, int pad, int kofs, int& lo, int& hi) {
    lo = 0;
    while (lo < out && lo * stride - pad + kofs < 0) ++lo;
    hi = out;
    while (hi > lo && (hi - 1) * stride - pad + kofs >= in) --hi;
}

void im2col(const float* x, const ConvGeom& g, float* col) {
    for (int c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            int ylo, yhi;
            valid_range(g.hout, g.h, g.stride, g.pad, ky, ylo, yhi);
            for (int kx = 0; kx < g.k; ++kx) {
                int xlo, xhi;
                valid_range(g.wout, g.w, g.stride, g.pad, kx, xlo, xhi);
                float* dst = col + static_cast<int64_t>((c * g.k + ky) * g.k + kx) * g.cols();
                if (ylo > 0 || yhi < g.hout || xlo > 0 || xhi < g.wout) std::fill_n(dst, g.cols(), 0.0f);
                for (int oy = ylo; oy < yhi; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    float* row = dst + oy * g.wout;
                    const float* src = x + (static_cast<int64_t>(c) * g.h + iy) * g.w - g.pad + kx;
                    if (g.stride == 1) {
                        std::copy(src + xlo, src + xhi, row + xlo);
                    } else {
                        for (int ox = xlo; ox < xhi; ++ox) row[ox] = src[ox * g.stride];
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, const ConvGeom& g, float* x) {
    for (int c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            int ylo, yhi;
            valid_range(g.hout, g.h, g.stride, g.pad, ky, ylo, yhi);
            for (int kx = 0; kx < g.k; ++kx) {
                int xlo, xhi;
                valid_range(g.wout, g.w, g.stride, g.pad, kx, xlo, xhi);
                const float* src = col + static_cast<int64_t>((c * g.k + ky) * g.k + kx) * g.cols();
                for (int oy = ylo; oy < yhi; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    float* dst = x + (static_cast<int64_t>(c) * g.h + iy) * g.w - g.pad + kx;
                    const float* row = src + oy * g.wout;
                    if (g.stride == 1) {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox] += row[ox];
                    } else {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox * g.stride] += row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor(value.shape);
    return grad;
}

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

Var parameter(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
    if (!root || root->value.numel() != 1) throw std::invalid_argument("backward needs a scalar root");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad().data[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.shape == n->value.shape) n->backward_fn(*n);
    }
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* probs,
                            std::span<const float> key_bias) {
    require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention expects [heads, tokens, d] tensors");
    const int heads = q.dim(0), nq = q.dim(1), d = q.dim(2), nk = k.dim(1), dv = v.dim(2);
    require(k.dim(0) == heads && v.dim(0) == heads && k.dim(2) == d && v.dim(1) == nk,
            "attention operands disagree on heads, tokens or head dim");
    require(key_bias.empty() || static_cast<int>(key_bias.size()) == nk, "attention key bias length mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out({heads, nq, dv});
    if (probs) *probs = Tensor({heads, nq, nk});
    // Double precision: float logits of magnitude ~10 already carry 1e-6 error into the weights.
    MatRd p(nq, nk);
    for (int h = 0; h < heads; ++h) {
        const MatRd qh = CMapR(q.ptr() + static_cast<int64_t>(h) * nq * d, nq, d).cast<double>();
        const MatRd kh = CMapR(k.ptr() + static_cast<int64_t>(h) * nk * d, nk, d).cast<double>();
        const MatRd vh = CMapR(v.ptr() + static_cast<int64_t>(h) * nk * dv, nk, dv).cast<double>();
        p.noalias() = (qh * kh.transpose()) * scale;
        if (!key_bias.empty()) p.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(key_bias.data(), nk).cast<double>();
        for (int i = 0; i < nq; ++i) {
            auto row = p.row(i);
            const double m = row.maxCoeff();
            row = (row.array() - m).exp();
            row /= row.sum();
        }
        MapR(out.ptr() + static_cast<int64_t>(h) * nq * dv, nq, dv) = (p * vh).cast<float>();
        if (probs) MapR(probs->ptr() + static_cast<int64_t>(h) * nq * nk, nq, nk) = p.cast<float>();
    }
    return out;
}

Tensor split_heads(const float* rows, int tokens, int heads, int head_dim) {
    Tensor out({heads, tokens, head_dim});
    const int width = heads * head_dim;
    for (int t = 0; t < tokens; ++t) {
        for (int h = 0; h < heads; ++h) {
            std::copy_n(rows + static_cast<int64_t>(t) * width + h * head_dim, head_dim,
                        out.ptr() + (static_cast<int64_t>(h) * tokens + t) * head_dim);
        }
    }
    return out;
}

void merge_heads(const Tensor& hm, float* rows) {
    const int heads = hm.dim(0), tokens = hm.dim(1), d = hm.dim(2);
    for (int h = 0; h < heads; ++h) {
        for (int t = 0; t < tokens; ++t) {
            std::copy_n(hm.ptr() + (static_cast<int64_t>(h) * tokens + t) * d, d,
                        rows + static_cast<int64_t>(t) * heads * d + h * d);
        }
    }
}

namespace ops {

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    require(xv.rank() == 4 && wv.rank() == 4, "conv2d expects 4-d input and weight");
    require(wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3), "conv2d channel/kernel mismatch");
    const int batch = xv.dim(0), cout = wv.dim(0);
    ConvGeom g{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), stride, pad, 0, 0};
    g.hout = (g.h + 2 * pad - g.k) / stride + 1;
    g.wout = (g.w + 2 * pad - g.k) / stride + 1;
    const bool direct = g.k == 1 && stride == 1 && pad == 0;
    Tensor out({batch, cout, g.hout, g.wout});
    CMapR wm(wv.ptr(), cout, g.rows());
    std::vector<float> col(direct ? 0 : static_cast<size_t>(g.rows()) * g.cols());
    const int64_t in_stride = static_cast<int64_t>(g.cin) * g.h * g.w;
    const int64_t out_stride = static_cast<int64_t>(cout) * g.cols();
    for (int n = 0; n < batch; ++n) {
        const float* xin = xv.ptr() + n * in_stride;
        if (!direct) im2col(xin, g, col.data());
        CMapR cm(direct ? xin : col.data(), g.rows(), g.cols());
        MapR om(out.ptr() + n * out_stride, cout, g.cols());
        om.noalias() = wm * cm;
        if (b) om.colwise() += Eigen::Map<const Eigen::VectorXf>(b->value.ptr(), cout);
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make_result(std::move(out), std::move(parents), [g, direct, batch, cout, in_stride, out_stride](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        CMapR wm(wn.value.ptr(), cout, g.rows());
        std::vector<float> col(static_cast<size_t>(g.rows()) * g.cols());
        for (int n = 0; n < batch; ++n) {
            CMapR gout(self.grad.ptr() + n * out_stride, cout, g.cols());
            if (bn && bn->requires_grad) {
                Eigen::Map<Eigen::VectorXf>(bn->ensure_grad().ptr(), cout) += gout.rowwise().sum();
            }
            const float* xin = xn.value.ptr() + n * in_stride;
            if (wn.requires_grad) {
                if (!direct) im2col(xin, g, col.data());
                CMapR cm(direct ? xin : col.data(), g.rows(), g.cols());
                MapR(wn.ensure_grad().ptr(), cout, g.rows()).noalias() += gout * cm.transpose();
            }
            if (xn.requires_grad) {
                float* gx = xn.ensure_grad().ptr() + n * in_stride;
                if (direct) {
                    MapR(gx, g.rows(), g.cols()).noalias() += wm.transpose() * gout;
                } else {
                    MapR(col.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gout;
                    col2im_add(col.data(), g, gx);
                }
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps) {
    const Tensor& xv = x->value;
    require(xv.rank() == 4, "group_norm expects [B,C,H,W]");
    const int batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    require(ch % groups == 0, "group_norm: channels not divisible by groups");
    const int cpg = ch / groups;
    const int64_t gsize = static_cast<int64_t>(cpg) * hw;
    Tensor out(xv.shape);
    Tensor xhat(xv.shape);
    std::vector<float> inv_std(static_cast<size_t>(batch * groups));
    for (int n = 0; n < batch; ++n) {
        for (int gi = 0; gi < groups; ++gi) {
            const int64_t base = (static_cast<int64_t>(n) * ch + gi * cpg) * hw;
            double mean = 0.0, var = 0.0;
            for (int64_t i = 0; i < gsize; ++i) mean += xv.data[base + i];
            mean /= static_cast<double>(gsize);
            for (int64_t i = 0; i < gsize; ++i) {
                const double dlt = xv.data[base + i] - mean;
                var += dlt * dlt;
            }
            var /= static_cast<double>(gsize);
            const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
            inv_std[static_cast<size_t>(n * groups + gi)] = istd;
            for (int c = 0; c < cpg; ++c) {
                const int cc = gi * cpg + c;
                const float ga = gamma->value.data[cc], be = beta->value.data[cc];
                for (int i = 0; i < hw; ++i) {
                    const int64_t idx = base + static_cast<int64_t>(c) * hw + i;
                    const float xh = static_cast<float>(xv.data[idx] - mean) * istd;
                    xhat.data[idx] = xh;
                    out.data[idx] = xh * ga + be;
                }
            }
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, ch, hw, groups, cpg,
                        gsize](Node& self) {
                           Node& xn = *self.parents[0];
                           Node& gn = *self.parents[1];
                           Node& bn = *self.parents[2];
                           const Tensor& dy = self.grad;
                           if (gn.requires_grad || bn.requires_grad) {
                               Tensor& dg = gn.ensure_grad();
                               Tensor& db = bn.ensure_grad();
                               for (int n = 0; n < batch; ++n) {
                                   for (int c = 0; c < ch; ++c) {
                                       const int64_t base = (static_cast<int64_t>(n) * ch + c) * hw;
                                       float sg = 0.0f, sb = 0.0f;
                                       for (int i = 0; i < hw; ++i) {
                                           sg += dy.data[base + i] * xhat.data[base + i];
                                           sb += dy.data[base + i];
                                       }
                                       dg.data[c] += sg;
                                       db.data[c] += sb;
                                   }
                               }
                           }
                           if (!xn.requires_grad) return;
                           Tensor& dx = xn.ensure_grad();
                           for (int n = 0; n < batch; ++n) {
                               for (int gi = 0; gi < groups; ++gi) {
                                   const int64_t base = (static_cast<int64_t>(n) * ch + gi * cpg) * hw;
                                   double m1 = 0.0, m2 = 0.0;
                                   for (int c = 0; c < cpg; ++c) {
                                       const float ga = gn.value.data[gi * cpg + c];
                                       for (int i = 0; i < hw; ++i) {
                                           const int64_t idx = base + static_cast<int64_t>(c) * hw + i;
                                           const double dxh = dy.data[idx] * ga;
                                           m1 += dxh;
                                           m2 += dxh * xhat.data[idx];
                                       }
                                   }
                                   m1 /= static_cast<double>(gsize);
                                   m2 /= static_cast<double>(gsize);
                                   const float istd = inv_std[static_cast<size_t>(n * groups + gi)];
                                   for (int c = 0; c < cpg; ++c) {
                                       const float ga = gn.value.data[gi * cpg + c];
                                       for (int i = 0; i < hw; ++i) {
                                           const int64_t idx = base + static_cast<int64_t>(c) * hw + i;
                                           const double dxh = dy.data[idx] * ga;
                                           dx.data[idx] += static_cast<float>(istd * (dxh - m1 - xhat.data[idx] * m2));
                                       }
                                   }
                               }
                           }
                       });
}

namespace {

// Every element goes through the same fixed-width vector path, padding the
// tail, so a value's result does not depend on its position in the buffer.
void silu_values(const float* x, float* y, int64_t n) {
    using Chunk = Eigen::Array<float, 16, 1>;
    int64_t i = 0;
    for (; i + 16 <= n; i += 16) {
        const Chunk c = Eigen::Map<const Chunk>(x + i);
        Eigen::Map<Chunk>(y + i) = c / (1.0f + (-c).exp());
    }
    if (i < n) {
        Chunk c = Chunk::Zero();
        std::copy(x + i, x + n, c.data());
        const Chunk r = c / (1.0f + (-c).exp());
        std::copy_n(r.data(), n - i, y + i);
    }
}

}  // namespace

Var silu(const Var& x) {
    Tensor out(x->value.shape);
    const auto n = static_cast<Eigen::Index>(out.data.size());
    silu_values(x->value.ptr(), out.ptr(), n);
    return make_result(std::move(out), {x}, [n](Node& self) {
        Node& xn = *self.parents[0];
        Eigen::Map<const Eigen::ArrayXf> xv(xn.value.ptr(), n);
        Eigen::Map<const Eigen::ArrayXf> gy(self.grad.ptr(), n);
        const Eigen::ArrayXf s = 1.0f / (1.0f + (-xv).exp());
        Eigen::Map<Eigen::ArrayXf>(xn.ensure_grad().ptr(), n) += gy * s * (1.0f + xv * (1.0f - s));
    });
}

Var add(const Var& a, const Var& b) {
    require(a->value.shape == b->value.shape, "add: shape mismatch");
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            Tensor& g = p->ensure_grad();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += self.grad.data[i];
        }
    });
}

Var add_channel(const Var& x, const Var& e) {
    const Tensor& xv = x->value;
    require(xv.rank() == 4 && e->value.rank() == 2 && e->value.dim(0) == xv.dim(0) && e->value.dim(1) == xv.dim(1),
            "add_channel: expected x [B,C,H,W] and e [B,C]");
    const int bc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    for (int i = 0; i < bc; ++i) {
        const float add = e->value.data[i];
        for (int j = 0; j < hw; ++j) out.data[static_cast<int64_t>(i) * hw + j] += add;
    }
    return make_result(std::move(out), {x, e}, [bc, hw](Node& self) {
        Node& xn = *self.parents[0];
        Node& en = *self.parents[1];
        if (xn.requires_grad) {
            Tensor& g = xn.ensure_grad();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += self.grad.data[i];
        }
        if (en.requires_grad) {
            Tensor& g = en.ensure_grad();
            for (int i = 0; i < bc; ++i) {
                float s = 0.0f;
                for (int j = 0; j < hw; ++j) s += self.grad.data[static_cast<int64_t>(i) * hw + j];
                g.data[i] += s;
            }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x->value;
    require(w->value.rank() == 2 && xv.rank() >= 1 && xv.dim(-1) == w->value.dim(0), "linear: input width mismatch");
    const int in = w->value.dim(0), outw = w->value.dim(1);
    const int rows = static_cast<int>(xv.numel() / in);
    Shape s = xv.shape;
    s.back() = outw;
    Tensor out(s);
    // One product per leading item keeps each item's result independent of the batch size.
    const int items = xv.rank() >= 2 ? xv.dim(0) : 1;
    const int per_item = items > 0 ? rows / items : 0;
    CMapR wm(w->value.ptr(), in, outw);
    for (int n = 0; n < items; ++n) {
        MapR om(out.ptr() + static_cast<int64_t>(n) * per_item * outw, per_item, outw);
        om.noalias() = CMapR(xv.ptr() + static_cast<int64_t>(n) * per_item * in, per_item, in) * wm;
        if (b) om.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b->value.ptr(), outw);
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make_result(std::move(out), std::move(parents), [rows, in, outw](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        CMapR gy(self.grad.ptr(), rows, outw);
        if (xn.requires_grad) {
            MapR(xn.ensure_grad().ptr(), rows, in).noalias() += gy * CMapR(wn.value.ptr(), in, outw).transpose();
        }
        if (wn.requires_grad) {
            MapR(wn.ensure_grad().ptr(), in, outw).noalias() += CMapR(xn.value.ptr(), rows, in).transpose() * gy;
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Eigen::Map<Eigen::RowVectorXf>(self.parents[2]->ensure_grad().ptr(), outw) += gy.colwise().sum();
        }
    });
}

Var upsample2x(const Var& x) {
    const Tensor& xv = x->value;
    require(xv.rank() == 4, "upsample2x expects [B,C,H,W]");
    const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
    for (int p = 0; p < planes; ++p) {
        const float* src = xv.ptr() + static_cast<int64_t>(p) * h * w;
        float* dst = out.ptr() + static_cast<int64_t>(p) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
        }
    }
    return make_result(std::move(out), {x}, [planes, h, w](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int p = 0; p < planes; ++p) {
            const float* src = self.grad.ptr() + static_cast<int64_t>(p) * 4 * h * w;
            float* dst = g.ptr() + static_cast<int64_t>(p) * h * w;
            for (int y = 0; y < 2 * h; ++y) {
                for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    require(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) &&
                av.dim(3) == bv.dim(3),
            "concat_channels: incompatible shapes");
    const int batch = av.dim(0);
    const int64_t asz = av.numel() / batch, bsz = bv.numel() / batch;
    Tensor out({batch, av.dim(1) + bv.dim(1), av.dim(2), av.dim(3)});
    for (int n = 0; n < batch; ++n) {
        std::copy_n(av.ptr() + n * asz, asz, out.ptr() + n * (asz + bsz));
        std::copy_n(bv.ptr() + n * bsz, bsz, out.ptr() + n * (asz + bsz) + asz);
    }
    return make_result(std::move(out), {a, b}, [batch, asz, bsz](Node& self) {
        for (int which = 0; which < 2; ++which) {
            Node& p = *self.parents[static_cast<size_t>(which)];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            const int64_t sz = which == 0 ? asz : bsz;
            const int64_t off = which == 0 ? 0 : asz;
            for (int n = 0; n < batch; ++n) {
                const float* src = self.grad.ptr() + n * (asz + bsz) + off;
                float* dst = g.ptr() + n * sz;
                for (int64_t i = 0; i < sz; ++i) dst[i] += src[i];
            }
        }
    });
}

namespace {

// [B, A, C] <-> [B, C, A] transpose of the two trailing axes.
void transpose_tail(const float* src, float* dst, int batch, int a, int c, bool accumulate) {
    for (int n = 0; n < batch; ++n) {
        CMapR s(src + static_cast<int64_t>(n) * a * c, a, c);
        MapR d(dst + static_cast<int64_t>(n) * a * c, c, a);
        if (accumulate) {
            d += s.transpose();
        } else {
            d = s.transpose();
        }
    }
}

}  // namespace

Var to_tokens(const Var& x) {
    const Tensor& xv = x->value;
    require(xv.rank() == 4, "to_tokens expects [B,C,H,W]");
    const int batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out({batch, hw, ch});
    transpose_tail(xv.ptr(), out.ptr(), batch, ch, hw, false);
    return make_result(std::move(out), {x}, [batch, ch, hw](Node& self) {
        transpose_tail(self.grad.ptr(), self.parents[0]->ensure_grad().ptr(), batch, hw, ch, true);
    });
}

Var from_tokens(const Var& x, int height, int width) {
    const Tensor& xv = x->value;
    require(xv.rank() == 3 && xv.dim(1) == height * width, "from_tokens: token count mismatch");
    const int batch = xv.dim(0), ch = xv.dim(2), hw = height * width;
    Tensor out({batch, ch, height, width});
    transpose_tail(xv.ptr(), out.ptr(), batch, hw, ch, false);
    return make_result(std::move(out), {x}, [batch, ch, hw](Node& self) {
        transpose_tail(self.grad.ptr(), self.parents[0]->ensure_grad().ptr(), batch, ch, hw, true);
    });
}

Var embedding(const Var& table, const std::vector<std::vector<int>>& ids) {
    const Tensor& tv = table->value;
    require(tv.rank() == 2 && !ids.empty(), "embedding: bad table or empty ids");
    const int vocab = tv.dim(0), width = tv.dim(1);
    const int len = static_cast<int>(ids[0].size());
    Tensor out({static_cast<int>(ids.size()), len, width});
    for (size_t n = 0; n < ids.size(); ++n) {
        require(static_cast<int>(ids[n].size()) == len, "embedding: ragged id rows");
        for (int i = 0; i < len; ++i) {
            const int id = ids[n][static_cast<size_t>(i)];
            require(id >= 0 && id < vocab, "embedding: id out of range");
            std::copy_n(tv.ptr() + static_cast<int64_t>(id) * width, width,
                        out.ptr() + (static_cast<int64_t>(n) * len + i) * width);
        }
    }
    return make_result(std::move(out), {table}, [ids, len, width](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (size_t n = 0; n < ids.size(); ++n) {
            for (int i = 0; i < len; ++i) {
                const float* src = self.grad.ptr() + (static_cast<int64_t>(n) * len + i) * width;
                float* dst = g.ptr() + static_cast<int64_t>(ids[n][static_cast<size_t>(i)]) * width;
                for (int j = 0; j < width; ++j) dst[j] += src[j];
            }
        }
    });
}

Var add_positional(const Var& x, const Var& pos) {
    const Tensor& xv = x->value;
    require(xv.rank() == 3 && pos->value.rank() == 2 && pos->value.dim(0) >= xv.dim(1) &&
                pos->value.dim(1) == xv.dim(2),
            "add_positional: shape mismatch");
    const int batch = xv.dim(0);
    const int64_t block = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
    Tensor out = xv;
    for (int n = 0; n < batch; ++n) {
        for (int64_t i = 0; i < block; ++i) out.data[n * block + i] += pos->value.data[i];
    }
    return make_result(std::move(out), {x, pos}, [batch, block](Node& self) {
        Node& xn = *self.parents[0];
        Node& pn = *self.parents[1];
        if (xn.requires_grad) {
            Tensor& g = xn.ensure_grad();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += self.grad.data[i];
        }
        if (pn.requires_grad) {
            Tensor& g = pn.ensure_grad();
            for (int n = 0; n < batch; ++n) {
                for (int64_t i = 0; i < block; ++i) g.data[i] += self.grad.data[n * block + i];
            }
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    const Tensor& qv = q->value;
    const Tensor& kv = k->value;
    const Tensor& vv = v->value;
    require(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3 && qv.dim(0) == kv.dim(0) && kv.shape == vv.shape &&
                qv.dim(2) == kv.dim(2) && qv.dim(2) % heads == 0,
            "attention: operand shapes disagree");
    const int batch = qv.dim(0), nq = qv.dim(1), nk = kv.dim(1), width = qv.dim(2), d = width / heads;
    Tensor out(qv.shape);
    const bool keep = g_grad_enabled && (q->requires_grad || k->requires_grad || v->requires_grad);
    std::vector<Tensor> probs(keep ? static_cast<size_t>(batch) : 0);
    for (int n = 0; n < batch; ++n) {
        const Tensor qh = split_heads(qv.ptr() + static_cast<int64_t>(n) * nq * width, nq, heads, d);
        const Tensor kh = split_heads(kv.ptr() + static_cast<int64_t>(n) * nk * width, nk, heads, d);
        const Tensor vh = split_heads(vv.ptr() + static_cast<int64_t>(n) * nk * width, nk, heads, d);
        const Tensor oh = scaled_dot_attention(qh, kh, vh, keep ? &probs[static_cast<size_t>(n)] : nullptr);
        merge_heads(oh, out.ptr() + static_cast<int64_t>(n) * nq * width);
    }
    return make_result(std::move(out), {q, k, v}, [probs = std::move(probs), batch, nq, nk, width, heads, d](Node& self) {
        Node& qn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& vn = *self.parents[2];
        const float scale = 1.0f / std::sqrt(static_cast<float>(d));
        MatR dp(nq, nk), ds(nq, nk);
        for (int n = 0; n < batch; ++n) {
            const Tensor qh = split_heads(qn.value.ptr() + static_cast<int64_t>(n) * nq * width, nq, heads, d);
            const Tensor kh = split_heads(kn.value.ptr() + static_cast<int64_t>(n) * nk * width, nk, heads, d);
            const Tensor vh = split_heads(vn.value.ptr() + static_cast<int64_t>(n) * nk * width, nk, heads, d);
            const Tensor go = split_heads(self.grad.ptr() + static_cast<int64_t>(n) * nq * width, nq, heads, d);
            Tensor gq({heads, nq, d}), gk({heads, nk, d}), gv({heads, nk, d});
            for (int h = 0; h < heads; ++h) {
                CMapR p(probs[static_cast<size_t>(n)].ptr() + static_cast<int64_t>(h) * nq * nk, nq, nk);
                CMapR gom(go.ptr() + static_cast<int64_t>(h) * nq * d, nq, d);
                CMapR qm(qh.ptr() + static_cast<int64_t>(h) * nq * d, nq, d);
                CMapR km(kh.ptr() + static_cast<int64_t>(h) * nk * d, nk, d);
                CMapR vm(vh.ptr() + static_cast<int64_t>(h) * nk * d, nk, d);
                MapR(gv.ptr() + static_cast<int64_t>(h) * nk * d, nk, d).noalias() = p.transpose() * gom;
                dp.noalias() = gom * vm.transpose();
                const Eigen::VectorXf rowdot = (dp.array() * p.array()).rowwise().sum();
                ds = p.array() * (dp.colwise() - rowdot).array();
                MapR(gq.ptr() + static_cast<int64_t>(h) * nq * d, nq, d).noalias() = (ds * km) * scale;
                MapR(gk.ptr() + static_cast<int64_t>(h) * nk * d, nk, d).noalias() = (ds.transpose() * qm) * scale;
            }
            auto accumulate = [&](Node& node, const Tensor& hm, int tokens) {
                if (!node.requires_grad) return;
                std::vector<float> rows(static_cast<size_t>(tokens) * width);
                merge_heads(hm, rows.data());
                float* dst = node.ensure_grad().ptr() + static_cast<int64_t>(n) * tokens * width;
                for (size_t i = 0; i < rows.size(); ++i) dst[i] += rows[i];
            };
            accumulate(qn, gq, nq);
            accumulate(kn, gk, nk);
            accumulate(vn, gv, nk);
        }
    });
}

Var mse(const Var& pred, const Tensor& target) {
    require(pred->value.shape == target.shape, "mse: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < target.data.size(); ++i) {
        const double dlt = pred->value.data[i] - target.data[i];
        acc += dlt * dlt;
    }
    const double n = static_cast<double>(target.data.size());
    Tensor out({1}, static_cast<float>(acc / n));
    return make_result(std::move(out), {pred}, [target, n](Node& self) {
        Node& pn = *self.parents[0];
        Tensor& g = pn.ensure_grad();
        const float coeff = static_cast<float>(2.0 / n) * self.grad.data[0];
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += coeff * (pn.value.data[i] - target.data[i]);
    });
}

}  // namespace ops

}  // namespace mcactrl

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace vinsert::ag {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

// Eager tape autodiff. Each op computes its value immediately and records a
// closure that routes the node's gradient to its parents. Nodes are created
// in topological order, so backward() is a reverse sweep.

struct Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
};

struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    int param_id = -1;
    std::function<void(Tape&, Node&)> backward;
};

struct Tape {
    std::vector<Node> nodes;
    std::vector<Tensor> param_grads;  // keyed by param id, filled by backward()
    bool want_input_grads = false;    // leaves with requires_grad keep their grads

    Var make(Tensor v) {
        nodes.push_back(Node{std::move(v), Tensor{}, -1, nullptr});
        return Var{this, (int)nodes.size() - 1};
    }

    Var constant(Tensor v) { return make(std::move(v)); }

    Var leaf(Tensor v) {  // gradient-tracked input
        Var x = make(std::move(v));
        want_input_grads = true;
        return x;
    }

    Var param(int pid, const Tensor& value) {
        Var x = make(value);
        nodes[x.id].param_id = pid;
        return x;
    }

    const Tensor& val(const Var& v) const { return nodes[v.id].val; }

    Tensor& grad_buf(int id) {
        Node& n = nodes[id];
        if (n.grad.empty()) n.grad = Tensor(n.val.shape);
        return n.grad;
    }

    const Tensor& grad_of(const Var& v) const { return nodes[v.id].grad; }

    void backward(const Var& root) {
        VINSERT_FATAL_CHECK(root.tape == this && nodes[root.id].val.numel() == 1,
                            "backward root must be a scalar on this tape");
        grad_buf(root.id)[0] = 1.0f;
        for (int i = root.id; i >= 0; i--) {
            Node& n = nodes[i];
            if (n.grad.empty()) continue;
            if (n.backward) n.backward(*this, n);
            if (n.param_id >= 0) {
                if ((int)param_grads.size() <= n.param_id) param_grads.resize(n.param_id + 1);
                Tensor& pg = param_grads[n.param_id];
                if (pg.empty()) pg = Tensor(n.val.shape);
                for (size_t k = 0; k < pg.numel(); k++) pg[k] += n.grad[k];
            }
        }
    }
};

inline const Tensor& Var::val() const { return tape->val(*this); }

namespace detail {
inline void accum(Tape& t, int id, const float* g, size_t n) {
    Tensor& buf = t.grad_buf(id);
    for (size_t i = 0; i < n; i++) buf[i] += g[i];
}
}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    VINSERT_FATAL_CHECK(a.val().same_shape(b.val()), "add shape mismatch %s vs %s",
                        a.val().shape_str().c_str(), b.val().shape_str().c_str());
    Tensor out = a.val();
    for (size_t i = 0; i < out.numel(); i++) out[i] += b.val()[i];
    Var y = t.make(std::move(out));
    int ia = a.id, ib = b.id;
    t.nodes[y.id].backward = [ia, ib](Tape& tp, Node& n) {
        detail::accum(tp, ia, n.grad.ptr(), n.grad.numel());
        detail::accum(tp, ib, n.grad.ptr(), n.grad.numel());
    };
    return y;
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (size_t i = 0; i < out.numel(); i++) out[i] -= b.val()[i];
    Var y = t.make(std::move(out));
    int ia = a.id, ib = b.id;
    t.nodes[y.id].backward = [ia, ib](Tape& tp, Node& n) {
        detail::accum(tp, ia, n.grad.ptr(), n.grad.numel());
        Tensor& gb = tp.grad_buf(ib);
        for (size_t i = 0; i < n.grad.numel(); i++) gb[i] -= n.grad[i];
    };
    return y;
}

inline Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (size_t i = 0; i < out.numel(); i++) out[i] *= b.val()[i];
    Var y = t.make(std::move(out));
    int ia = a.id, ib = b.id;
    t.nodes[y.id].backward = [ia, ib](Tape& tp, Node& n) {
        const Tensor& av = tp.nodes[ia].val;
        const Tensor& bv = tp.nodes[ib].val;
        Tensor& ga = tp.grad_buf(ia);
        Tensor& gb = tp.grad_buf(ib);
        for (size_t i = 0; i < n.grad.numel(); i++) {
            ga[i] += n.grad[i] * bv[i];
            gb[i] += n.grad[i] * av[i];
        }
    };
    return y;
}

inline Var scale(Var a, float s) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (auto& v : out.data) v *= s;
    Var y = t.make(std::move(out));
    int ia = a.id;
    t.nodes[y.id].backward = [ia, s](Tape& tp, Node& n) {
        Tensor& ga = tp.grad_buf(ia);
        for (size_t i = 0; i < n.grad.numel(); i++) ga[i] += s * n.grad[i];
    };
    return y;
}

inline Var silu(Var a) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (auto& v : out.data) v = v / (1.0f + std::exp(-v));
    Var y = t.make(std::move(out));
    int ia = a.id;
    t.nodes[y.id].backward = [ia](Tape& tp, Node& n) {
        const Tensor& x = tp.nodes[ia].val;
        Tensor& ga = tp.grad_buf(ia);
        for (size_t i = 0; i < n.grad.numel(); i++) {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            ga[i] += n.grad[i] * s * (1.0f + x[i] * (1.0f - s));
        }
    };
    return y;
}

inline Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (auto& v : out.data) v = 1.0f / (1.0f + std::exp(-v));
    Var y = t.make(std::move(out));
    int ia = a.id, iy;
    iy = y.id;
    t.nodes[y.id].backward = [ia, iy](Tape& tp, Node& n) {
        const Tensor& s = tp.nodes[iy].val;
        Tensor& ga = tp.grad_buf(ia);
        for (size_t i = 0; i < n.grad.numel(); i++) ga[i] += n.grad[i] * s[i] * (1.0f - s[i]);
    };
    return y;
}

// x [*, C, H, W] + bias [C], broadcast over leading/spatial dims
inline Var add_bias_ch(Var x, Var b) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int nd = xv.ndim();
    int C = xv.shape[nd - 3], HW = xv.shape[nd - 2] * xv.shape[nd - 1];
    int N = (int)(xv.numel() / ((size_t)C * HW));
    Tensor out = xv;
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            float bv = b.val()[c];
            float* p = out.ptr() + ((size_t)n * C + c) * HW;
            for (int i = 0; i < HW; i++) p[i] += bv;
        }
    Var y = t.make(std::move(out));
    int ix = x.id, ib = b.id;
    t.nodes[y.id].backward = [ix, ib, N, C, HW](Tape& tp, Node& n) {
        detail::accum(tp, ix, n.grad.ptr(), n.grad.numel());
        Tensor& gb = tp.grad_buf(ib);
        for (int s = 0; s < N; s++)
            for (int c = 0; c < C; c++) {
                const float* p = n.grad.ptr() + ((size_t)s * C + c) * HW;
                double acc = 0;
                for (int i = 0; i < HW; i++) acc += p[i];
                gb[c] += (float)acc;
            }
    };
    return y;
}

// ------------------------------------------------------------------- linear

// x [T, in], w [out, in], b [out] -> [T, out]
inline Var linear(Var x, Var w, Var b) {
    Tape& t = *x.tape;
    int T = x.val().shape[0], in = x.val().shape[1], out_dim = w.val().shape[0];
    VINSERT_FATAL_CHECK(w.val().shape[1] == in, "linear: in=%d vs w %s", in, w.val().shape_str().c_str());
    Tensor out({T, out_dim});
    CMapM xm(x.val().ptr(), T, in), wm(w.val().ptr(), out_dim, in);
    MapM om(out.ptr(), T, out_dim);
    om.noalias() = xm * wm.transpose();
    if (b.valid())
        for (int r = 0; r < T; r++)
            for (int c = 0; c < out_dim; c++) out[(size_t)r * out_dim + c] += b.val()[c];
    Var y = t.make(std::move(out));
    int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
    t.nodes[y.id].backward = [ix, iw, ib, T, in, out_dim](Tape& tp, Node& n) {
        CMapM gy(n.grad.ptr(), T, out_dim);
        CMapM xm(tp.nodes[ix].val.ptr(), T, in), wm(tp.nodes[iw].val.ptr(), out_dim, in);
        MapM gx(tp.grad_buf(ix).ptr(), T, in);
        gx.noalias() += gy * wm;
        MapM gw(tp.grad_buf(iw).ptr(), out_dim, in);
        gw.noalias() += gy.transpose() * xm;
        if (ib >= 0) {
            Tensor& gb = tp.grad_buf(ib);
            for (int r = 0; r < T; r++)
                for (int c = 0; c < out_dim; c++) gb[c] += n.grad[(size_t)r * out_dim + c];
        }
    };
    return y;
}

inline Var matmul(Var a, Var b) {  // [m,k] x [k,n]
    Tape& t = *a.tape;
    int m = a.val().shape[0], k = a.val().shape[1], n2 = b.val().shape[1];
    Tensor out({m, n2});
    CMapM am(a.val().ptr(), m, k), bm(b.val().ptr(), k, n2);
    MapM om(out.ptr(), m, n2);
    om.noalias() = am * bm;
    Var y = t.make(std::move(out));
    int ia = a.id, ib = b.id;
    t.nodes[y.id].backward = [ia, ib, m, k, n2](Tape& tp, Node& n) {
        CMapM gy(n.grad.ptr(), m, n2);
        CMapM am(tp.nodes[ia].val.ptr(), m, k), bm(tp.nodes[ib].val.ptr(), k, n2);
        MapM ga(tp.grad_buf(ia).ptr(), m, k), gb(tp.grad_buf(ib).ptr(), k, n2);
        ga.noalias() += gy * bm.transpose();
        gb.noalias() += am.transpose() * gy;
    };
    return y;
}

// ------------------------------------------------------------------- conv2d

namespace detail {

inline void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, float* col) {
    // col: [C*kh*kw, Ho*Wo]
    for (int c = 0; c < C; c++)
        for (int i = 0; i < kh; i++)
            for (int j = 0; j < kw; j++) {
                float* row = col + (((size_t)c * kh + i) * kw + j) * (size_t)(Ho * Wo);
                for (int yo = 0; yo < Ho; yo++) {
                    int yi = yo * stride - pad + i;
                    if (yi < 0 || yi >= H) {
                        std::fill(row + yo * Wo, row + (yo + 1) * Wo, 0.0f);
                        continue;
                    }
                    const float* src = x + ((size_t)c * H + yi) * W;
                    for (int xo = 0; xo < Wo; xo++) {
                        int xi = xo * stride - pad + j;
                        row[yo * Wo + xo] = (xi < 0 || xi >= W) ? 0.0f : src[xi];
                    }
                }
            }
}

inline void col2im_add(const float* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int Ho, int Wo, float* dx) {
    for (int c = 0; c < C; c++)
        for (int i = 0; i < kh; i++)
            for (int j = 0; j < kw; j++) {
                const float* row = col + (((size_t)c * kh + i) * kw + j) * (size_t)(Ho * Wo);
                for (int yo = 0; yo < Ho; yo++) {
                    int yi = yo * stride - pad + i;
                    if (yi < 0 || yi >= H) continue;
                    float* dst = dx + ((size_t)c * H + yi) * W;
                    for (int xo = 0; xo < Wo; xo++) {
                        int xi = xo * stride - pad + j;
                        if (xi >= 0 && xi < W) dst[xi] += row[yo * Wo + xo];
                    }
                }
            }
}

}  // namespace detail

// x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] (optional) -> [N,Cout,Ho,Wo]
inline Var conv2d(Var x, Var w, Var b, int stride = 1, int pad = -1) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    int Cout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
    VINSERT_FATAL_CHECK(wv.shape[1] == C, "conv2d: x has %d channels, w expects %d", C, wv.shape[1]);
    if (pad < 0) pad = kh / 2;
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor out({N, Cout, Ho, Wo});
    int K = C * kh * kw;
    std::vector<float> col((size_t)K * Ho * Wo);
    CMapM wm(wv.ptr(), Cout, K);
    for (int n = 0; n < N; n++) {
        detail::im2col(xv.ptr() + (size_t)n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        CMapM cm(col.data(), K, Ho * Wo);
        MapM om(out.ptr() + (size_t)n * Cout * Ho * Wo, Cout, Ho * Wo);
        om.noalias() = wm * cm;
    }
    if (b.valid())
        for (int n = 0; n < N; n++)
            for (int co = 0; co < Cout; co++) {
                float bv = b.val()[co];
                float* p = out.ptr() + ((size_t)n * Cout + co) * Ho * Wo;
                for (int i = 0; i < Ho * Wo; i++) p[i] += bv;
            }
    Var y = t.make(std::move(out));
    int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
    t.nodes[y.id].backward = [=](Tape& tp, Node& nd) {
        const Tensor& xv2 = tp.nodes[ix].val;
        const Tensor& wv2 = tp.nodes[iw].val;
        Tensor& gx = tp.grad_buf(ix);
        Tensor& gw = tp.grad_buf(iw);
        CMapM wm2(wv2.ptr(), Cout, K);
        MapM gwm(gw.ptr(), Cout, K);
        std::vector<float> col2((size_t)K * Ho * Wo), dcol((size_t)K * Ho * Wo);
        for (int n = 0; n < N; n++) {
            CMapM gym(nd.grad.ptr() + (size_t)n * Cout * Ho * Wo, Cout, Ho * Wo);
            detail::im2col(xv2.ptr() + (size_t)n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col2.data());
            CMapM cm(col2.data(), K, Ho * Wo);
            gwm.noalias() += gym * cm.transpose();
            MapM dcm(dcol.data(), K, Ho * Wo);
            dcm.noalias() = wm2.transpose() * gym;
            detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                               gx.ptr() + (size_t)n * C * H * W);
        }
        if (ib >= 0) {
            Tensor& gb = tp.grad_buf(ib);
            for (int n = 0; n < N; n++)
                for (int co = 0; co < Cout; co++) {
                    const float* p = nd.grad.ptr() + ((size_t)n * Cout + co) * Ho * Wo;
                    double acc = 0;
                    for (int i = 0; i < Ho * Wo; i++) acc += p[i];
                    gb[co] += (float)acc;
                }
        }
    };
    return y;
}

inline Var upsample2x(Var x) {  // nearest, [N,C,H,W] -> [N,C,2H,2W]
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    Tensor out({N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++)
            for (int y = 0; y < H; y++)
                for (int xx = 0; xx < W; xx++) {
                    float v = xv.at(n, c, y, xx);
                    out.at(n, c, 2 * y, 2 * xx) = v;
                    out.at(n, c, 2 * y, 2 * xx + 1) = v;
                    out.at(n, c, 2 * y + 1, 2 * xx) = v;
                    out.at(n, c, 2 * y + 1, 2 * xx + 1) = v;
                }
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, N, C, H, W](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int n = 0; n < N; n++)
            for (int c = 0; c < C; c++)
                for (int y = 0; y < H; y++)
                    for (int xx = 0; xx < W; xx++)
                        gx.at(n, c, y, xx) += nd.grad.at(n, c, 2 * y, 2 * xx) +
                                              nd.grad.at(n, c, 2 * y, 2 * xx + 1) +
                                              nd.grad.at(n, c, 2 * y + 1, 2 * xx) +
                                              nd.grad.at(n, c, 2 * y + 1, 2 * xx + 1);
    };
    return y;
}

// ------------------------------------------------------------- normalization

// x [*, C, H, W] normalized per leading index over each channel group
inline Var group_norm(Var x, Var gamma, Var beta, int groups, float eps = 1e-5f) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int nd = xv.ndim();
    int C = xv.shape[nd - 3], HW = xv.shape[nd - 2] * xv.shape[nd - 1];
    int N = (int)(xv.numel() / ((size_t)C * HW));
    VINSERT_FATAL_CHECK(C % groups == 0, "group_norm: C=%d not divisible by %d groups", C, groups);
    int cg = C / groups;
    size_t m = (size_t)cg * HW;
    Tensor out(xv.shape);
    Tensor xhat(xv.shape);        // cached for backward
    Tensor inv_sigma({N, groups});
    for (int n = 0; n < N; n++)
        for (int g = 0; g < groups; g++) {
            const float* xp = xv.ptr() + ((size_t)n * C + (size_t)g * cg) * HW;
            double mean = 0;
            for (size_t i = 0; i < m; i++) mean += xp[i];
            mean /= (double)m;
            double var = 0;
            for (size_t i = 0; i < m; i++) {
                double d = xp[i] - mean;
                var += d * d;
            }
            var /= (double)m;
            float is = (float)(1.0 / std::sqrt(var + eps));
            inv_sigma[(size_t)n * groups + g] = is;
            float* xh = xhat.ptr() + ((size_t)n * C + (size_t)g * cg) * HW;
            float* op = out.ptr() + ((size_t)n * C + (size_t)g * cg) * HW;
            for (int c = 0; c < cg; c++) {
                float ga = gamma.val()[g * cg + c], be = beta.val()[g * cg + c];
                for (int i = 0; i < HW; i++) {
                    float v = (float)((xp[(size_t)c * HW + i] - mean) * is);
                    xh[(size_t)c * HW + i] = v;
                    op[(size_t)c * HW + i] = v * ga + be;
                }
            }
        }
    Var y = t.make(std::move(out));
    int ix = x.id, ig = gamma.id, ibt = beta.id;
    t.nodes[y.id].backward = [ix, ig, ibt, N, C, HW, groups, cg, m, xhat = std::move(xhat),
                              inv_sigma = std::move(inv_sigma)](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        Tensor& gg = tp.grad_buf(ig);
        Tensor& gb = tp.grad_buf(ibt);
        const Tensor& gamma_v = tp.nodes[ig].val;
        for (int n = 0; n < N; n++)
            for (int g = 0; g < groups; g++) {
                size_t base = ((size_t)n * C + (size_t)g * cg) * HW;
                const float* dy = nd.grad.ptr() + base;
                const float* xh = xhat.ptr() + base;
                double sum_h = 0, sum_hx = 0;
                for (int c = 0; c < cg; c++) {
                    float ga = gamma_v[g * cg + c];
                    for (int i = 0; i < HW; i++) {
                        float d = dy[(size_t)c * HW + i];
                        float xv2 = xh[(size_t)c * HW + i];
                        sum_h += (double)d * ga;
                        sum_hx += (double)d * ga * xv2;
                        gg[g * cg + c] += d * xv2;
                        gb[g * cg + c] += d;
                    }
                }
                float mh = (float)(sum_h / (double)m);
                float mhx = (float)(sum_hx / (double)m);
                float is = inv_sigma[(size_t)n * groups + g];
                float* gxp = gx.ptr() + base;
                for (int c = 0; c < cg; c++) {
                    float ga = gamma_v[g * cg + c];
                    for (int i = 0; i < HW; i++) {
                        float h = dy[(size_t)c * HW + i] * ga;
                        gxp[(size_t)c * HW + i] += is * (h - mh - xh[(size_t)c * HW + i] * mhx);
                    }
                }
            }
    };
    return y;
}

// x [T, D], per-row normalization
inline Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int T = xv.shape[0], D = xv.shape[1];
    Tensor out({T, D}), xhat({T, D}), inv_sigma({T});
    for (int r = 0; r < T; r++) {
        const float* xp = xv.ptr() + (size_t)r * D;
        double mean = 0;
        for (int i = 0; i < D; i++) mean += xp[i];
        mean /= D;
        double var = 0;
        for (int i = 0; i < D; i++) {
            double d = xp[i] - mean;
            var += d * d;
        }
        var /= D;
        float is = (float)(1.0 / std::sqrt(var + eps));
        inv_sigma[r] = is;
        for (int i = 0; i < D; i++) {
            float v = (float)((xp[i] - mean) * is);
            xhat[(size_t)r * D + i] = v;
            out[(size_t)r * D + i] = v * gamma.val()[i] + beta.val()[i];
        }
    }
    Var y = t.make(std::move(out));
    int ix = x.id, ig = gamma.id, ibt = beta.id;
    t.nodes[y.id].backward = [ix, ig, ibt, T, D, xhat = std::move(xhat),
                              inv_sigma = std::move(inv_sigma)](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        Tensor& gg = tp.grad_buf(ig);
        Tensor& gb = tp.grad_buf(ibt);
        const Tensor& gamma_v = tp.nodes[ig].val;
        for (int r = 0; r < T; r++) {
            const float* dy = nd.grad.ptr() + (size_t)r * D;
            const float* xh = xhat.ptr() + (size_t)r * D;
            double sum_h = 0, sum_hx = 0;
            for (int i = 0; i < D; i++) {
                float h = dy[i] * gamma_v[i];
                sum_h += h;
                sum_hx += (double)h * xh[i];
                gg[i] += dy[i] * xh[i];
                gb[i] += dy[i];
            }
            float mh = (float)(sum_h / D), mhx = (float)(sum_hx / D);
            float* gxp = gx.ptr() + (size_t)r * D;
            for (int i = 0; i < D; i++) {
                float h = dy[i] * gamma_v[i];
                gxp[i] += inv_sigma[r] * (h - mh - xh[i] * mhx);
            }
        }
    };
    return y;
}

// ---------------------------------------------------------------- attention

// Multi-head attention over n_groups independent groups. q: [G*Tq, D];
// k,v: [G*Tk, D], or [Tk, D] shared across groups when shared_kv is set.
// Softmax matrices are cached for backward.
inline Var attention_g(Var q, Var k, Var v, int heads, int n_groups, bool shared_kv) {
    Tape& t = *q.tape;
    const Tensor& qv = q.val();
    const Tensor& kv = k.val();
    int D = qv.shape[1];
    int Tq = qv.shape[0] / n_groups;
    int Tk = shared_kv ? kv.shape[0] : kv.shape[0] / n_groups;
    int dh = D / heads;
    float sc = 1.0f / std::sqrt((float)dh);
    VINSERT_FATAL_CHECK(D % heads == 0 && qv.shape[0] % n_groups == 0, "attention dims");
    Tensor out({qv.shape[0], D});
    // cached softmax per (group, head)
    auto probs = std::make_shared<std::vector<RowMat>>();
    probs->reserve((size_t)n_groups * heads);
    CMapM qm(qv.ptr(), qv.shape[0], D), km(kv.ptr(), kv.shape[0], D), vm(v.val().ptr(), v.val().shape[0], D);
    MapM om(out.ptr(), qv.shape[0], D);
    for (int g = 0; g < n_groups; g++) {
        auto qb = qm.block(g * Tq, 0, Tq, D);
        auto kb = km.block(shared_kv ? 0 : g * Tk, 0, Tk, D);
        auto vb = vm.block(shared_kv ? 0 : g * Tk, 0, Tk, D);
        for (int h = 0; h < heads; h++) {
            RowMat s = sc * (qb.middleCols(h * dh, dh) * kb.middleCols(h * dh, dh).transpose());
            for (int r = 0; r < Tq; r++) {
                float mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp();
                s.row(r) /= s.row(r).sum();
            }
            om.block(g * Tq, h * dh, Tq, dh).noalias() = s * vb.middleCols(h * dh, dh);
            probs->push_back(std::move(s));
        }
    }
    Var y = t.make(std::move(out));
    int iq = q.id, ik = k.id, iv = v.id;
    t.nodes[y.id].backward = [iq, ik, iv, heads, n_groups, shared_kv, Tq, Tk, D, dh, sc,
                              probs](Tape& tp, Node& nd) {
        const Tensor& qv2 = tp.nodes[iq].val;
        const Tensor& kv2 = tp.nodes[ik].val;
        const Tensor& vv2 = tp.nodes[iv].val;
        CMapM qm(qv2.ptr(), qv2.shape[0], D), km(kv2.ptr(), kv2.shape[0], D), vm(vv2.ptr(), vv2.shape[0], D);
        CMapM gy(nd.grad.ptr(), qv2.shape[0], D);
        MapM gq(tp.grad_buf(iq).ptr(), qv2.shape[0], D);
        MapM gk(tp.grad_buf(ik).ptr(), kv2.shape[0], D);
        MapM gv(tp.grad_buf(iv).ptr(), vv2.shape[0], D);
        for (int g = 0; g < n_groups; g++) {
            int kr = shared_kv ? 0 : g * Tk;
            for (int h = 0; h < heads; h++) {
                const RowMat& P = (*probs)[(size_t)g * heads + h];
                auto dOb = gy.block(g * Tq, h * dh, Tq, dh);
                auto Vb = vm.block(kr, h * dh, Tk, dh);
                auto Qb = qm.block(g * Tq, h * dh, Tq, dh);
                auto Kb = km.block(kr, h * dh, Tk, dh);
                gv.block(kr, h * dh, Tk, dh).noalias() += P.transpose() * dOb;
                RowMat dP = dOb * Vb.transpose();                      // [Tq,Tk]
                Eigen::VectorXf rs = (dP.array() * P.array()).rowwise().sum();
                RowMat dS = P.array() * (dP.colwise() - rs).array();
                dS *= sc;
                gq.block(g * Tq, h * dh, Tq, dh).noalias() += dS * Kb;
                gk.block(kr, h * dh, Tk, dh).noalias() += dS.transpose() * Qb;
            }
        }
    };
    return y;
}

// ------------------------------------------------------------ rearrangement

// [N,C,H,W] -> [N*H*W, C], frame-major token rows
inline Var spatial_to_tokens(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int N = xv.shape[0], C = xv.shape[1], HW = xv.shape[2] * xv.shape[3];
    Tensor out({N * HW, C});
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            const float* src = xv.ptr() + ((size_t)n * C + c) * HW;
            for (int i = 0; i < HW; i++) out[((size_t)n * HW + i) * C + c] = src[i];
        }
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, N, C, HW](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int n = 0; n < N; n++)
            for (int c = 0; c < C; c++) {
                float* dst = gx.ptr() + ((size_t)n * C + c) * HW;
                for (int i = 0; i < HW; i++) dst[i] += nd.grad[((size_t)n * HW + i) * C + c];
            }
    };
    return y;
}

// [N*H*W, C] -> [N,C,H,W]
inline Var tokens_to_spatial(Var x, int N, int H, int W) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int C = xv.shape[1], HW = H * W;
    Tensor out({N, C, H, W});
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            float* dst = out.ptr() + ((size_t)n * C + c) * HW;
            for (int i = 0; i < HW; i++) dst[i] = xv[((size_t)n * HW + i) * C + c];
        }
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, N, C, HW](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int n = 0; n < N; n++)
            for (int c = 0; c < C; c++) {
                const float* src = nd.grad.ptr() + ((size_t)n * C + c) * HW;
                for (int i = 0; i < HW; i++) gx[((size_t)n * HW + i) * C + c] += src[i];
            }
    };
    return y;
}

// [N,C,H,W] -> [H*W*N, C], position-major rows (each position's frames contiguous)
inline Var spatial_to_temporal_tokens(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int N = xv.shape[0], C = xv.shape[1], HW = xv.shape[2] * xv.shape[3];
    Tensor out({HW * N, C});
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            const float* src = xv.ptr() + ((size_t)n * C + c) * HW;
            for (int i = 0; i < HW; i++) out[((size_t)i * N + n) * C + c] = src[i];
        }
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, N, C, HW](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int n = 0; n < N; n++)
            for (int c = 0; c < C; c++) {
                float* dst = gx.ptr() + ((size_t)n * C + c) * HW;
                for (int i = 0; i < HW; i++) dst[i] += nd.grad[((size_t)i * N + n) * C + c];
            }
    };
    return y;
}

inline Var temporal_tokens_to_spatial(Var x, int N, int H, int W) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int C = xv.shape[1], HW = H * W;
    Tensor out({N, C, H, W});
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            float* dst = out.ptr() + ((size_t)n * C + c) * HW;
            for (int i = 0; i < HW; i++) dst[i] = xv[((size_t)i * N + n) * C + c];
        }
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, N, C, HW](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int n = 0; n < N; n++)
            for (int c = 0; c < C; c++) {
                const float* src = nd.grad.ptr() + ((size_t)n * C + c) * HW;
                for (int i = 0; i < HW; i++) gx[((size_t)i * N + n) * C + c] += src[i];
            }
    };
    return y;
}

inline Var repeat_rows(Var x, int times) {  // [T,D] -> [times*T, D]
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int T = xv.shape[0], D = xv.shape[1];
    Tensor out({times * T, D});
    for (int r = 0; r < times; r++)
        std::memcpy(out.ptr() + (size_t)r * T * D, xv.ptr(), (size_t)T * D * sizeof(float));
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, times, T, D](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int r = 0; r < times; r++)
            for (size_t i = 0; i < (size_t)T * D; i++) gx[i] += nd.grad[(size_t)r * T * D + i];
    };
    return y;
}

inline Var gather_rows(Var x, std::vector<int> idx) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int D = xv.shape[1];
    Tensor out({(int)idx.size(), D});
    for (size_t r = 0; r < idx.size(); r++)
        std::memcpy(out.ptr() + r * D, xv.ptr() + (size_t)idx[r] * D, (size_t)D * sizeof(float));
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, D, idx = std::move(idx)](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (size_t r = 0; r < idx.size(); r++)
            for (int c = 0; c < D; c++) gx[(size_t)idx[r] * D + c] += nd.grad[r * D + c];
    };
    return y;
}

inline Var mean_pool_rows(Var x, int group) {  // [T,D] -> [T/group, D]
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    int T = xv.shape[0], D = xv.shape[1], To = T / group;
    Tensor out({To, D});
    for (int r = 0; r < To; r++)
        for (int g = 0; g < group; g++)
            for (int c = 0; c < D; c++) out[(size_t)r * D + c] += xv[((size_t)r * group + g) * D + c] / group;
    Var y = t.make(std::move(out));
    int ix = x.id;
    t.nodes[y.id].backward = [ix, To, D, group](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (int r = 0; r < To; r++)
            for (int g = 0; g < group; g++)
                for (int c = 0; c < D; c++)
                    gx[((size_t)r * group + g) * D + c] += nd.grad[(size_t)r * D + c] / group;
    };
    return y;
}

inline Var concat_ch(Var a, Var b) {  // [N,Ca,H,W] + [N,Cb,H,W]
    Tape& t = *a.tape;
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    int N = av.shape[0], Ca = av.shape[1], Cb = bv.shape[1], HW = av.shape[2] * av.shape[3];
    Tensor out({N, Ca + Cb, av.shape[2], av.shape[3]});
    for (int n = 0; n < N; n++) {
        std::memcpy(out.ptr() + (size_t)n * (Ca + Cb) * HW, av.ptr() + (size_t)n * Ca * HW,
                    (size_t)Ca * HW * sizeof(float));
        std::memcpy(out.ptr() + ((size_t)n * (Ca + Cb) + Ca) * HW, bv.ptr() + (size_t)n * Cb * HW,
                    (size_t)Cb * HW * sizeof(float));
    }
    Var y = t.make(std::move(out));
    int ia = a.id, ib = b.id;
    t.nodes[y.id].backward = [ia, ib, N, Ca, Cb, HW](Tape& tp, Node& nd) {
        Tensor& ga = tp.grad_buf(ia);
        Tensor& gb = tp.grad_buf(ib);
        for (int n = 0; n < N; n++) {
            for (size_t i = 0; i < (size_t)Ca * HW; i++)
                ga[(size_t)n * Ca * HW + i] += nd.grad[(size_t)n * (Ca + Cb) * HW + i];
            for (size_t i = 0; i < (size_t)Cb * HW; i++)
                gb[(size_t)n * Cb * HW + i] += nd.grad[((size_t)n * (Ca + Cb) + Ca) * HW + i];
        }
    };
    return y;
}

// ------------------------------------------------------------------ losses

// L = sum(w_i * (p_i - t_i)^2) / norm;  w, t are constants
inline Var weighted_mse(Var pred, const Tensor& target, const Tensor& weight, double norm) {
    Tape& t = *pred.tape;
    const Tensor& pv = pred.val();
    VINSERT_FATAL_CHECK(pv.numel() == target.numel() && pv.numel() == weight.numel(),
                        "weighted_mse: shape mismatch pred=%s", pv.shape_str().c_str());
    double acc = 0.0;
    for (size_t i = 0; i < pv.numel(); i++) {
        double d = (double)pv[i] - target[i];
        acc += (double)weight[i] * d * d;
    }
    Tensor out({1});
    out[0] = (float)(acc / norm);
    Var y = t.make(std::move(out));
    int ip = pred.id;
    auto tgt = std::make_shared<Tensor>(target);
    auto wgt = std::make_shared<Tensor>(weight);
    t.nodes[y.id].backward = [ip, tgt, wgt, norm](Tape& tp, Node& nd) {
        Tensor& gp = tp.grad_buf(ip);
        const Tensor& pv2 = tp.nodes[ip].val;
        float g0 = nd.grad[0];
        for (size_t i = 0; i < gp.numel(); i++)
            gp[i] += g0 * (float)(2.0 * (*wgt)[i] * ((double)pv2[i] - (*tgt)[i]) / norm);
    };
    return y;
}

// L = sum(r_i * x_i), r constant
inline Var weighted_dot(Var x, const Tensor& r) {
    Tape& t = *x.tape;
    double acc = 0.0;
    for (size_t i = 0; i < x.val().numel(); i++) acc += (double)x.val()[i] * r[i];
    Tensor out({1});
    out[0] = (float)acc;
    Var y = t.make(std::move(out));
    int ix = x.id;
    auto rc = std::make_shared<Tensor>(r);
    t.nodes[y.id].backward = [ix, rc](Tape& tp, Node& nd) {
        Tensor& gx = tp.grad_buf(ix);
        for (size_t i = 0; i < gx.numel(); i++) gx[i] += nd.grad[0] * (*rc)[i];
    };
    return y;
}

}  // namespace vinsert::ag

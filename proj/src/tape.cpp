#include "acc/tape.hpp"

#include <algorithm>
#include <cmath>

#include "acc/kernels.hpp"
#include "acc/rng.hpp"

namespace acc {

namespace {

constexpr real kCosEps = real(1e-8);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
}

}  // namespace

Var Tape::push(Tensor val, std::function<void()> back) {
    check_open();
#ifndef NDEBUG
    for (real v : val.data)
        if (!std::isfinite(v))
            throw NumericError("non-finite value produced by a forward op (node " +
                               std::to_string(nodes_.size()) + ")");
#endif
    Node n;
    n.grad = Tensor::zeros(val.shape);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw IndexOutOfRange("tape: bad Var id " + std::to_string(v.id));
    return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const { return const_cast<Tape*>(this)->node(v); }

void Tape::check_open() const {
    if (finished_) throw StaleTape("tape already ran backward; build a new tape");
}

Var Tape::input(Tensor t) { return push(std::move(t)); }

Var Tape::param(Parameter& p) {
    auto it = param_index_.find(&p);
    if (it != param_index_.end()) return Var{it->second};
    Var v = push(p.value);
    param_index_.emplace(&p, v.id);
    param_nodes_.emplace_back(&p, v.id);
    return v;
}

const Tensor& Tape::val(Var v) const { return node(v).val; }
const Tensor& Tape::grad(Var v) const { return node(v).grad; }

Var Tape::add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i];
    return push(std::move(out), [this, a, b, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        Tensor& gb = g(b);
        for (int64_t i = 0; i < go.numel(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] += go.data[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= tb.data[i];
    return push(std::move(out), [this, a, b, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        Tensor& gb = g(b);
        for (int64_t i = 0; i < go.numel(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] -= go.data[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= tb.data[i];
    return push(std::move(out), [this, a, b, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        const Tensor& va = val(a);
        const Tensor& vb = val(b);
        Tensor& ga = g(a);
        Tensor& gb = g(b);
        for (int64_t i = 0; i < go.numel(); ++i) {
            ga.data[i] += go.data[i] * vb.data[i];
            gb.data[i] += go.data[i] * va.data[i];
        }
    });
}

Var Tape::scale(Var a, real s) {
    Tensor out = val(a);
    for (auto& x : out.data) x *= s;
    return push(std::move(out), [this, a, s, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        for (int64_t i = 0; i < go.numel(); ++i) ga.data[i] += s * go.data[i];
    });
}

Var Tape::add_bcast(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    const size_t ra = ta.shape.size(), rb = tb.shape.size();
    bool suffix = rb <= ra;
    for (size_t i = 0; suffix && i < rb; ++i)
        suffix = ta.shape[ra - rb + i] == tb.shape[i];
    if (!suffix)
        throw ShapeMismatch("add_bcast: " + shape_str(tb.shape) + " is not a suffix of " +
                            shape_str(ta.shape));
    const int64_t nb = tb.numel();
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i % nb];
    return push(std::move(out), [this, a, b, nb, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        Tensor& gb = g(b);
        for (int64_t i = 0; i < go.numel(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i % nb] += go.data[i];
        }
    });
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
        throw ShapeMismatch("matmul: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out = Tensor::zeros({m, n});
    kern::matmul(out.data.data(), ta.data.data(), tb.data.data(), m, k, n, false, false, false);
    return push(std::move(out), [this, a, b, m, k, n, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        kern::matmul(g(a).data.data(), go.data.data(), val(b).data.data(), m, n, k, false, true,
                     true);
        kern::matmul(g(b).data.data(), val(a).data.data(), go.data.data(), k, m, n, true, false,
                     true);
    });
}

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() < 2 || tw.rank() != 2 || tx.shape.back() != tw.shape[0])
        throw ShapeMismatch("linear: " + shape_str(tx.shape) + " x " + shape_str(tw.shape));
    const int64_t k = tw.shape[0], n = tw.shape[1];
    const int64_t m = tx.numel() / k;
    Shape oshape = tx.shape;
    oshape.back() = n;
    Tensor out = Tensor::zeros(oshape);
    kern::matmul(out.data.data(), tx.data.data(), tw.data.data(), m, k, n, false, false, false);
    if (b.ok()) {
        const Tensor& tb = val(b);
        require_shape(tb, {n}, "linear bias");
        for (int64_t r = 0; r < m; ++r)
            for (int64_t j = 0; j < n; ++j) out.data[r * n + j] += tb.data[j];
    }
    return push(std::move(out), [this, x, w, b, m, k, n,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        kern::matmul(g(x).data.data(), go.data.data(), val(w).data.data(), m, n, k, false, true,
                     true);
        kern::matmul(g(w).data.data(), val(x).data.data(), go.data.data(), k, m, n, true, false,
                     true);
        if (b.ok()) {
            Tensor& gb = g(b);
            for (int64_t j = 0; j < n; ++j) {
                real acc = gb.data[j];
                for (int64_t r = 0; r < m; ++r) acc += go.data[r * n + j];
                gb.data[j] = acc;
            }
        }
    });
}

Var Tape::bmm(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 3 || tb.rank() != 3 || ta.shape[0] != tb.shape[0] ||
        ta.shape[2] != tb.shape[1])
        throw ShapeMismatch("bmm: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const int64_t G = ta.shape[0], m = ta.shape[1], k = ta.shape[2], n = tb.shape[2];
    Tensor out = Tensor::zeros({G, m, n});
    kern::bmm(out.data.data(), ta.data.data(), tb.data.data(), G, m, k, n, false, false, false);
    return push(std::move(out), [this, a, b, G, m, k, n,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        kern::bmm(g(a).data.data(), go.data.data(), val(b).data.data(), G, m, n, k, false, true,
                  true);
        kern::bmm(g(b).data.data(), val(a).data.data(), go.data.data(), G, k, m, n, true, false,
                  true);
    });
}

Var Tape::bmm_nt(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 3 || tb.rank() != 3 || ta.shape[0] != tb.shape[0] ||
        ta.shape[2] != tb.shape[2])
        throw ShapeMismatch("bmm_nt: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const int64_t G = ta.shape[0], m = ta.shape[1], k = ta.shape[2], n = tb.shape[1];
    Tensor out = Tensor::zeros({G, m, n});
    kern::bmm(out.data.data(), ta.data.data(), tb.data.data(), G, m, k, n, false, true, false);
    return push(std::move(out), [this, a, b, G, m, k, n,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        kern::bmm(g(a).data.data(), go.data.data(), val(b).data.data(), G, m, n, k, false, false,
                  true);
        kern::bmm(g(b).data.data(), go.data.data(), val(a).data.data(), G, n, m, k, true, false,
                  true);
    });
}

Var Tape::conv1d(Var x, Var w, Var b, int64_t stride) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 3 || tw.rank() != 3 || tx.shape[1] != tw.shape[1] || stride < 1)
        throw ShapeMismatch("conv1d: " + shape_str(tx.shape) + " * " + shape_str(tw.shape));
    const int64_t B = tx.shape[0], Cin = tx.shape[1], L = tx.shape[2];
    const int64_t Cout = tw.shape[0], K = tw.shape[2];
    const int64_t Lout = kern::conv1d_out_len(L, K, stride);
    if (Lout <= 0)
        throw ShapeMismatch("conv1d: input length " + std::to_string(L) +
                            " shorter than kernel " + std::to_string(K));
    if (b.ok()) require_shape(val(b), {Cout}, "conv1d bias");
    Tensor out = Tensor::zeros({B, Cout, Lout});
    kern::conv1d(out.data.data(), tx.data.data(), tw.data.data(),
                 b.ok() ? val(b).data.data() : nullptr, B, Cin, L, Cout, K, stride);
    return push(std::move(out), [this, x, w, b, B, Cin, L, Cout, K, stride, Lout,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        kern::conv1d_grad_x(g(x).data.data(), go.data.data(), val(w).data.data(), B, Cin, L, Cout,
                            K, stride);
        kern::conv1d_grad_w(g(w).data.data(), go.data.data(), val(x).data.data(), B, Cin, L, Cout,
                            K, stride);
        if (b.ok()) kern::conv1d_grad_bias(g(b).data.data(), go.data.data(), B, Cout, Lout);
    });
}

Var Tape::reshape(Var a, Shape s) {
    const Tensor& ta = val(a);
    if (shape_numel(s) != ta.numel())
        throw ShapeMismatch("reshape: " + shape_str(ta.shape) + " -> " + shape_str(s));
    Tensor out = ta;
    out.shape = std::move(s);
    return push(std::move(out), [this, a, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        for (int64_t i = 0; i < go.numel(); ++i) ga.data[i] += go.data[i];
    });
}

Var Tape::transpose_last2(Var a) {
    const Tensor& ta = val(a);
    if (ta.rank() < 2) throw ShapeMismatch("transpose_last2: " + shape_str(ta.shape));
    const int64_t n = ta.shape.back();
    const int64_t m = ta.shape[ta.rank() - 2];
    const int64_t G = ta.numel() / (m * n);
    Shape oshape = ta.shape;
    std::swap(oshape[oshape.size() - 1], oshape[oshape.size() - 2]);
    Tensor out = Tensor::zeros(oshape);
    for (int64_t gi = 0; gi < G; ++gi)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                out.data[(gi * n + j) * m + i] = ta.data[(gi * m + i) * n + j];
    return push(std::move(out), [this, a, G, m, n, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        for (int64_t gi = 0; gi < G; ++gi)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    ga.data[(gi * m + i) * n + j] += go.data[(gi * n + j) * m + i];
    });
}

Var Tape::split_heads(Var x, int64_t heads) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3 || heads < 1 || tx.shape[2] % heads != 0)
        throw ShapeMismatch("split_heads: " + shape_str(tx.shape) + " into " +
                            std::to_string(heads));
    const int64_t B = tx.shape[0], T = tx.shape[1], D = tx.shape[2], dh = D / heads;
    Tensor out = Tensor::zeros({B * heads, T, dh});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t d = 0; d < dh; ++d)
                    out.data[(((b * heads + h) * T) + t) * dh + d] =
                        tx.data[(b * T + t) * D + h * dh + d];
    return push(std::move(out), [this, x, B, T, D, heads, dh,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t t = 0; t < T; ++t)
                    for (int64_t d = 0; d < dh; ++d)
                        gx.data[(b * T + t) * D + h * dh + d] +=
                            go.data[(((b * heads + h) * T) + t) * dh + d];
    });
}

Var Tape::merge_heads(Var x, int64_t heads) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3 || heads < 1 || tx.shape[0] % heads != 0)
        throw ShapeMismatch("merge_heads: " + shape_str(tx.shape) + " from " +
                            std::to_string(heads));
    const int64_t B = tx.shape[0] / heads, T = tx.shape[1], dh = tx.shape[2], D = dh * heads;
    Tensor out = Tensor::zeros({B, T, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t d = 0; d < dh; ++d)
                    out.data[(b * T + t) * D + h * dh + d] =
                        tx.data[(((b * heads + h) * T) + t) * dh + d];
    return push(std::move(out), [this, x, B, T, D, heads, dh,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t t = 0; t < T; ++t)
                    for (int64_t d = 0; d < dh; ++d)
                        gx.data[(((b * heads + h) * T) + t) * dh + d] +=
                            go.data[(b * T + t) * D + h * dh + d];
    });
}

Var Tape::take_token(Var x, int64_t index) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw ShapeMismatch("take_token: " + shape_str(tx.shape));
    const int64_t B = tx.shape[0], T = tx.shape[1], D = tx.shape[2];
    if (index < 0 || index >= T)
        throw IndexOutOfRange("take_token: index " + std::to_string(index) + " of " +
                              std::to_string(T));
    Tensor out = Tensor::zeros({B, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t d = 0; d < D; ++d) out.data[b * D + d] = tx.data[(b * T + index) * D + d];
    return push(std::move(out), [this, x, B, T, D, index,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t d = 0; d < D; ++d)
                gx.data[(b * T + index) * D + d] += go.data[b * D + d];
    });
}

Var Tape::slice_tokens(Var x, int64_t start, int64_t count) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw ShapeMismatch("slice_tokens: " + shape_str(tx.shape));
    const int64_t B = tx.shape[0], T = tx.shape[1], D = tx.shape[2];
    if (start < 0 || count < 1 || start + count > T)
        throw IndexOutOfRange("slice_tokens: [" + std::to_string(start) + ", " +
                              std::to_string(start + count) + ") of " + std::to_string(T));
    Tensor out = Tensor::zeros({B, count, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < count; ++t)
            for (int64_t d = 0; d < D; ++d)
                out.data[(b * count + t) * D + d] = tx.data[(b * T + start + t) * D + d];
    return push(std::move(out), [this, x, B, T, D, start, count,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < count; ++t)
                for (int64_t d = 0; d < D; ++d)
                    gx.data[(b * T + start + t) * D + d] += go.data[(b * count + t) * D + d];
    });
}

Var Tape::prepend_token(Var x, Var t) {
    const Tensor& tx = val(x);
    const Tensor& tt = val(t);
    if (tx.rank() != 3 || tt.rank() != 1 || tt.shape[0] != tx.shape[2])
        throw ShapeMismatch("prepend_token: " + shape_str(tx.shape) + " + " +
                            shape_str(tt.shape));
    const int64_t B = tx.shape[0], T = tx.shape[1], D = tx.shape[2];
    Tensor out = Tensor::zeros({B, T + 1, D});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t d = 0; d < D; ++d) out.data[(b * (T + 1)) * D + d] = tt.data[d];
        for (int64_t i = 0; i < T; ++i)
            for (int64_t d = 0; d < D; ++d)
                out.data[(b * (T + 1) + 1 + i) * D + d] = tx.data[(b * T + i) * D + d];
    }
    return push(std::move(out), [this, x, t, B, T, D,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        Tensor& gt = g(t);
        for (int64_t d = 0; d < D; ++d) {
            real acc = gt.data[d];
            for (int64_t b = 0; b < B; ++b) acc += go.data[(b * (T + 1)) * D + d];
            gt.data[d] = acc;
        }
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < T; ++i)
                for (int64_t d = 0; d < D; ++d)
                    gx.data[(b * T + i) * D + d] += go.data[(b * (T + 1) + 1 + i) * D + d];
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[0] != tb.shape[0])
        throw ShapeMismatch("concat_cols: " + shape_str(ta.shape) + " + " + shape_str(tb.shape));
    const int64_t B = ta.shape[0], p = ta.shape[1], q = tb.shape[1];
    Tensor out = Tensor::zeros({B, p + q});
    for (int64_t r = 0; r < B; ++r) {
        for (int64_t j = 0; j < p; ++j) out.data[r * (p + q) + j] = ta.data[r * p + j];
        for (int64_t j = 0; j < q; ++j) out.data[r * (p + q) + p + j] = tb.data[r * q + j];
    }
    return push(std::move(out), [this, a, b, B, p, q,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& ga = g(a);
        Tensor& gb = g(b);
        for (int64_t r = 0; r < B; ++r) {
            for (int64_t j = 0; j < p; ++j) ga.data[r * p + j] += go.data[r * (p + q) + j];
            for (int64_t j = 0; j < q; ++j) gb.data[r * q + j] += go.data[r * (p + q) + p + j];
        }
    });
}

Var Tape::patchify(Var img, int64_t patch) {
    const Tensor& ti = val(img);
    if (ti.rank() != 4 || patch < 1 || ti.shape[2] % patch != 0 || ti.shape[3] % patch != 0)
        throw ShapeMismatch("patchify: " + shape_str(ti.shape) + " with patch " +
                            std::to_string(patch));
    const int64_t B = ti.shape[0], C = ti.shape[1], H = ti.shape[2], W = ti.shape[3];
    const int64_t gh = H / patch, gw = W / patch, N = gh * gw, R = C * patch * patch;
    Tensor out = Tensor::zeros({B, N, R});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t py = 0; py < patch; ++py)
                        for (int64_t px = 0; px < patch; ++px)
                            out.data[(b * N + gy * gw + gx) * R + (c * patch + py) * patch + px] =
                                ti.data[((b * C + c) * H + gy * patch + py) * W + gx * patch + px];
    return push(std::move(out), [this, img, B, C, H, W, patch, gh, gw, N, R,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gi = g(img);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t gy = 0; gy < gh; ++gy)
                for (int64_t gx = 0; gx < gw; ++gx)
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t py = 0; py < patch; ++py)
                            for (int64_t px = 0; px < patch; ++px)
                                gi.data[((b * C + c) * H + gy * patch + py) * W + gx * patch +
                                        px] += go.data[(b * N + gy * gw + gx) * R +
                                                       (c * patch + py) * patch + px];
    });
}

Var Tape::softmax_last(Var x) {
    const Tensor& tx = val(x);
    if (tx.rank() < 1) throw ShapeMismatch("softmax_last: " + shape_str(tx.shape));
    const int64_t cols = tx.shape.back();
    const int64_t rows = tx.numel() / cols;
    Tensor out = Tensor::zeros(tx.shape);
    kern::softmax_rows(out.data.data(), tx.data.data(), rows, cols);
    return push(std::move(out), [this, x, rows, cols,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        kern::softmax_grad_rows(g(x).data.data(), val(o).data.data(), g(o).data.data(), rows,
                                cols);
    });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, real eps) {
    const Tensor& tx = val(x);
    if (tx.rank() < 1) throw ShapeMismatch("layer_norm: " + shape_str(tx.shape));
    const int64_t cols = tx.shape.back();
    const int64_t rows = tx.numel() / cols;
    require_shape(val(gain), {cols}, "layer_norm gain");
    require_shape(val(bias), {cols}, "layer_norm bias");
    Tensor out = Tensor::zeros(tx.shape);
    Tensor mean = Tensor::zeros({rows});
    Tensor rstd = Tensor::zeros({rows});
    kern::layer_norm_rows(out.data.data(), mean.data.data(), rstd.data.data(), tx.data.data(),
                          val(gain).data.data(), val(bias).data.data(), rows, cols, eps);
    return push(std::move(out),
                [this, x, gain, bias, rows, cols, mean = std::move(mean),
                 rstd = std::move(rstd), o = Var{static_cast<int>(nodes_.size())}] {
                    kern::layer_norm_grad(g(x).data.data(), g(gain).data.data(),
                                          g(bias).data.data(), g(o).data.data(),
                                          val(x).data.data(), mean.data.data(), rstd.data.data(),
                                          val(gain).data.data(), rows, cols);
                });
}

Var Tape::gelu(Var x) {
    const Tensor& tx = val(x);
    Tensor out = Tensor::zeros(tx.shape);
    kern::gelu(out.data.data(), tx.data.data(), tx.numel());
    return push(std::move(out), [this, x, o = Var{static_cast<int>(nodes_.size())}] {
        kern::gelu_grad(g(x).data.data(), val(x).data.data(), g(o).data.data(), val(x).numel());
    });
}

Var Tape::tanh(Var x) {
    Tensor out = val(x);
    for (auto& v : out.data) v = std::tanh(v);
    return push(std::move(out), [this, x, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& y = val(o);
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t i = 0; i < y.numel(); ++i)
            gx.data[i] += go.data[i] * (1 - y.data[i] * y.data[i]);
    });
}

Var Tape::relu(Var x) {
    Tensor out = val(x);
    for (auto& v : out.data) v = v > 0 ? v : real(0);
    return push(std::move(out), [this, x, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& vx = val(x);
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t i = 0; i < vx.numel(); ++i)
            if (vx.data[i] > 0) gx.data[i] += go.data[i];
    });
}

Var Tape::dropout(Var x, real rate, DropoutCtx& ctx) {
    if (rate < 0 || rate >= 1)
        throw LogicError("dropout rate must be in [0, 1): " + std::to_string(rate));
    if (!ctx.training || rate == 0) return x;
    const Tensor& tx = val(x);
    const real keep = 1 - rate;
    const real boost = 1 / keep;
    Rng rng(mix_key(mix_key(ctx.seed, ctx.step), ctx.counter++));
    Tensor mask = Tensor::zeros(tx.shape);
    for (auto& m : mask.data) m = rng.bernoulli(keep) ? boost : real(0);
    Tensor out = tx;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= mask.data[i];
    return push(std::move(out), [this, x, mask = std::move(mask),
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        for (int64_t i = 0; i < go.numel(); ++i) gx.data[i] += go.data[i] * mask.data[i];
    });
}

Var Tape::mean_tokens(Var x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw ShapeMismatch("mean_tokens: " + shape_str(tx.shape));
    const int64_t B = tx.shape[0], T = tx.shape[1], D = tx.shape[2];
    Tensor out = Tensor::zeros({B, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t d = 0; d < D; ++d) out.data[b * D + d] += tx.data[(b * T + t) * D + d];
    for (auto& v : out.data) v /= real(T);
    return push(std::move(out), [this, x, B, T, D, o = Var{static_cast<int>(nodes_.size())}] {
        const Tensor& go = g(o);
        Tensor& gx = g(x);
        const real inv = real(1) / real(T);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t d = 0; d < D; ++d)
                    gx.data[(b * T + t) * D + d] += go.data[b * D + d] * inv;
    });
}

Var Tape::mean_all(Var x) {
    const Tensor& tx = val(x);
    const int64_t n = tx.numel();
    real s = 0;
    for (int64_t i = 0; i < n; ++i) s += tx.data[i];
    Tensor out = Tensor::full({1}, s / real(n));
    return push(std::move(out), [this, x, n, o = Var{static_cast<int>(nodes_.size())}] {
        const real gs = g(o).data[0] / real(n);
        Tensor& gx = g(x);
        for (int64_t i = 0; i < n; ++i) gx.data[i] += gs;
    });
}

Var Tape::sum_all(Var x) {
    const Tensor& tx = val(x);
    const int64_t n = tx.numel();
    real s = 0;
    for (int64_t i = 0; i < n; ++i) s += tx.data[i];
    Tensor out = Tensor::full({1}, s);
    return push(std::move(out), [this, x, n, o = Var{static_cast<int>(nodes_.size())}] {
        const real gs = g(o).data[0];
        Tensor& gx = g(x);
        for (int64_t i = 0; i < n; ++i) gx.data[i] += gs;
    });
}

namespace {

// cos(a, b) with norms clamped below at kCosEps. Returns the clamped norms
// so callers can reuse them in the gradient.
real row_cosine(const real* a, const real* b, int64_t n, real& na_out, real& nb_out,
                real& na_raw, real& nb_raw) {
    real dot = 0, qa = 0, qb = 0;
    for (int64_t j = 0; j < n; ++j) {
        dot += a[j] * b[j];
        qa += a[j] * a[j];
        qb += b[j] * b[j];
    }
    na_raw = std::sqrt(qa);
    nb_raw = std::sqrt(qb);
    na_out = std::max(na_raw, kCosEps);
    nb_out = std::max(nb_raw, kCosEps);
    return dot / (na_out * nb_out);
}

}  // namespace

Var Tape::cosine_loss_positive(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "cosine_loss_positive");
    if (ta.rank() != 2) throw ShapeMismatch("cosine_loss_positive: " + shape_str(ta.shape));
    const int64_t B = ta.shape[0], M = ta.shape[1];
    std::vector<real> cosv(B), nav(B), nbv(B), nar(B), nbr(B);
    real loss = 0;
    for (int64_t i = 0; i < B; ++i) {
        cosv[i] = row_cosine(ta.data.data() + i * M, tb.data.data() + i * M, M, nav[i], nbv[i],
                             nar[i], nbr[i]);
        loss += 1 - cosv[i];
    }
    Tensor out = Tensor::full({1}, loss / real(B));
    return push(std::move(out),
                [this, a, b, B, M, cosv = std::move(cosv), nav = std::move(nav),
                 nbv = std::move(nbv), nar = std::move(nar), nbr = std::move(nbr),
                 o = Var{static_cast<int>(nodes_.size())}] {
                    const real coef = -g(o).data[0] / real(B);
                    const Tensor& va = val(a);
                    const Tensor& vb = val(b);
                    Tensor& ga = g(a);
                    Tensor& gb = g(b);
                    for (int64_t i = 0; i < B; ++i) {
                        const real inv = 1 / (nav[i] * nbv[i]);
                        const real sa = nar[i] > kCosEps ? cosv[i] / (nav[i] * nav[i]) : real(0);
                        const real sb = nbr[i] > kCosEps ? cosv[i] / (nbv[i] * nbv[i]) : real(0);
                        for (int64_t j = 0; j < M; ++j) {
                            ga.data[i * M + j] +=
                                coef * (vb.data[i * M + j] * inv - sa * va.data[i * M + j]);
                            gb.data[i * M + j] +=
                                coef * (va.data[i * M + j] * inv - sb * vb.data[i * M + j]);
                        }
                    }
                });
}

Var Tape::cosine_loss_negative(Var a, Var b, real margin) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "cosine_loss_negative");
    if (ta.rank() != 2) throw ShapeMismatch("cosine_loss_negative: " + shape_str(ta.shape));
    const int64_t B = ta.shape[0], M = ta.shape[1];
    if (B < 2) return push(Tensor::zeros({1}));
    const real npairs = real(B * (B - 1));
    real loss = 0;
    for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < B; ++j) {
            if (i == j) continue;
            real na, nb, nar, nbr;
            const real c =
                row_cosine(ta.data.data() + i * M, tb.data.data() + j * M, M, na, nb, nar, nbr);
            if (c > margin) loss += c - margin;
        }
    Tensor out = Tensor::full({1}, loss / npairs);
    return push(std::move(out), [this, a, b, B, M, margin, npairs,
                                 o = Var{static_cast<int>(nodes_.size())}] {
        const real coef = g(o).data[0] / npairs;
        const Tensor& va = val(a);
        const Tensor& vb = val(b);
        Tensor& ga = g(a);
        Tensor& gb = g(b);
        for (int64_t i = 0; i < B; ++i)
            for (int64_t j = 0; j < B; ++j) {
                if (i == j) continue;
                real na, nb, nar, nbr;
                const real c = row_cosine(va.data.data() + i * M, vb.data.data() + j * M, M, na,
                                          nb, nar, nbr);
                if (c <= margin) continue;
                const real inv = 1 / (na * nb);
                const real sa = nar > kCosEps ? c / (na * na) : real(0);
                const real sb = nbr > kCosEps ? c / (nb * nb) : real(0);
                for (int64_t k = 0; k < M; ++k) {
                    ga.data[i * M + k] +=
                        coef * (vb.data[j * M + k] * inv - sa * va.data[i * M + k]);
                    gb.data[j * M + k] +=
                        coef * (va.data[i * M + k] * inv - sb * vb.data[j * M + k]);
                }
            }
    });
}

Var Tape::weighted_ce(Var logits, const std::vector<int>& labels, Var weights,
                      const std::vector<real>& mask) {
    const Tensor& tz = val(logits);
    const Tensor& tw = val(weights);
    if (tz.rank() != 2) throw ShapeMismatch("weighted_ce: logits " + shape_str(tz.shape));
    const int64_t B = tz.shape[0], C = tz.shape[1];
    require_shape(tw, {C}, "weighted_ce weights");
    if (static_cast<int64_t>(labels.size()) != B)
        throw LengthMismatch("weighted_ce: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(B) + " rows");
    if (static_cast<int64_t>(mask.size()) != B)
        throw LengthMismatch("weighted_ce: " + std::to_string(mask.size()) + " mask entries for " +
                             std::to_string(B) + " rows");
    for (int64_t i = 0; i < B; ++i)
        if (labels[i] < 0 || labels[i] >= C)
            throw IndexOutOfRange("weighted_ce: label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(C) + ")");

    Tensor probs = Tensor::zeros({B, C});
    kern::softmax_rows(probs.data.data(), tz.data.data(), B, C);
    std::vector<real> ell(B);
    real num = 0, den = 0;
    for (int64_t i = 0; i < B; ++i) {
        // -log softmax via the probabilities; clamp avoids -inf on underflow.
        ell[i] = -std::log(std::max(probs.data[i * C + labels[i]], real(1e-300)));
        const real mw = mask[i] * tw.data[labels[i]];
        num += mw * ell[i];
        den += mw;
    }
    if (den == 0) throw EmptyBatch("weighted_ce: every row is masked");
    const real L = num / den;
    Tensor out = Tensor::full({1}, L);
    return push(std::move(out),
                [this, logits, weights, labels, mask, B, C, L, den, probs = std::move(probs),
                 ell = std::move(ell), o = Var{static_cast<int>(nodes_.size())}] {
                    const real g0 = g(o).data[0];
                    const Tensor& tw = val(weights);
                    Tensor& gz = g(logits);
                    Tensor& gw = g(weights);
                    for (int64_t i = 0; i < B; ++i) {
                        const real coef = g0 * mask[i] * tw.data[labels[i]] / den;
                        if (coef == 0) continue;
                        for (int64_t c = 0; c < C; ++c)
                            gz.data[i * C + c] +=
                                coef * (probs.data[i * C + c] - (c == labels[i] ? 1 : 0));
                    }
                    for (int64_t c = 0; c < C; ++c) {
                        real sl = 0, sm = 0;
                        for (int64_t i = 0; i < B; ++i) {
                            if (labels[i] != c) continue;
                            sl += mask[i] * ell[i];
                            sm += mask[i];
                        }
                        gw.data[c] += g0 * (sl - L * sm) / den;
                    }
                });
}

void Tape::backward(Var loss) {
    check_open();
    Node& ln = node(loss);
    if (ln.val.numel() != 1)
        throw NotScalar("backward: loss has shape " + shape_str(ln.val.shape));
    finished_ = true;
    ln.grad.data[0] = 1;
    for (int i = loss.id; i >= 0; --i)
        if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back();
    for (auto& [p, id] : param_nodes_) {
        const Tensor& gp = nodes_[static_cast<size_t>(id)].grad;
        for (int64_t i = 0; i < gp.numel(); ++i) p->grad.data[i] += gp.data[i];
    }
}

}  // namespace acc

#include "acc/encoders.hpp"

#include <cmath>

#include "acc/kernels.hpp"

namespace acc {

void VitConfig::validate() const {
    if (image_size < 1 || patch_size < 1 || channels < 1 || embed_dim < 1 || depth < 1 ||
        heads < 1 || mlp_dim < 1)
        throw UsageError("vit: all dimensions must be positive");
    if (image_size % patch_size != 0)
        throw UsageError("vit: image_size " + std::to_string(image_size) +
                         " is not divisible by patch_size " + std::to_string(patch_size));
    if (embed_dim % heads != 0)
        throw UsageError("vit: embed_dim " + std::to_string(embed_dim) +
                         " is not divisible by heads " + std::to_string(heads));
    if (dropout < 0 || dropout >= 1) throw UsageError("vit: dropout must be in [0, 1)");
}

void AudioConfig::validate() const {
    if (conv.empty()) throw UsageError("audio: conv stack must not be empty");
    for (const auto& l : conv)
        if (l.channels < 1 || l.kernel < 1 || l.stride < 1)
            throw UsageError("audio: conv layer fields must be positive");
    if (conv.back().channels != embed_dim)
        throw UsageError("audio: last conv layer has " + std::to_string(conv.back().channels) +
                         " channels but embed_dim is " + std::to_string(embed_dim));
    if (embed_dim < 1 || depth < 1 || heads < 1 || mlp_dim < 1)
        throw UsageError("audio: all dimensions must be positive");
    if (embed_dim % heads != 0)
        throw UsageError("audio: embed_dim " + std::to_string(embed_dim) +
                         " is not divisible by heads " + std::to_string(heads));
    if (dropout < 0 || dropout >= 1) throw UsageError("audio: dropout must be in [0, 1)");
}

int64_t AudioConfig::out_len(int64_t window) const {
    int64_t n = window;
    for (const auto& l : conv) n = kern::conv1d_out_len(n, l.kernel, l.stride);
    return n;
}

Tensor sinusoidal_positions(int64_t n, int64_t d) {
    Tensor p = Tensor::zeros({n, d});
    for (int64_t pos = 0; pos < n; ++pos)
        for (int64_t i = 0; i < d; ++i) {
            const double angle =
                pos * std::exp(-std::log(10000.0) * static_cast<double>(2 * (i / 2)) / d);
            p.data[static_cast<size_t>(pos * d + i)] =
                static_cast<real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return p;
}

namespace {

constexpr real kLnEps = real(1e-5);

Parameter* weight(ParamStore& ps, Rng& rng, const std::string& name, Shape shape, bool frozen) {
    return &ps.make(name, Tensor::truncated_normal(std::move(shape), rng, 0.02), frozen);
}

Parameter* zeros_param(ParamStore& ps, const std::string& name, Shape shape, bool frozen) {
    return &ps.make(name, Tensor::zeros(std::move(shape)), frozen);
}

Parameter* ones_param(ParamStore& ps, const std::string& name, Shape shape, bool frozen) {
    return &ps.make(name, Tensor::full(std::move(shape), real(1)), frozen);
}

}  // namespace

TransformerBlock::TransformerBlock(int64_t dim, int64_t heads, int64_t mlp_dim, real dropout,
                                   ParamStore& ps, Rng& rng, const std::string& prefix,
                                   bool frozen)
    : dim_(dim), heads_(heads), dropout_(dropout) {
    ln1_g_ = ones_param(ps, prefix + ".ln1.g", {dim}, frozen);
    ln1_b_ = zeros_param(ps, prefix + ".ln1.b", {dim}, frozen);
    wq_ = weight(ps, rng, prefix + ".attn.wq", {dim, dim}, frozen);
    bq_ = zeros_param(ps, prefix + ".attn.bq", {dim}, frozen);
    wk_ = weight(ps, rng, prefix + ".attn.wk", {dim, dim}, frozen);
    bk_ = zeros_param(ps, prefix + ".attn.bk", {dim}, frozen);
    wv_ = weight(ps, rng, prefix + ".attn.wv", {dim, dim}, frozen);
    bv_ = zeros_param(ps, prefix + ".attn.bv", {dim}, frozen);
    wo_ = weight(ps, rng, prefix + ".attn.wo", {dim, dim}, frozen);
    bo_ = zeros_param(ps, prefix + ".attn.bo", {dim}, frozen);
    ln2_g_ = ones_param(ps, prefix + ".ln2.g", {dim}, frozen);
    ln2_b_ = zeros_param(ps, prefix + ".ln2.b", {dim}, frozen);
    w1_ = weight(ps, rng, prefix + ".mlp.w1", {dim, mlp_dim}, frozen);
    b1_ = zeros_param(ps, prefix + ".mlp.b1", {mlp_dim}, frozen);
    w2_ = weight(ps, rng, prefix + ".mlp.w2", {mlp_dim, dim}, frozen);
    b2_ = zeros_param(ps, prefix + ".mlp.b2", {dim}, frozen);
}

Var TransformerBlock::forward(Tape& t, Var x, DropoutCtx& dc) const {
    Var h = t.layer_norm(x, t.param(*ln1_g_), t.param(*ln1_b_), kLnEps);
    Var q = t.linear(h, t.param(*wq_), t.param(*bq_));
    Var k = t.linear(h, t.param(*wk_), t.param(*bk_));
    Var v = t.linear(h, t.param(*wv_), t.param(*bv_));
    Var qh = t.split_heads(q, heads_);
    Var kh = t.split_heads(k, heads_);
    Var vh = t.split_heads(v, heads_);
    const real inv_sqrt_dh = real(1) / std::sqrt(static_cast<real>(dim_ / heads_));
    Var att = t.softmax_last(t.scale(t.bmm_nt(qh, kh), inv_sqrt_dh));
    att = t.dropout(att, dropout_, dc);
    Var ctx = t.merge_heads(t.bmm(att, vh), heads_);
    Var o = t.dropout(t.linear(ctx, t.param(*wo_), t.param(*bo_)), dropout_, dc);
    x = t.add(x, o);

    Var m = t.layer_norm(x, t.param(*ln2_g_), t.param(*ln2_b_), kLnEps);
    m = t.gelu(t.linear(m, t.param(*w1_), t.param(*b1_)));
    m = t.linear(m, t.param(*w2_), t.param(*b2_));
    m = t.dropout(m, dropout_, dc);
    return t.add(x, m);
}

VitEncoder::VitEncoder(const VitConfig& cfg, ParamStore& ps, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
    cfg_.validate();
    const int64_t n_tok = cfg_.n_patches() + 1;
    const int64_t patch_in = cfg_.channels * cfg_.patch_size * cfg_.patch_size;
    patch_w_ = weight(ps, rng, prefix + ".patch.w", {patch_in, cfg_.embed_dim}, false);
    patch_b_ = zeros_param(ps, prefix + ".patch.b", {cfg_.embed_dim}, false);
    cls_ = weight(ps, rng, prefix + ".cls", {cfg_.embed_dim}, false);
    if (cfg_.sinusoidal_pos)
        sin_pos_ = sinusoidal_positions(n_tok, cfg_.embed_dim);
    else
        pos_ = weight(ps, rng, prefix + ".pos", {n_tok, cfg_.embed_dim}, false);
    for (int64_t i = 0; i < cfg_.depth; ++i)
        blocks_.emplace_back(cfg_.embed_dim, cfg_.heads, cfg_.mlp_dim, cfg_.dropout, ps, rng,
                             prefix + ".blk" + std::to_string(i), false);
    out_g_ = ones_param(ps, prefix + ".out.g", {cfg_.embed_dim}, false);
    out_b_ = zeros_param(ps, prefix + ".out.b", {cfg_.embed_dim}, false);
}

Var VitEncoder::encode(Tape& t, Var images, DropoutCtx& dc) const {
    // By value: recording ops may reallocate the tape's node storage.
    const Shape s = t.val(images).shape;
    if (s.size() != 4 || s[1] != cfg_.channels || s[2] != cfg_.image_size ||
        s[3] != cfg_.image_size)
        throw ShapeMismatch("vit: expected images [B," + std::to_string(cfg_.channels) + "," +
                            std::to_string(cfg_.image_size) + "," +
                            std::to_string(cfg_.image_size) + "], got " + shape_str(s));
    Var tok = t.patchify(images, cfg_.patch_size);
    tok = t.linear(tok, t.param(*patch_w_), t.param(*patch_b_));
    tok = t.prepend_token(tok, t.param(*cls_));
    Var pos = cfg_.sinusoidal_pos ? t.input(sin_pos_) : t.param(*pos_);
    tok = t.add_bcast(tok, pos);
    tok = t.dropout(tok, cfg_.dropout, dc);
    for (const auto& b : blocks_) tok = b.forward(t, tok, dc);
    return t.layer_norm(tok, t.param(*out_g_), t.param(*out_b_), kLnEps);
}

Var VitEncoder::encode(Tape& t, const Tensor& images, DropoutCtx& dc) const {
    return encode(t, t.input(images), dc);
}

AudioEncoder::AudioEncoder(const AudioConfig& cfg, int64_t window, ParamStore& ps, Rng& rng,
                           const std::string& prefix)
    : cfg_(cfg), window_(window) {
    cfg_.validate();
    if (window_ < 1) throw UsageError("audio: window must be positive");
    t_out_ = cfg_.out_len(window_);
    if (t_out_ < 1)
        throw UsageError("audio: conv stack consumes the whole " + std::to_string(window_) +
                         "-sample window; no output frames remain");

    int64_t in_ch = 1;
    for (size_t i = 0; i < cfg_.conv.size(); ++i) {
        const auto& l = cfg_.conv[i];
        const std::string p = prefix + ".conv" + std::to_string(i);
        ConvLayer layer;
        layer.w = weight(ps, rng, p + ".w", {l.channels, in_ch, l.kernel}, cfg_.frozen);
        layer.b = zeros_param(ps, p + ".b", {l.channels}, cfg_.frozen);
        layer.ln_g = ones_param(ps, p + ".ln.g", {l.channels}, cfg_.frozen);
        layer.ln_b = zeros_param(ps, p + ".ln.b", {l.channels}, cfg_.frozen);
        layer.stride = l.stride;
        convs_.push_back(layer);
        in_ch = l.channels;
    }
    pos_ = weight(ps, rng, prefix + ".pos", {t_out_, cfg_.embed_dim}, cfg_.frozen);
    for (int64_t i = 0; i < cfg_.depth; ++i)
        blocks_.emplace_back(cfg_.embed_dim, cfg_.heads, cfg_.mlp_dim, cfg_.dropout, ps, rng,
                             prefix + ".blk" + std::to_string(i), cfg_.frozen);
    out_g_ = ones_param(ps, prefix + ".out.g", {cfg_.embed_dim}, cfg_.frozen);
    out_b_ = zeros_param(ps, prefix + ".out.b", {cfg_.embed_dim}, cfg_.frozen);
}

Var AudioEncoder::encode(Tape& t, Var windows, DropoutCtx& dc) const {
    const Shape s = t.val(windows).shape;
    if (s.size() != 2 || s[1] != window_)
        throw ShapeMismatch("audio: expected windows [B," + std::to_string(window_) + "], got " +
                            shape_str(s));
    const int64_t B = s[0];
    Var x = t.reshape(windows, {B, 1, window_});
    for (size_t i = 0; i < convs_.size(); ++i) {
        const auto& l = convs_[i];
        x = t.conv1d(x, t.param(*l.w), t.param(*l.b), l.stride);  // [B,C,L]
        x = t.transpose_last2(x);                                 // [B,L,C]
        x = t.gelu(t.layer_norm(x, t.param(*l.ln_g), t.param(*l.ln_b), kLnEps));
        if (i + 1 < convs_.size()) x = t.transpose_last2(x);
    }
    x = t.add_bcast(x, t.param(*pos_));
    x = t.dropout(x, cfg_.dropout, dc);
    for (const auto& b : blocks_) x = b.forward(t, x, dc);
    return t.layer_norm(x, t.param(*out_g_), t.param(*out_b_), kLnEps);
}

Var AudioEncoder::encode(Tape& t, const Tensor& windows, DropoutCtx& dc) const {
    return encode(t, t.input(windows), dc);
}

Tensor AudioEncoder::encode_detached(const Tensor& windows) const {
    Tape scratch;
    DropoutCtx dc;  // eval mode
    Var out = encode(scratch, windows, dc);
    return scratch.val(out);
}

AttentionPool::AttentionPool(int64_t dim, ParamStore& ps, Rng& rng, const std::string& prefix)
    : dim_(dim) {
    if (dim < 1) throw UsageError("pool: dim must be positive");
    m_ = weight(ps, rng, prefix + ".m", {dim, dim}, false);
    q_ = weight(ps, rng, prefix + ".q", {dim, 1}, false);
}

Var AttentionPool::pool(Tape& t, Var seq) const {
    const Shape s = t.val(seq).shape;
    if (s.size() != 3 || s[2] != dim_)
        throw ShapeMismatch("pool: expected [B,T," + std::to_string(dim_) + "], got " +
                            shape_str(s));
    const int64_t B = s[0], T = s[1];
    Var u = t.tanh(t.linear(seq, t.param(*m_)));
    Var scores = t.reshape(t.linear(u, t.param(*q_)), {B, T});
    Var att = t.reshape(t.softmax_last(scores), {B, 1, T});
    return t.reshape(t.bmm(att, seq), {B, dim_});
}

}  // namespace acc

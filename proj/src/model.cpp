#include "acc/model.hpp"

#include <cmath>
#include <limits>

namespace acc {

namespace {

const std::vector<std::string> kModeNames = {"univ", "unia", "fusion", "contrast"};

Parameter& weight(ParamStore& ps, const std::string& name, Shape shape, Rng& rng) {
    return ps.make(name, Tensor::truncated_normal(std::move(shape), rng, 0.02));
}

Parameter& zeros_param(ParamStore& ps, const std::string& name, Shape shape) {
    return ps.make(name, Tensor::zeros(std::move(shape)));
}

}  // namespace

const std::string& mode_name(Mode m) {
    return kModeNames[static_cast<size_t>(m)];
}

Mode mode_from_name(const std::string& name) {
    for (size_t i = 0; i < kModeNames.size(); ++i)
        if (kModeNames[i] == name) return static_cast<Mode>(i);
    throw ParseError("unknown mode \"" + name + "\" (expected univ, unia, fusion or contrast)");
}

void ModelConfig::validate() const {
    if (lambda_cos < 0) throw UsageError("model: lambda must be >= 0");
    if (contrast_len < 1) throw UsageError("model: contrast length must be >= 1");
    if (proj_dim < 1) throw UsageError("model: projection dim must be >= 1");
    if (neg_margin < -1 || neg_margin > 1)
        throw UsageError("model: negative-pair margin must lie in [-1, 1]");
    if (mode == Mode::UniV || mode == Mode::Fusion || mode == Mode::Contrast) vit.validate();
    if (mode == Mode::UniA || mode == Mode::Fusion || mode == Mode::Contrast) audio.validate();
}

Tensor inverse_frequency_logits(const std::vector<real>& freq, int n_classes) {
    if (!freq.empty() && static_cast<int>(freq.size()) != n_classes)
        throw ShapeMismatch("class frequency vector has " + std::to_string(freq.size()) +
                            " entries for " + std::to_string(n_classes) + " classes");
    Tensor a = Tensor::zeros({n_classes});
    if (freq.empty()) return a;
    real min_pos = std::numeric_limits<real>::infinity();
    for (real f : freq)
        if (f > 0 && f < min_pos) min_pos = f;
    if (!std::isfinite(min_pos)) return a;  // all zero: uniform
    real total = 0;
    std::vector<real> inv(freq.size());
    for (size_t c = 0; c < freq.size(); ++c) {
        inv[c] = 1 / std::max(freq[c], min_pos);
        total += inv[c];
    }
    for (size_t c = 0; c < freq.size(); ++c) a.at(static_cast<int64_t>(c)) = std::log(inv[c] / total);
    return a;
}

Var contrastive_loss(Tape& t, Var img, Var aud) {
    const Shape si = t.val(img).shape;
    if (si.size() != 3) throw ShapeMismatch("contrastive_loss: " + shape_str(si));
    Var fi = t.reshape(img, {si[0], si[1] * si[2]});
    Var fa = t.reshape(aud, {si[0], si[1] * si[2]});
    return t.cosine_loss_positive(fi, fa);
}

Var contrastive_loss(Tape& t, Var img, Var aud, real margin) {
    const Shape si = t.val(img).shape;
    if (si.size() != 3) throw ShapeMismatch("contrastive_loss: " + shape_str(si));
    Var fi = t.reshape(img, {si[0], si[1] * si[2]});
    Var fa = t.reshape(aud, {si[0], si[1] * si[2]});
    return t.add(t.cosine_loss_positive(fi, fa), t.cosine_loss_negative(fi, fa, margin));
}

LossParts total_loss(Tape& t, Var logits, const std::vector<int>& labels,
                     const std::vector<real>& mask, Var weights, Var img_proj, Var aud_proj,
                     real lambda, bool in_batch_negatives, real neg_margin) {
    LossParts parts;
    parts.cls = t.weighted_ce(logits, labels, weights, mask);
    parts.total = parts.cls;
    if (img_proj.ok() && aud_proj.ok()) {
        parts.cos = in_batch_negatives ? contrastive_loss(t, img_proj, aud_proj, neg_margin)
                                       : contrastive_loss(t, img_proj, aud_proj);
        if (lambda != 0) parts.total = t.add(parts.cls, t.scale(parts.cos, lambda));
    }
    return parts;
}

Classifier::Classifier(const ModelConfig& cfg, int64_t window, ParamStore& ps, Rng& rng,
                       const std::vector<real>& class_freq)
    : cfg_(cfg), n_classes_(acc::n_classes(cfg.dim)), window_(window) {
    cfg_.validate();
    const bool wants_image =
        cfg_.mode == Mode::UniV || cfg_.mode == Mode::Fusion || cfg_.mode == Mode::Contrast;
    const bool wants_audio =
        cfg_.mode == Mode::UniA || cfg_.mode == Mode::Fusion || cfg_.mode == Mode::Contrast;
    if (wants_image) vit_ = std::make_unique<VitEncoder>(cfg_.vit, ps, rng, "vit");
    if (wants_audio) {
        if (window_ < 1) throw UsageError("model: audio window length must be >= 1");
        audio_ = std::make_unique<AudioEncoder>(cfg_.audio, window_, ps, rng, "audio");
        if (cfg_.mode != Mode::Contrast)
            pool_ = std::make_unique<AttentionPool>(cfg_.audio.embed_dim, ps, rng, "pool");
    }

    int64_t head_in = 0;
    switch (cfg_.mode) {
        case Mode::UniV: head_in = cfg_.vit.embed_dim; break;
        case Mode::UniA: head_in = cfg_.audio.embed_dim; break;
        case Mode::Fusion: head_in = cfg_.vit.embed_dim + cfg_.audio.embed_dim; break;
        case Mode::Contrast: head_in = cfg_.proj_dim; break;
    }
    head_w_ = &weight(ps, "head.w", {head_in, n_classes_}, rng);
    head_b_ = &zeros_param(ps, "head.b", {n_classes_});
    clsw_a_ = &ps.make("clsw.a", inverse_frequency_logits(class_freq, n_classes_));

    if (cfg_.mode == Mode::Contrast) {
        const int64_t T = cfg_.contrast_len, D = cfg_.proj_dim;
        auto make_proj = [&](const std::string& p, int64_t axis_in, int64_t feat_in) {
            Projection pr;
            pr.map_w = &weight(ps, p + ".map.w", {axis_in, T}, rng);
            pr.map_b = &zeros_param(ps, p + ".map.b", {T});
            pr.w1 = &weight(ps, p + ".mlp1.w", {feat_in, D}, rng);
            pr.b1 = &zeros_param(ps, p + ".mlp1.b", {D});
            pr.w2 = &weight(ps, p + ".mlp2.w", {D, D}, rng);
            pr.b2 = &zeros_param(ps, p + ".mlp2.b", {D});
            return pr;
        };
        img_proj_ = make_proj("cproj.img", cfg_.vit.n_patches(), cfg_.vit.embed_dim);
        aud_proj_ = make_proj("cproj.aud", audio_->out_len(), cfg_.audio.embed_dim);
    }
}

Var Classifier::head(Tape& t, Var features) const {
    return t.linear(features, t.param(*head_w_), t.param(*head_b_));
}

Var Classifier::class_weights(Tape& t) const {
    return t.scale(t.softmax_last(t.param(*clsw_a_)), real(n_classes_));
}

Tensor Classifier::effective_class_weights() const {
    Tape t;
    return t.val(class_weights(t));
}

Var Classifier::audio_latents(Tape& t, const Tensor& windows, DropoutCtx& dc) const {
    if (windows.rank() != 2 || windows.shape[1] != window_)
        throw ShapeMismatch("audio windows: expected [B," + std::to_string(window_) + "], got " +
                            shape_str(windows.shape));
    if (cfg_.audio.frozen) return t.input(audio_->encode_detached(windows));
    return audio_->encode(t, windows, dc);
}

Var Classifier::project_image_tokens(Tape& t, Var patch_tokens) const {
    if (cfg_.mode != Mode::Contrast)
        throw WrongMode("image-token projection exists only in contrast mode");
    Var x = t.transpose_last2(patch_tokens);  // [B,Dv,N]
    x = t.linear(x, t.param(*img_proj_.map_w), t.param(*img_proj_.map_b));  // [B,Dv,T]
    x = t.transpose_last2(x);                                               // [B,T,Dv]
    x = t.gelu(t.linear(x, t.param(*img_proj_.w1), t.param(*img_proj_.b1)));
    return t.linear(x, t.param(*img_proj_.w2), t.param(*img_proj_.b2));  // [B,T,D]
}

Var Classifier::project_audio(Tape& t, Var latents) const {
    if (cfg_.mode != Mode::Contrast)
        throw WrongMode("audio projection exists only in contrast mode");
    Var x = t.transpose_last2(latents);  // [B,Da,Ta]
    x = t.linear(x, t.param(*aud_proj_.map_w), t.param(*aud_proj_.map_b));  // [B,Da,T]
    x = t.transpose_last2(x);                                               // [B,T,Da]
    x = t.gelu(t.linear(x, t.param(*aud_proj_.w1), t.param(*aud_proj_.b1)));
    return t.linear(x, t.param(*aud_proj_.w2), t.param(*aud_proj_.b2));  // [B,T,D]
}

ModelOutput Classifier::forward(Tape& t, const Tensor& images, const Tensor& windows,
                                DropoutCtx& dc) const {
    ModelOutput out;
    switch (cfg_.mode) {
        case Mode::UniV: {
            Var enc = vit_->encode(t, images, dc);
            out.logits = head(t, t.take_token(enc, 0));
            break;
        }
        case Mode::UniA: {
            Var lat = audio_latents(t, windows, dc);
            out.logits = head(t, pool_->pool(t, lat));
            break;
        }
        case Mode::Fusion: {
            Var enc = vit_->encode(t, images, dc);
            Var lat = audio_latents(t, windows, dc);
            Var fused = t.concat_cols(t.take_token(enc, 0), pool_->pool(t, lat));
            out.logits = head(t, fused);
            break;
        }
        case Mode::Contrast: {
            Var enc = vit_->encode(t, images, dc);
            Var patches = t.slice_tokens(enc, 1, cfg_.vit.n_patches());
            out.img_proj = project_image_tokens(t, patches);
            out.logits = head(t, t.mean_tokens(out.img_proj));
            if (windows.numel() > 0) out.aud_proj = project_audio(t, audio_latents(t, windows, dc));
            break;
        }
    }
    return out;
}

LossParts Classifier::loss(Tape& t, const ModelOutput& out, const std::vector<int>& labels,
                           const std::vector<real>& mask) const {
    return total_loss(t, out.logits, labels, mask, class_weights(t), out.img_proj, out.aud_proj,
                      cfg_.lambda_cos, cfg_.in_batch_negatives, cfg_.neg_margin);
}

Tensor Classifier::predict(const Tensor& images, const Tensor& windows) const {
    Tape t;
    DropoutCtx dc;
    ModelOutput out = forward(t, images, windows, dc);
    return t.val(out.logits);
}

Tensor Classifier::predict_contrastive(const Tensor& images) const {
    if (cfg_.mode != Mode::Contrast)
        throw WrongMode("image-only inference requires a contrast-mode model, got " +
                        mode_name(cfg_.mode));
    return predict(images, {});
}

}  // namespace acc

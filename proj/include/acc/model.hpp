#pragma once

#include <memory>
#include <string>
#include <vector>

#include "acc/encoders.hpp"
#include "acc/param_store.hpp"
#include "acc/phonology.hpp"
#include "acc/rng.hpp"
#include "acc/tape.hpp"

namespace acc {

// The four classifier wirings. UniV: image class token -> head. UniA: pooled
// audio latents -> head. Fusion: both, concatenated. Contrast: image patch
// tokens and audio latents are each projected to a shared [T,D] space; the
// head reads the time-averaged image projection, so inference needs no audio.
enum class Mode { UniV, UniA, Fusion, Contrast };

const std::string& mode_name(Mode m);
Mode mode_from_name(const std::string& name);  // throws ParseError

struct ModelConfig {
    Mode mode = Mode::UniV;
    Dimension dim = Dimension::Manner;
    real lambda_cos = real(0.1);  // weight of the alignment term in the total loss
    int64_t contrast_len = 8;     // T: shared temporal length of both projections
    int64_t proj_dim = 64;        // D: shared feature width of both projections
    bool in_batch_negatives = false;
    real neg_margin = real(0);
    VitConfig vit;
    AudioConfig audio;

    void validate() const;  // throws UsageError
};

// Logit vector for a class-frequency vector: log of the normalized inverse
// frequencies. Entries <= 0 are treated as the smallest positive entry so a
// class missing from the sample cannot blow up the prior; an all-zero or
// empty vector yields a uniform prior.
Tensor inverse_frequency_logits(const std::vector<real>& freq, int n_classes);

struct ModelOutput {
    Var logits;    // [B, C]
    Var img_proj;  // [B, T, D]; Contrast mode only
    Var aud_proj;  // [B, T, D]; Contrast mode with audio present
};

struct LossParts {
    Var total;
    Var cls;
    Var cos;  // absent unless a contrastive term was added
};

// Mean over pairs of (1 - cos) between matching rows of the flattened
// sequences, plus an optional hinge on mismatched pairs.
Var contrastive_loss(Tape& t, Var img, Var aud);
Var contrastive_loss(Tape& t, Var img, Var aud, real margin);

// Weighted cross entropy plus lambda times the contrastive term when both
// projections are given; components are returned alongside the total.
LossParts total_loss(Tape& t, Var logits, const std::vector<int>& labels,
                     const std::vector<real>& mask, Var weights, Var img_proj, Var aud_proj,
                     real lambda, bool in_batch_negatives = false, real neg_margin = real(0));

class Classifier {
  public:
    // class_freq gives per-class occurrence counts or fractions (any scale)
    // used to initialize the learnable class weights; empty means uniform.
    // window is the audio window length in samples; it may be 0 for UniV.
    Classifier(const ModelConfig& cfg, int64_t window, ParamStore& ps, Rng& rng,
               const std::vector<real>& class_freq = {});

    const ModelConfig& config() const { return cfg_; }
    int n_classes() const { return n_classes_; }
    int64_t window() const { return window_; }

    // images [B,C,S,S]; windows [B,W]. windows may be empty ({} tensor) in
    // UniV always and in Contrast mode when no alignment term is wanted.
    ModelOutput forward(Tape& t, const Tensor& images, const Tensor& windows,
                        DropoutCtx& dc) const;

    // Current effective class weights on the tape: C * softmax(a).
    Var class_weights(Tape& t) const;
    Tensor effective_class_weights() const;

    LossParts loss(Tape& t, const ModelOutput& out, const std::vector<int>& labels,
                   const std::vector<real>& mask) const;

    // Eval-mode logits on a private tape.
    Tensor predict(const Tensor& images, const Tensor& windows = {}) const;
    // Image-only inference path of Contrast mode; throws WrongMode otherwise.
    Tensor predict_contrastive(const Tensor& images) const;

    // [N,Dv] token axis mapped N->T, then a two-layer MLP per time step.
    Var project_image_tokens(Tape& t, Var patch_tokens) const;
    Var project_audio(Tape& t, Var latents) const;

  private:
    Var audio_latents(Tape& t, const Tensor& windows, DropoutCtx& dc) const;
    Var head(Tape& t, Var features) const;

    ModelConfig cfg_;
    int n_classes_;
    int64_t window_;
    std::unique_ptr<VitEncoder> vit_;
    std::unique_ptr<AudioEncoder> audio_;
    std::unique_ptr<AttentionPool> pool_;
    Parameter *head_w_ = nullptr, *head_b_ = nullptr;
    Parameter* clsw_a_ = nullptr;
    struct Projection {
        Parameter *map_w, *map_b;    // token/time axis -> T
        Parameter *w1, *b1, *w2, *b2;  // features -> D
    };
    Projection img_proj_{}, aud_proj_{};
};

}  // namespace acc

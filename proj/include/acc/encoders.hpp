#pragma once

#include <string>
#include <vector>

#include "acc/param_store.hpp"
#include "acc/rng.hpp"
#include "acc/tape.hpp"

namespace acc {

struct VitConfig {
    int64_t image_size = 64;
    int64_t patch_size = 16;
    int64_t channels = 1;
    int64_t embed_dim = 64;
    int64_t depth = 2;
    int64_t heads = 4;
    int64_t mlp_dim = 128;
    real dropout = real(0.1);
    bool sinusoidal_pos = false;  // default learned positional embeddings

    int64_t n_patches() const {
        const int64_t side = image_size / patch_size;
        return side * side;
    }
    void validate() const;  // throws UsageError
};

struct ConvLayerSpec {
    int64_t channels = 0;
    int64_t kernel = 0;
    int64_t stride = 0;
};

struct AudioConfig {
    std::vector<ConvLayerSpec> conv = {{32, 10, 5}, {64, 8, 4}};
    int64_t embed_dim = 64;  // must equal the last conv layer's channels
    int64_t depth = 2;
    int64_t heads = 4;
    int64_t mlp_dim = 128;
    real dropout = real(0.1);
    bool frozen = true;

    void validate() const;                 // throws UsageError
    int64_t out_len(int64_t window) const;  // frames produced by the conv stack
};

// Pre-norm transformer block: x += dropout(attn(LN(x))); x += dropout(mlp(LN(x))).
class TransformerBlock {
  public:
    TransformerBlock(int64_t dim, int64_t heads, int64_t mlp_dim, real dropout, ParamStore& ps,
                     Rng& rng, const std::string& prefix, bool frozen);
    Var forward(Tape& t, Var x, DropoutCtx& dc) const;  // [B,T,D] -> [B,T,D]

  private:
    int64_t dim_;
    int64_t heads_;
    real dropout_;
    Parameter *ln1_g_, *ln1_b_, *wq_, *bq_, *wk_, *bk_, *wv_, *bv_, *wo_, *bo_;
    Parameter *ln2_g_, *ln2_b_, *w1_, *b1_, *w2_, *b2_;
};

// Patch-embedding vision transformer. Output row 0 per batch item is the
// class-token state; rows 1..N are patch tokens in row-major patch order.
class VitEncoder {
  public:
    VitEncoder(const VitConfig& cfg, ParamStore& ps, Rng& rng, const std::string& prefix = "vit");
    Var encode(Tape& t, Var images, DropoutCtx& dc) const;  // [B,C,H,W] -> [B,N+1,D]
    Var encode(Tape& t, const Tensor& images, DropoutCtx& dc) const;
    const VitConfig& config() const { return cfg_; }

  private:
    VitConfig cfg_;
    Parameter *patch_w_, *patch_b_, *cls_, *pos_ = nullptr, *out_g_, *out_b_;
    Tensor sin_pos_;
    std::vector<TransformerBlock> blocks_;
};

// Strided conv feature extractor (layer norm + GELU per layer) followed by
// transformer context blocks. Frozen by default: parameters are created with
// the frozen flag so the optimizer never updates them.
class AudioEncoder {
  public:
    AudioEncoder(const AudioConfig& cfg, int64_t window, ParamStore& ps, Rng& rng,
                 const std::string& prefix = "audio");
    int64_t out_len() const { return t_out_; }
    int64_t window() const { return window_; }
    bool frozen() const { return cfg_.frozen; }
    const AudioConfig& config() const { return cfg_; }

    Var encode(Tape& t, Var windows, DropoutCtx& dc) const;  // [B,W] -> [B,T_a,D]
    Var encode(Tape& t, const Tensor& windows, DropoutCtx& dc) const;
    // Eval-mode forward on a private tape; use for the frozen path so the
    // training tape never sees encoder internals.
    Tensor encode_detached(const Tensor& windows) const;

  private:
    AudioConfig cfg_;
    int64_t window_;
    int64_t t_out_;
    struct ConvLayer {
        Parameter *w, *b, *ln_g, *ln_b;
        int64_t stride;
    };
    std::vector<ConvLayer> convs_;
    Parameter *pos_, *out_g_, *out_b_;
    std::vector<TransformerBlock> blocks_;
};

// Learned attention pooling: scores q . tanh(M h_t), softmax over time,
// convex combination of the inputs.
class AttentionPool {
  public:
    AttentionPool(int64_t dim, ParamStore& ps, Rng& rng, const std::string& prefix = "pool");
    Var pool(Tape& t, Var seq) const;  // [B,T,D] -> [B,D]

  private:
    int64_t dim_;
    Parameter *m_, *q_;
};

// Standard interleaved sin/cos table, [n, d].
Tensor sinusoidal_positions(int64_t n, int64_t d);

}  // namespace acc

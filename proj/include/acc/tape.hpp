#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "acc/common.hpp"
#include "acc/param_store.hpp"
#include "acc/tensor.hpp"

namespace acc {

// Handle to a value recorded on a Tape. A default-constructed Var is the
// "absent" sentinel (used for optional bias arguments).
struct Var {
    int id = -1;
    bool ok() const { return id >= 0; }
};

// Deterministic dropout keying. Each dropout site consumes one counter value
// per forward pass, so masks depend only on (seed, step, site order), never
// on thread count or allocation addresses.
struct DropoutCtx {
    uint64_t seed = 0;
    uint64_t step = 0;
    bool training = false;
    uint64_t counter = 0;
};

// Reverse-mode tape. Ops record a closure that propagates gradients from the
// output node into the input nodes; backward() replays closures in reverse
// creation order, which is a valid topological order because inputs always
// precede outputs. Scalars have shape {1}.
//
// A tape is single-use: recording after backward(), or a second backward(),
// throws StaleTape. Parameter gradients accumulate into Parameter::grad, so
// independent tapes can contribute to the same step.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Tensor t);
    Var param(Parameter& p);

    const Tensor& val(Var v) const;
    const Tensor& grad(Var v) const;  // valid after backward()

    // Elementwise and broadcasting arithmetic.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, real s);
    // b's shape must be a suffix of a's shape; b is tiled over the leading axes.
    Var add_bcast(Var a, Var b);

    // Linear algebra.
    Var matmul(Var a, Var b);                 // [m,k] x [k,n]
    Var linear(Var x, Var w, Var b = {});     // [...,k] x [k,n] (+ bias [n])
    Var bmm(Var a, Var b);                    // [G,m,k] x [G,k,n]
    Var bmm_nt(Var a, Var b);                 // [G,m,k] x [G,n,k]^T
    Var conv1d(Var x, Var w, Var b, int64_t stride);  // [B,Cin,L], [Cout,Cin,K]

    // Shape plumbing.
    Var reshape(Var a, Shape s);
    Var transpose_last2(Var a);
    Var split_heads(Var x, int64_t heads);    // [B,T,D] -> [B*H,T,D/H]
    Var merge_heads(Var x, int64_t heads);    // [B*H,T,d] -> [B,T,H*d]
    Var take_token(Var x, int64_t index);     // [B,T,D] -> [B,D]
    Var slice_tokens(Var x, int64_t start, int64_t count);  // [B,T,D] -> [B,count,D]
    Var prepend_token(Var x, Var t);          // [B,T,D] + [D] -> [B,T+1,D]
    Var concat_cols(Var a, Var b);            // [B,p] + [B,q] -> [B,p+q]
    Var patchify(Var img, int64_t patch);     // [B,C,H,W] -> [B,N,C*P*P]

    // Nonlinearities and normalization.
    Var softmax_last(Var x);
    Var layer_norm(Var x, Var gain, Var bias, real eps);
    Var gelu(Var x);
    Var tanh(Var x);
    Var relu(Var x);
    Var dropout(Var x, real rate, DropoutCtx& ctx);

    // Reductions.
    Var mean_tokens(Var x);  // [B,T,D] -> [B,D]
    Var mean_all(Var x);     // -> {1}
    Var sum_all(Var x);      // -> {1}

    // Losses. Rows of a/b are compared pairwise; see model.hpp for usage.
    Var cosine_loss_positive(Var a, Var b);               // mean_i (1 - cos(a_i, b_i))
    Var cosine_loss_negative(Var a, Var b, real margin);  // mean_{i!=j} max(0, cos(a_i,b_j)-m)
    // Masked, class-weighted cross entropy over logits [B,C]. mask entries
    // are 0 or 1; a fully masked batch throws EmptyBatch.
    Var weighted_ce(Var logits, const std::vector<int>& labels, Var weights,
                    const std::vector<real>& mask);

    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> back;
    };

    Var push(Tensor val, std::function<void()> back = {});
    Node& node(Var v);
    const Node& node(Var v) const;
    Tensor& g(Var v) { return node(v).grad; }
    void check_open() const;

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, int>> param_nodes_;
    std::unordered_map<const Parameter*, int> param_index_;
    bool finished_ = false;
};

}  // namespace acc

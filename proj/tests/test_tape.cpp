#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "acc/param_store.hpp"
#include "acc/rng.hpp"
#include "acc/tape.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace acc;
using acc::testutil::check_gradients;

namespace {

// Values bounded away from zero so relu and the finite-difference step never
// straddle a kink.
Tensor offset_randn(Rng& r, Shape s) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& x : t.data) {
        const real z = r.normal();
        x = z >= 0 ? z + real(0.2) : z - real(0.2);
    }
    return t;
}

}  // namespace

TEST_CASE("gradcheck elementwise ops") {
    Rng r(11);
    ParamStore ps;
    ps.make("a", offset_randn(r, {3, 4}));
    ps.make("b", offset_randn(r, {3, 4}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        Var a = t.param(ps.at("a"));
        Var b = t.param(ps.at("b"));
        Var x = t.mul(t.add(a, b), t.sub(a, t.scale(b, real(0.5))));
        return t.mean_all(x);
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("gradcheck add_bcast") {
    Rng r(12);
    ParamStore ps;
    ps.make("x", offset_randn(r, {2, 3, 4}));
    ps.make("pos", offset_randn(r, {3, 4}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        return t.mean_all(t.gelu(t.add_bcast(t.param(ps.at("x")), t.param(ps.at("pos")))));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("gradcheck matmul and linear") {
    Rng r(13);
    ParamStore ps;
    ps.make("x", offset_randn(r, {4, 3}));
    ps.make("w", offset_randn(r, {3, 5}));
    ps.make("b", offset_randn(r, {5}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        Var y = t.linear(t.param(ps.at("x")), t.param(ps.at("w")), t.param(ps.at("b")));
        return t.mean_all(t.tanh(y));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());

    auto rep2 = check_gradients(ps, [&](Tape& t) {
        return t.sum_all(t.matmul(t.param(ps.at("x")), t.param(ps.at("w"))));
    });
    INFO(rep2.worst_at);
    CHECK(rep2.ok());
}

TEST_CASE("linear on rank 3 input equals flattened matmul") {
    Rng r(14);
    ParamStore ps;
    Parameter& x = ps.make("x", offset_randn(r, {2, 3, 4}));
    Parameter& w = ps.make("w", offset_randn(r, {4, 5}));
    Parameter& b = ps.make("b", offset_randn(r, {5}));

    Tape t;
    Var y3 = t.linear(t.param(x), t.param(w), t.param(b));
    CHECK(t.val(y3).shape == Shape{2, 3, 5});
    Var y2 = t.linear(t.reshape(t.param(x), {6, 4}), t.param(w), t.param(b));
    const Tensor& a3 = t.val(y3);
    const Tensor& a2 = t.val(y2);
    for (int64_t i = 0; i < a3.numel(); ++i) CHECK(a3.data[i] == a2.data[i]);

    auto rep = check_gradients(ps, [&](Tape& tt) {
        return tt.mean_all(
            tt.linear(tt.param(ps.at("x")), tt.param(ps.at("w")), tt.param(ps.at("b"))));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("gradcheck bmm variants") {
    Rng r(15);
    ParamStore ps;
    ps.make("a", offset_randn(r, {3, 2, 4}));
    ps.make("b", offset_randn(r, {3, 4, 5}));
    ps.make("c", offset_randn(r, {3, 5, 4}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        return t.mean_all(t.bmm(t.param(ps.at("a")), t.param(ps.at("b"))));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
    auto rep2 = check_gradients(ps, [&](Tape& t) {
        return t.mean_all(t.bmm_nt(t.param(ps.at("a")), t.param(ps.at("c"))));
    });
    INFO(rep2.worst_at);
    CHECK(rep2.ok());
}

TEST_CASE("bmm with one batch equals matmul") {
    Rng r(16);
    ParamStore ps;
    Parameter& a = ps.make("a", offset_randn(r, {2, 3}));
    Parameter& b = ps.make("b", offset_randn(r, {3, 4}));
    Tape t;
    Var m = t.matmul(t.param(a), t.param(b));
    Var bm = t.bmm(t.reshape(t.param(a), {1, 2, 3}), t.reshape(t.param(b), {1, 3, 4}));
    for (int64_t i = 0; i < 8; ++i) CHECK(t.val(m).data[i] == t.val(bm).data[i]);
}

TEST_CASE("gradcheck conv1d") {
    Rng r(17);
    ParamStore ps;
    ps.make("x", offset_randn(r, {2, 3, 11}));
    ps.make("w", offset_randn(r, {4, 3, 3}));
    ps.make("b", offset_randn(r, {4}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        Var y = t.conv1d(t.param(ps.at("x")), t.param(ps.at("w")), t.param(ps.at("b")), 2);
        return t.mean_all(t.gelu(y));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("gradcheck shape plumbing") {
    Rng r(18);
    ParamStore ps;
    ps.make("x", offset_randn(r, {2, 3, 8}));
    ps.make("cls", offset_randn(r, {8}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        Var x = t.param(ps.at("x"));
        Var with_cls = t.prepend_token(x, t.param(ps.at("cls")));  // [2,4,8]
        Var h = t.merge_heads(t.split_heads(with_cls, 2), 2);
        Var tt = t.transpose_last2(t.transpose_last2(h));
        Var cls = t.take_token(tt, 0);                      // [2,8]
        Var rest = t.mean_tokens(t.slice_tokens(tt, 1, 3)); // [2,8]
        return t.mean_all(t.concat_cols(cls, rest));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("split_heads layout") {
    Tape t;
    // [1,2,4] with 2 heads -> [2,2,2]; head h takes columns [h*2, h*2+2).
    Var x = t.input(Tensor::from({1, 2, 4}, {0, 1, 2, 3, 10, 11, 12, 13}));
    Var s = t.split_heads(x, 2);
    const Tensor& v = t.val(s);
    CHECK(v.shape == Shape{2, 2, 2});
    CHECK(v.at(0, 0, 0) == 0);
    CHECK(v.at(0, 0, 1) == 1);
    CHECK(v.at(0, 1, 0) == 10);
    CHECK(v.at(1, 0, 0) == 2);
    CHECK(v.at(1, 1, 1) == 13);
    Var m = t.merge_heads(s, 2);
    for (int64_t i = 0; i < 8; ++i) CHECK(t.val(m).data[i] == t.val(x).data[i]);
}

TEST_CASE("patchify layout and gradcheck") {
    Tape t;
    // 1x1x4x4 image, patch 2: patches in row-major grid order, pixels in
    // (channel, y, x) order inside a patch.
    Tensor img = Tensor::zeros({1, 1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) img.data[i] = real(i);
    Var p = t.patchify(t.input(img), 2);
    const Tensor& v = t.val(p);
    CHECK(v.shape == Shape{1, 4, 4});
    CHECK(v.at(0, 0, 0) == 0);  // patch (0,0) = pixels {0,1,4,5}
    CHECK(v.at(0, 0, 1) == 1);
    CHECK(v.at(0, 0, 2) == 4);
    CHECK(v.at(0, 0, 3) == 5);
    CHECK(v.at(0, 1, 0) == 2);  // patch (0,1) starts at pixel 2
    CHECK(v.at(0, 3, 3) == 15);

    Rng r(19);
    ParamStore ps;
    ps.make("img", offset_randn(r, {2, 2, 4, 4}));
    auto rep = check_gradients(ps, [&](Tape& tt) {
        return tt.mean_all(tt.gelu(tt.patchify(tt.param(ps.at("img")), 2)));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("gradcheck softmax layer_norm and activations") {
    Rng r(20);
    ParamStore ps;
    ps.make("x", offset_randn(r, {3, 6}));
    ps.make("g", offset_randn(r, {6}));
    ps.make("b", offset_randn(r, {6}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        Var h = t.layer_norm(t.param(ps.at("x")), t.param(ps.at("g")), t.param(ps.at("b")),
                             real(1e-5));
        return t.mean_all(t.softmax_last(h));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());

    auto rep2 = check_gradients(ps, [&](Tape& t) {
        Var x = t.param(ps.at("x"));
        return t.mean_all(t.add(t.relu(x), t.add(t.gelu(x), t.tanh(x))));
    });
    INFO(rep2.worst_at);
    CHECK(rep2.ok());
}

TEST_CASE("gradcheck attention shaped graph") {
    // Mirrors one attention head end to end: projections, scores, weighted sum.
    Rng r(21);
    ParamStore ps;
    ps.make("x", offset_randn(r, {2, 3, 4}));
    ps.make("wq", offset_randn(r, {4, 4}));
    ps.make("wk", offset_randn(r, {4, 4}));
    ps.make("wv", offset_randn(r, {4, 4}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        Var x = t.param(ps.at("x"));
        Var q = t.split_heads(t.linear(x, t.param(ps.at("wq"))), 2);
        Var k = t.split_heads(t.linear(x, t.param(ps.at("wk"))), 2);
        Var v = t.split_heads(t.linear(x, t.param(ps.at("wv"))), 2);
        Var att = t.softmax_last(t.scale(t.bmm_nt(q, k), 1 / std::sqrt(real(2))));
        return t.mean_all(t.merge_heads(t.bmm(att, v), 2));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("dropout determinism and identity in eval") {
    Rng r(22);
    Tensor x = offset_randn(r, {4, 8});

    DropoutCtx eval_ctx{7, 3, false, 0};
    Tape t1;
    Var in1 = t1.input(x);
    Var out1 = t1.dropout(in1, real(0.5), eval_ctx);
    CHECK(out1.id == in1.id);  // eval mode is the identity

    auto run = [&](uint64_t seed, uint64_t step) {
        DropoutCtx ctx{seed, step, true, 0};
        Tape t;
        return t.val(t.dropout(t.input(x), real(0.5), ctx));
    };
    Tensor a = run(7, 3), b = run(7, 3), c = run(7, 4);
    bool same_ab = true, same_ac = true;
    for (int64_t i = 0; i < a.numel(); ++i) {
        same_ab = same_ab && a.data[i] == b.data[i];
        same_ac = same_ac && a.data[i] == c.data[i];
    }
    CHECK(same_ab);
    CHECK(!same_ac);

    // Kept units are scaled by 1/keep.
    int kept = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (a.data[i] != 0) {
            ++kept;
            CHECK(a.data[i] == doctest::Approx(2 * x.data[i]));
        }
    }
    CHECK(kept > 0);
    CHECK(kept < a.numel());

    ParamStore ps;
    ps.make("x", offset_randn(r, {3, 5}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        DropoutCtx ctx{11, 0, true, 0};
        return t.mean_all(t.dropout(t.param(ps.at("x")), real(0.3), ctx));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("cosine loss values") {
    Tape t;
    Var a = t.input(Tensor::from({2, 2}, {1, 0, 0, 2}));
    Var same = t.cosine_loss_positive(a, a);
    CHECK(t.val(same).data[0] == doctest::Approx(0.0));

    Tape t2;
    Var u = t2.input(Tensor::from({1, 2}, {1, 0}));
    Var v = t2.input(Tensor::from({1, 2}, {0, 1}));
    CHECK(t2.val(t2.cosine_loss_positive(u, v)).data[0] == doctest::Approx(1.0));

    Tape t3;
    Var p = t3.input(Tensor::from({1, 2}, {1, 1}));
    Var q = t3.input(Tensor::from({1, 2}, {-1, -1}));
    CHECK(t3.val(t3.cosine_loss_positive(p, q)).data[0] == doctest::Approx(2.0));

    // Two aligned rows: every cross pair has cosine 1, margin 0.25 leaves 0.75.
    Tape t4;
    Var m = t4.input(Tensor::from({2, 2}, {1, 0, 2, 0}));
    CHECK(t4.val(t4.cosine_loss_negative(m, m, real(0.25))).data[0] == doctest::Approx(0.75));

    // A single row has no negative pairs.
    Tape t5;
    Var s = t5.input(Tensor::from({1, 2}, {1, 0}));
    CHECK(t5.val(t5.cosine_loss_negative(s, s, 0)).data[0] == 0.0);
}

TEST_CASE("gradcheck cosine losses") {
    Rng r(23);
    ParamStore ps;
    ps.make("a", offset_randn(r, {3, 5}));
    ps.make("b", offset_randn(r, {3, 5}));
    auto rep = check_gradients(ps, [&](Tape& t) {
        return t.cosine_loss_positive(t.param(ps.at("a")), t.param(ps.at("b")));
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());

    // Margin of -2 keeps every pair active, so the hinge is smooth everywhere.
    auto rep2 = check_gradients(ps, [&](Tape& t) {
        return t.cosine_loss_negative(t.param(ps.at("a")), t.param(ps.at("b")), -2);
    });
    INFO(rep2.worst_at);
    CHECK(rep2.ok());
}

TEST_CASE("weighted cross entropy oracle") {
    Tape t;
    Tensor logits = Tensor::from({2, 2}, {0, 0, 0, std::log(real(3))});
    Var z = t.input(logits);
    Var w = t.input(Tensor::from({2}, {1, 2}));

    // Row 0: p = [1/2, 1/2], label 0, loss ln 2, weight 1.
    // Row 1: p = [1/4, 3/4], label 1, loss ln(4/3), weight 2.
    // Total: (ln 2 + 2 ln(4/3)) / 3.
    Var loss = t.weighted_ce(z, {0, 1}, w, {1, 1});
    const real expected = (std::log(real(2)) + 2 * std::log(real(4) / 3)) / 3;
    CHECK(t.val(loss).data[0] == doctest::Approx(expected).epsilon(1e-12));

    Tape t2;
    Var z2 = t2.input(logits);
    Var w2 = t2.input(Tensor::from({2}, {1, 2}));
    Var masked = t2.weighted_ce(z2, {0, 1}, w2, {1, 0});
    CHECK(t2.val(masked).data[0] == doctest::Approx(std::log(real(2))).epsilon(1e-12));

    Tape t3;
    Var z3 = t3.input(logits);
    Var w3 = t3.input(Tensor::from({2}, {1, 2}));
    CHECK_THROWS_AS(t3.weighted_ce(z3, {0, 1}, w3, {0, 0}), EmptyBatch);

    // The normalization makes the loss invariant to scaling all weights.
    Tape ts;
    Var zs = ts.input(logits);
    Var w1x = ts.input(Tensor::from({2}, {1, 2}));
    Var w5x = ts.input(Tensor::from({2}, {5, 10}));
    CHECK(ts.val(ts.weighted_ce(zs, {0, 1}, w1x, {1, 1})).data[0] ==
          doctest::Approx(ts.val(ts.weighted_ce(zs, {0, 1}, w5x, {1, 1})).data[0])
              .epsilon(1e-12));

    Tape t4;
    Var z4 = t4.input(logits);
    Var w4 = t4.input(Tensor::from({2}, {1, 2}));
    CHECK_THROWS_AS(t4.weighted_ce(z4, {0}, w4, {1, 1}), LengthMismatch);
    CHECK_THROWS_AS(t4.weighted_ce(z4, {0, 5}, w4, {1, 1}), IndexOutOfRange);
}

TEST_CASE("gradcheck weighted cross entropy with reparameterized weights") {
    Rng r(24);
    ParamStore ps;
    ps.make("logits", offset_randn(r, {5, 4}));
    ps.make("wlog", offset_randn(r, {4}));
    const std::vector<int> labels = {0, 2, 1, 3, 2};
    const std::vector<real> mask = {1, 1, 0, 1, 1};
    auto rep = check_gradients(ps, [&](Tape& t) {
        // weights = C * softmax(wlog), the reparameterization used for
        // learnable class weights.
        Var w = t.scale(t.softmax_last(t.param(ps.at("wlog"))), 4);
        return t.weighted_ce(t.param(ps.at("logits")), labels, w, mask);
    });
    INFO(rep.worst_at);
    CHECK(rep.ok());
}

TEST_CASE("tape reuse is rejected") {
    Tape t;
    Var x = t.input(Tensor::from({2}, {1, 2}));
    Var loss = t.mean_all(x);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), StaleTape);
    CHECK_THROWS_AS(t.mean_all(x), StaleTape);

    Tape t2;
    Var y = t2.input(Tensor::from({2}, {1, 2}));
    CHECK_THROWS_AS(t2.backward(y), NotScalar);
}

TEST_CASE("parameter appears once per tape and accumulates across tapes") {
    Rng r(25);
    ParamStore ps;
    Parameter& a = ps.make("a", Tensor::from({2}, {1, 2}));

    ps.zero_grads();
    {
        Tape t;
        Var v1 = t.param(a);
        Var v2 = t.param(a);
        CHECK(v1.id == v2.id);
        t.backward(t.sum_all(t.add(v1, v2)));  // d/da (2 * sum a) = 2
    }
    CHECK(a.grad.data[0] == 2);
    CHECK(a.grad.data[1] == 2);

    {
        Tape t;
        t.backward(t.sum_all(t.param(a)));
    }
    CHECK(a.grad.data[0] == 3);  // accumulated, not reset

    ps.zero_grads();
    CHECK(a.grad.data[0] == 0);
}

TEST_CASE("frozen parameters still get gradients on the tape") {
    // Freezing is an optimizer concern; the tape records gradients anyway.
    ParamStore ps;
    Parameter& a = ps.make("a", Tensor::from({2}, {1, 2}), true);
    CHECK(a.frozen);
    Tape t;
    t.backward(t.sum_all(t.param(a)));
    CHECK(a.grad.data[0] == 1);
}

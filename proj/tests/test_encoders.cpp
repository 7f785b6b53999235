#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "acc/checkpoint.hpp"
#include "acc/encoders.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "testutil.hpp"

using namespace acc;

namespace {

VitConfig tiny_vit() {
    VitConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.channels = 1;
    c.embed_dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.mlp_dim = 16;
    c.dropout = real(0.1);
    return c;
}

AudioConfig tiny_audio(bool frozen) {
    AudioConfig c;
    c.conv = {{4, 6, 3}, {8, 4, 2}};
    c.embed_dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.mlp_dim = 16;
    c.dropout = real(0.1);
    c.frozen = frozen;
    return c;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
    VitConfig v = tiny_vit();
    v.image_size = 10;  // not divisible by patch 4
    CHECK_THROWS_AS(v.validate(), UsageError);
    v = tiny_vit();
    v.heads = 3;
    CHECK_THROWS_AS(v.validate(), UsageError);
    v = tiny_vit();
    v.dropout = real(1);
    CHECK_THROWS_AS(v.validate(), UsageError);

    AudioConfig a = tiny_audio(true);
    a.embed_dim = 16;  // last conv has 8 channels
    CHECK_THROWS_AS(a.validate(), UsageError);
    a = tiny_audio(true);
    a.conv.clear();
    CHECK_THROWS_AS(a.validate(), UsageError);

    CHECK(tiny_vit().n_patches() == 4);
    VitConfig paper;
    paper.image_size = 224;
    paper.patch_size = 16;
    CHECK(paper.n_patches() == 196);
    paper.image_size = 128;
    CHECK(paper.n_patches() == 64);
}

TEST_CASE("vit output shape and eval determinism") {
    ParamStore ps;
    Rng rng(5);
    VitEncoder vit(tiny_vit(), ps, rng);

    Tensor images = Tensor::randn({3, 1, 8, 8}, rng);
    DropoutCtx eval_ctx;
    Tape t1;
    Var o1 = vit.encode(t1, images, eval_ctx);
    CHECK((t1.val(o1).shape == Shape{3, 5, 8}));

    DropoutCtx eval_ctx2;
    Tape t2;
    Var o2 = vit.encode(t2, images, eval_ctx2);
    CHECK(t1.val(o1).data == t2.val(o2).data);

    // identical frames within a batch produce identical token states
    Tensor pair = Tensor::zeros({2, 1, 8, 8});
    for (int64_t i = 0; i < 64; ++i)
        pair.data[static_cast<size_t>(i)] = pair.data[static_cast<size_t>(64 + i)] =
            images.data[static_cast<size_t>(i)];
    DropoutCtx dc3;
    Tape t3;
    const Tensor& out = t3.val(vit.encode(t3, pair, dc3));
    for (int64_t i = 0; i < 5 * 8; ++i)
        CHECK(out.data[static_cast<size_t>(i)] == out.data[static_cast<size_t>(5 * 8 + i)]);

    Tensor bad = Tensor::zeros({2, 1, 8, 4});
    DropoutCtx dc4;
    Tape t4;
    CHECK_THROWS_AS(vit.encode(t4, bad, dc4), ShapeMismatch);
}

TEST_CASE("positional encodings break patch permutation symmetry") {
    ParamStore ps;
    Rng rng(6);
    VitEncoder vit(tiny_vit(), ps, rng);

    Tensor img = Tensor::randn({1, 1, 8, 8}, rng);
    // swap the top-left and bottom-right 4x4 patches
    Tensor swapped = img;
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) {
            const size_t a = static_cast<size_t>(y * 8 + x);
            const size_t b = static_cast<size_t>((y + 4) * 8 + x + 4);
            std::swap(swapped.data[a], swapped.data[b]);
        }

    DropoutCtx dc;
    Tape t;
    const Tensor& base = t.val(vit.encode(t, img, dc));
    DropoutCtx dc2;
    Tape t2;
    const Tensor& perm = t2.val(vit.encode(t2, swapped, dc2));
    real max_diff = 0;
    for (size_t i = 0; i < base.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(base.data[i] - perm.data[i]));
    CHECK(max_diff > real(1e-6));
}

TEST_CASE("sinusoidal positions are a drop-in alternative") {
    Tensor pe = sinusoidal_positions(5, 8);
    CHECK((pe.shape == Shape{5, 8}));
    CHECK(pe.data[0] == real(0));                 // sin(0)
    CHECK(pe.data[1] == real(1));                 // cos(0)
    CHECK(std::abs(pe.at(1, 0) - real(std::sin(1.0))) < real(1e-12));

    VitConfig cfg = tiny_vit();
    cfg.sinusoidal_pos = true;
    ParamStore ps;
    Rng rng(7);
    VitEncoder vit(cfg, ps, rng);
    for (size_t i = 0; i < ps.size(); ++i) CHECK(ps[i].name.find(".pos") == std::string::npos);

    Tensor img = Tensor::randn({1, 1, 8, 8}, rng);
    DropoutCtx dc;
    Tape t;
    CHECK((t.val(vit.encode(t, img, dc)).shape == Shape{1, 5, 8}));
}

TEST_CASE("audio conv arithmetic matches the stated formula") {
    AudioConfig desk;  // defaults: strides 5,4 and kernels 10,8
    CHECK(desk.out_len(1067) == 52);
    CHECK(desk.out_len(45) == 1);  // smallest window both conv layers accept
    CHECK(desk.out_len(44) == 0);

    int64_t prev = 0;
    for (int64_t w = 64; w <= 2000; w += 31) {
        const int64_t t = desk.out_len(w);
        CHECK(t >= prev);  // monotone in the window length
        prev = t;
    }
}

TEST_CASE("audio encoder output shape, determinism, and zero-input health") {
    ParamStore ps;
    Rng rng(8);
    AudioEncoder enc(tiny_audio(true), 40, ps, rng);
    CHECK(enc.out_len() == 5);  // (40-6)/3+1 = 12, (12-4)/2+1 = 5

    Tensor win = Tensor::randn({2, 40}, rng, 0.1);
    DropoutCtx dc;
    Tape t;
    Var out = enc.encode(t, win, dc);
    CHECK((t.val(out).shape == Shape{2, 5, 8}));

    Tensor zeros = Tensor::zeros({1, 40});
    Tensor silent = enc.encode_detached(zeros);
    CHECK((silent.shape == Shape{1, 5, 8}));
    for (real v : silent.data) CHECK(std::isfinite(v));

    Tensor detached = enc.encode_detached(win);
    CHECK(detached.data == t.val(out).data);  // eval forward matches tape forward

    Tensor bad = Tensor::zeros({1, 39});
    DropoutCtx dc2;
    Tape t2;
    CHECK_THROWS_AS(enc.encode(t2, bad, dc2), ShapeMismatch);
}

TEST_CASE("frozen audio parameters are flagged; unfrozen are not") {
    ParamStore ps;
    Rng rng(9);
    AudioEncoder frozen(tiny_audio(true), 40, ps, rng, "audio");
    VitEncoder vit(tiny_vit(), ps, rng, "vit");

    size_t frozen_count = 0;
    for (size_t i = 0; i < ps.size(); ++i) {
        const bool is_audio = ps[i].name.rfind("audio.", 0) == 0;
        CHECK(ps[i].frozen == is_audio);
        frozen_count += ps[i].frozen;
    }
    CHECK(frozen_count > 0);

    ParamStore ps2;
    Rng rng2(9);
    AudioEncoder open(tiny_audio(false), 40, ps2, rng2, "audio");
    for (size_t i = 0; i < ps2.size(); ++i) CHECK_FALSE(ps2[i].frozen);
}

TEST_CASE("attention pooling is convex over time steps") {
    ParamStore ps;
    Rng rng(10);
    AttentionPool pool(6, ps, rng);

    // T = 1: output is exactly the single vector
    Tensor one = Tensor::randn({2, 1, 6}, rng);
    Tape t1;
    const Tensor& o1 = t1.val(pool.pool(t1, t1.input(one)));
    CHECK((o1.shape == Shape{2, 6}));
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t j = 0; j < 6; ++j)
            CHECK(o1.at(b, j) == doctest::Approx(one.at(b, 0, j)).epsilon(1e-12));

    // identical rows: any convex combination returns the row
    Tensor same = Tensor::zeros({1, 4, 6});
    Tensor row = Tensor::randn({6}, rng);
    for (int64_t k = 0; k < 4; ++k)
        for (int64_t j = 0; j < 6; ++j) same.data[static_cast<size_t>(k * 6 + j)] = row.data[static_cast<size_t>(j)];
    Tape t2;
    const Tensor& o2 = t2.val(pool.pool(t2, t2.input(same)));
    for (int64_t j = 0; j < 6; ++j)
        CHECK(o2.data[static_cast<size_t>(j)] == doctest::Approx(row.data[static_cast<size_t>(j)]).epsilon(1e-9));

    // output stays within the convex hull per coordinate
    Tensor mix = Tensor::randn({3, 5, 6}, rng);
    Tape t3;
    const Tensor& o3 = t3.val(pool.pool(t3, t3.input(mix)));
    for (int64_t b = 0; b < 3; ++b)
        for (int64_t j = 0; j < 6; ++j) {
            real lo = mix.at(b, 0, j), hi = mix.at(b, 0, j);
            for (int64_t k = 1; k < 5; ++k) {
                lo = std::min(lo, mix.at(b, k, j));
                hi = std::max(hi, mix.at(b, k, j));
            }
            CHECK(o3.at(b, j) >= lo - real(1e-12));
            CHECK(o3.at(b, j) <= hi + real(1e-12));
        }
}

TEST_CASE("gradients flow through the vit end to end") {
    ParamStore ps;
    Rng rng(11);
    VitEncoder vit(tiny_vit(), ps, rng);
    Tensor images = Tensor::randn({2, 1, 8, 8}, rng, 0.5);

    auto make_loss = [&](Tape& t) {
        DropoutCtx dc{17, 3, true, 0};
        return t.mean_all(vit.encode(t, images, dc));
    };
    auto rep = testutil::check_gradients(ps, make_loss);
    INFO(rep.worst_at);
    CHECK(rep.ok());
    CHECK(rep.checked > 200);
}

TEST_CASE("gradients flow through the audio encoder and pooling when unfrozen") {
    ParamStore ps;
    Rng rng(12);
    AudioEncoder enc(tiny_audio(false), 31, ps, rng);
    AttentionPool pool(8, ps, rng);
    Tensor win = Tensor::randn({2, 31}, rng, 0.5);

    auto make_loss = [&](Tape& t) {
        DropoutCtx dc{23, 5, true, 0};
        return t.mean_all(pool.pool(t, enc.encode(t, win, dc)));
    };
    auto rep = testutil::check_gradients(ps, make_loss);
    INFO(rep.worst_at);
    CHECK(rep.ok());
    CHECK(rep.checked > 200);
}

TEST_CASE("checkpoints round-trip parameters exactly") {
    const std::string dir = testutil::fresh_dir("ckpt");
    ParamStore ps;
    Rng rng(13);
    VitEncoder vit(tiny_vit(), ps, rng);
    AudioEncoder enc(tiny_audio(true), 40, ps, rng);

    save_checkpoint(ps, dir + "/m.ackpt", 0xabcdefull);
    CHECK(checkpoint_config_hash(dir + "/m.ackpt") == 0xabcdefull);

    // same architecture, different init
    ParamStore ps2;
    Rng rng2(14);
    VitEncoder vit2(tiny_vit(), ps2, rng2);
    AudioEncoder enc2(tiny_audio(true), 40, ps2, rng2);
    load_checkpoint(ps2, dir + "/m.ackpt", 0xabcdefull);
    REQUIRE(ps2.size() == ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
        CHECK(ps2[i].name == ps[i].name);
        CHECK(ps2[i].value.data == ps[i].value.data);
    }

    CHECK_THROWS_AS(load_checkpoint(ps2, dir + "/m.ackpt", 0x123ull), DataError);

    // partial load: only the audio subtree
    ParamStore audio_only;
    Rng rng3(15);
    AudioEncoder enc3(tiny_audio(true), 40, audio_only, rng3);
    const size_t filled = load_checkpoint_partial(audio_only, dir + "/m.ackpt");
    CHECK(filled == audio_only.size());
    for (size_t i = 0; i < audio_only.size(); ++i)
        CHECK(audio_only[i].value.data == ps.at(audio_only[i].name).value.data);

    // architecture mismatch is rejected
    ParamStore ps3;
    Rng rng4(16);
    VitEncoder vit3(tiny_vit(), ps3, rng4);
    CHECK_THROWS_AS(load_checkpoint(ps3, dir + "/m.ackpt", 0xabcdefull), FormatError);

    testutil::spit(dir + "/junk.ackpt", "definitely not a checkpoint");
    CHECK_THROWS_AS(checkpoint_config_hash(dir + "/junk.ackpt"), FormatError);

    // truncate mid-entry
    std::string bytes = testutil::slurp(dir + "/m.ackpt");
    testutil::spit(dir + "/cut.ackpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint_partial(ps2, dir + "/cut.ackpt"), FormatError);
}

TEST_CASE("saves are byte-identical for identical stores") {
    const std::string dir = testutil::fresh_dir("ckpt_bytes");
    ParamStore ps;
    Rng rng(17);
    VitEncoder vit(tiny_vit(), ps, rng);
    save_checkpoint(ps, dir + "/a.ackpt", 7);
    save_checkpoint(ps, dir + "/b.ackpt", 7);
    CHECK(testutil::slurp(dir + "/a.ackpt") == testutil::slurp(dir + "/b.ackpt"));
}

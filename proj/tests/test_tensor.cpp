#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "acc/kernels.hpp"
#include "acc/rng.hpp"
#include "acc/tensor.hpp"
#include "doctest.h"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace acc;

TEST_CASE("shape helpers") {
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK(shape_numel({}) == 1);
    CHECK(shape_str({2, 3}) == "[2,3]");
}

TEST_CASE("tensor construction and indexing") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    t.at(1, 2) = 5;
    CHECK(t.data[5] == 5);

    Tensor f = Tensor::full({4}, real(1.5));
    CHECK(f.at(3) == real(1.5));

    Tensor l = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(l.at(1, 0) == 3);

    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeMismatch);
    CHECK_THROWS_AS(require_shape(t, {3, 2}, "x"), ShapeMismatch);
}

TEST_CASE("rng streams are deterministic and fork-independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng f1 = base.fork(1);
    Rng f2 = base.fork(2);
    Rng f1again = Rng(7).fork(1);
    CHECK(f1.next_u64() == f1again.next_u64());
    CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("rng uniform and normal ranges") {
    Rng r(123);
    real mn = 1, mx = 0, sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const real u = r.uniform();
        mn = std::min(mn, u);
        mx = std::max(mx, u);
        sum += u;
    }
    CHECK(mn >= 0);
    CHECK(mx < 1);
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));

    real m = 0, q = 0;
    for (int i = 0; i < n; ++i) {
        const real z = r.normal();
        m += z;
        q += z * z;
    }
    m /= n;
    q = q / n - m * m;
    CHECK(std::abs(m) < real(0.03));
    CHECK(q == doctest::Approx(1.0).epsilon(0.05));

    for (int i = 0; i < 1000; ++i) CHECK(std::abs(r.truncated_normal(real(0.02))) <= real(0.04));
}

TEST_CASE("rng shuffle is a permutation and seed-stable") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;
    Rng r1(9), r2(9);
    r1.shuffle(v);
    r2.shuffle(w);
    CHECK(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[size_t(i)] == i);
}

namespace {

Tensor random_tensor(Rng& r, Shape s) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& x : t.data) x = r.uniform(-1, 1);
    return t;
}

template <typename ParF, typename SerF>
void check_bitwise(ParF par, SerF ser, const char* what) {
    // The parallel kernel must match the reference exactly for any thread
    // count, since each output element is reduced in the same order.
    std::vector<int> threads = {1};
#ifdef _OPENMP
    threads.push_back(3);
    threads.push_back(7);
#endif
    Tensor ref = ser();
    for (int nt : threads) {
#ifdef _OPENMP
        omp_set_num_threads(nt);
#else
        (void)nt;
#endif
        Tensor got = par();
        REQUIRE(got.numel() == ref.numel());
        for (int64_t i = 0; i < got.numel(); ++i) {
            INFO(what << " thread count " << nt << " element " << i);
            REQUIRE(got.data[i] == ref.data[i]);
        }
    }
#ifdef _OPENMP
    omp_set_num_threads(omp_get_num_procs());
#endif
}

}  // namespace

TEST_CASE("matmul parallel matches serial bitwise for all transpose flags") {
    Rng r(1);
    const int64_t m = 33, k = 29, n = 41;  // big enough to engage the parallel path
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            Tensor A = random_tensor(r, ta ? Shape{k, m} : Shape{m, k});
            Tensor B = random_tensor(r, tb ? Shape{n, k} : Shape{k, n});
            Tensor C0 = random_tensor(r, {m, n});
            for (bool accum : {false, true}) {
                check_bitwise(
                    [&] {
                        Tensor C = C0;
                        kern::matmul(C.data.data(), A.data.data(), B.data.data(), m, k, n, ta, tb,
                                     accum);
                        return C;
                    },
                    [&] {
                        Tensor C = C0;
                        kern::serial::matmul(C.data.data(), A.data.data(), B.data.data(), m, k, n,
                                             ta, tb, accum);
                        return C;
                    },
                    "matmul");
            }
        }
    }
}

TEST_CASE("matmul small oracle") {
    Tensor A = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor B = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor C = Tensor::zeros({2, 2});
    kern::matmul(C.data.data(), A.data.data(), B.data.data(), 2, 2, 2, false, false, false);
    CHECK(C.at(0, 0) == 19);
    CHECK(C.at(0, 1) == 22);
    CHECK(C.at(1, 0) == 43);
    CHECK(C.at(1, 1) == 50);
}

TEST_CASE("bmm parallel matches serial bitwise") {
    Rng r(2);
    const int64_t G = 6, m = 9, k = 11, n = 13;
    Tensor A = random_tensor(r, {G, m, k});
    Tensor B = random_tensor(r, {G, k, n});
    check_bitwise(
        [&] {
            Tensor C = Tensor::zeros({G, m, n});
            kern::bmm(C.data.data(), A.data.data(), B.data.data(), G, m, k, n, false, false,
                      false);
            return C;
        },
        [&] {
            Tensor C = Tensor::zeros({G, m, n});
            kern::serial::bmm(C.data.data(), A.data.data(), B.data.data(), G, m, k, n, false,
                              false, false);
            return C;
        },
        "bmm");
}

TEST_CASE("conv1d forward oracle") {
    Tensor x = Tensor::from({1, 1, 5}, {1, 2, 3, 4, 5});
    Tensor w = Tensor::from({1, 1, 2}, {1, 1});
    Tensor out = Tensor::zeros({1, 1, 2});
    kern::conv1d(out.data.data(), x.data.data(), w.data.data(), nullptr, 1, 1, 5, 1, 2, 2);
    CHECK(out.data[0] == 3);
    CHECK(out.data[1] == 7);
    CHECK(kern::conv1d_out_len(5, 2, 2) == 2);
    CHECK(kern::conv1d_out_len(1067, 10, 5) == 212);
    CHECK(kern::conv1d_out_len(212, 8, 4) == 52);
}

TEST_CASE("conv1d and gradients parallel match serial bitwise") {
    Rng r(3);
    const int64_t B = 4, Cin = 3, L = 60, Cout = 5, K = 7, S = 3;
    const int64_t Lout = kern::conv1d_out_len(L, K, S);
    Tensor x = random_tensor(r, {B, Cin, L});
    Tensor w = random_tensor(r, {Cout, Cin, K});
    Tensor bias = random_tensor(r, {Cout});
    Tensor dout = random_tensor(r, {B, Cout, Lout});

    check_bitwise(
        [&] {
            Tensor out = Tensor::zeros({B, Cout, Lout});
            kern::conv1d(out.data.data(), x.data.data(), w.data.data(), bias.data.data(), B, Cin,
                         L, Cout, K, S);
            return out;
        },
        [&] {
            Tensor out = Tensor::zeros({B, Cout, Lout});
            kern::serial::conv1d(out.data.data(), x.data.data(), w.data.data(), bias.data.data(),
                                 B, Cin, L, Cout, K, S);
            return out;
        },
        "conv1d");
    check_bitwise(
        [&] {
            Tensor dx = Tensor::zeros({B, Cin, L});
            kern::conv1d_grad_x(dx.data.data(), dout.data.data(), w.data.data(), B, Cin, L, Cout,
                                K, S);
            return dx;
        },
        [&] {
            Tensor dx = Tensor::zeros({B, Cin, L});
            kern::serial::conv1d_grad_x(dx.data.data(), dout.data.data(), w.data.data(), B, Cin,
                                        L, Cout, K, S);
            return dx;
        },
        "conv1d_grad_x");
    check_bitwise(
        [&] {
            Tensor dw = Tensor::zeros({Cout, Cin, K});
            kern::conv1d_grad_w(dw.data.data(), dout.data.data(), x.data.data(), B, Cin, L, Cout,
                                K, S);
            return dw;
        },
        [&] {
            Tensor dw = Tensor::zeros({Cout, Cin, K});
            kern::serial::conv1d_grad_w(dw.data.data(), dout.data.data(), x.data.data(), B, Cin,
                                        L, Cout, K, S);
            return dw;
        },
        "conv1d_grad_w");
    check_bitwise(
        [&] {
            Tensor db = Tensor::zeros({Cout});
            kern::conv1d_grad_bias(db.data.data(), dout.data.data(), B, Cout, Lout);
            return db;
        },
        [&] {
            Tensor db = Tensor::zeros({Cout});
            kern::serial::conv1d_grad_bias(db.data.data(), dout.data.data(), B, Cout, Lout);
            return db;
        },
        "conv1d_grad_bias");
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng r(4);
    const int64_t rows = 40, cols = 17;
    Tensor x = random_tensor(r, {rows, cols});
    Tensor y = Tensor::zeros({rows, cols});
    kern::softmax_rows(y.data.data(), x.data.data(), rows, cols);
    for (int64_t i = 0; i < rows; ++i) {
        real s = 0;
        for (int64_t j = 0; j < cols; ++j) {
            CHECK(y.data[i * cols + j] > 0);
            s += y.data[i * cols + j];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    Tensor xs = x;
    for (auto& v : xs.data) v += 100;
    Tensor ys = Tensor::zeros({rows, cols});
    kern::softmax_rows(ys.data.data(), xs.data.data(), rows, cols);
    for (int64_t i = 0; i < rows * cols; ++i)
        CHECK(ys.data[i] == doctest::Approx(y.data[i]).epsilon(1e-12));
}

TEST_CASE("softmax and layer_norm parallel match serial bitwise") {
    Rng r(5);
    const int64_t rows = 120, cols = 160;
    Tensor x = random_tensor(r, {rows, cols});
    Tensor gain = random_tensor(r, {cols});
    Tensor bias = random_tensor(r, {cols});
    Tensor dout = random_tensor(r, {rows, cols});

    check_bitwise(
        [&] {
            Tensor y = Tensor::zeros({rows, cols});
            kern::softmax_rows(y.data.data(), x.data.data(), rows, cols);
            return y;
        },
        [&] {
            Tensor y = Tensor::zeros({rows, cols});
            kern::serial::softmax_rows(y.data.data(), x.data.data(), rows, cols);
            return y;
        },
        "softmax_rows");

    Tensor y = Tensor::zeros({rows, cols});
    kern::serial::softmax_rows(y.data.data(), x.data.data(), rows, cols);
    check_bitwise(
        [&] {
            Tensor dx = Tensor::zeros({rows, cols});
            kern::softmax_grad_rows(dx.data.data(), y.data.data(), dout.data.data(), rows, cols);
            return dx;
        },
        [&] {
            Tensor dx = Tensor::zeros({rows, cols});
            kern::serial::softmax_grad_rows(dx.data.data(), y.data.data(), dout.data.data(), rows,
                                            cols);
            return dx;
        },
        "softmax_grad_rows");

    Tensor mean = Tensor::zeros({rows});
    Tensor rstd = Tensor::zeros({rows});
    check_bitwise(
        [&] {
            Tensor out = Tensor::zeros({rows, cols});
            Tensor mu = Tensor::zeros({rows});
            Tensor rs = Tensor::zeros({rows});
            kern::layer_norm_rows(out.data.data(), mu.data.data(), rs.data.data(), x.data.data(),
                                  gain.data.data(), bias.data.data(), rows, cols, real(1e-5));
            return out;
        },
        [&] {
            Tensor out = Tensor::zeros({rows, cols});
            kern::serial::layer_norm_rows(out.data.data(), mean.data.data(), rstd.data.data(),
                                          x.data.data(), gain.data.data(), bias.data.data(), rows,
                                          cols, real(1e-5));
            return out;
        },
        "layer_norm_rows");
    check_bitwise(
        [&] {
            Tensor dx = Tensor::zeros({rows, cols});
            Tensor dg = Tensor::zeros({cols});
            Tensor db = Tensor::zeros({cols});
            kern::layer_norm_grad(dx.data.data(), dg.data.data(), db.data.data(),
                                  dout.data.data(), x.data.data(), mean.data.data(),
                                  rstd.data.data(), gain.data.data(), rows, cols);
            return dx;
        },
        [&] {
            Tensor dx = Tensor::zeros({rows, cols});
            Tensor dg = Tensor::zeros({cols});
            Tensor db = Tensor::zeros({cols});
            kern::serial::layer_norm_grad(dx.data.data(), dg.data.data(), db.data.data(),
                                          dout.data.data(), x.data.data(), mean.data.data(),
                                          rstd.data.data(), gain.data.data(), rows, cols);
            return dx;
        },
        "layer_norm_grad");
}

TEST_CASE("layer_norm normalizes each row") {
    // With eps = 0, unit gain, zero bias the output has mean 0 and variance 1.
    Rng r(6);
    const int64_t rows = 8, cols = 64;
    Tensor x = random_tensor(r, {rows, cols});
    for (auto& v : x.data) v = v * 3 + 2;
    Tensor gain = Tensor::full({cols}, 1);
    Tensor bias = Tensor::zeros({cols});
    Tensor out = Tensor::zeros({rows, cols});
    Tensor mean = Tensor::zeros({rows});
    Tensor rstd = Tensor::zeros({rows});
    kern::layer_norm_rows(out.data.data(), mean.data.data(), rstd.data.data(), x.data.data(),
                          gain.data.data(), bias.data.data(), rows, cols, 0);
    for (int64_t i = 0; i < rows; ++i) {
        real m = 0, q = 0;
        for (int64_t j = 0; j < cols; ++j) m += out.data[i * cols + j];
        m /= real(cols);
        for (int64_t j = 0; j < cols; ++j) {
            const real d = out.data[i * cols + j] - m;
            q += d * d;
        }
        q /= real(cols);
        CHECK(std::abs(m) < real(1e-9));
        CHECK(std::abs(q - 1) < real(1e-9));
    }
}

TEST_CASE("gelu values and parallel equality") {
    Tensor x = Tensor::from({3}, {real(-2), real(0), real(1)});
    Tensor y = Tensor::zeros({3});
    kern::gelu(y.data.data(), x.data.data(), 3);
    CHECK(y.data[0] == doctest::Approx(-0.0454978).epsilon(1e-5));
    CHECK(y.data[1] == 0);
    CHECK(y.data[2] == doctest::Approx(0.8413447).epsilon(1e-6));

    Rng r(7);
    Tensor big = random_tensor(r, {1 << 15});
    check_bitwise(
        [&] {
            Tensor out = Tensor::zeros({1 << 15});
            kern::gelu(out.data.data(), big.data.data(), big.numel());
            return out;
        },
        [&] {
            Tensor out = Tensor::zeros({1 << 15});
            kern::serial::gelu(out.data.data(), big.data.data(), big.numel());
            return out;
        },
        "gelu");
}

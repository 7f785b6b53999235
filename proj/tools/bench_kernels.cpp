// Times the OpenMP kernels against the serial reference on training-sized
// shapes and checks that both produce identical bytes.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "acc/kernels.hpp"
#include "acc/rng.hpp"

using namespace acc;

namespace {

std::vector<real> randu(int64_t n, Rng& rng) {
    std::vector<real> v(static_cast<size_t>(n));
    for (real& x : v) x = real(rng.normal());
    return v;
}

double time_ms(const std::function<void()>& f, int reps) {
    f();  // warm-up, also first-touch of the output
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

struct Case {
    std::string name;
    std::function<void(real*)> serial;
    std::function<void(real*)> parallel;
    int64_t out_n = 0;
};

bool run_case(const Case& c, int reps) {
    std::vector<real> a(static_cast<size_t>(c.out_n)), b(static_cast<size_t>(c.out_n));
    const double ts = time_ms([&] { c.serial(a.data()); }, reps);
    const double tp = time_ms([&] { c.parallel(b.data()); }, reps);
    const bool match =
        std::memcmp(a.data(), b.data(), static_cast<size_t>(c.out_n) * sizeof(real)) == 0;
    std::printf("%-28s %10.2f %12.2f %8.2fx   %s\n", c.name.c_str(), ts, tp,
                tp > 0 ? ts / tp : 0.0, match ? "yes" : "NO");
    return match;
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    std::printf("kernel benchmark: %d thread(s), best of %d\n\n", threads, reps);
    std::printf("%-28s %10s %12s %9s   %s\n", "case", "serial ms", "parallel ms", "speedup",
                "match");

    Rng rng(1);
    bool ok = true;

    {
        const int64_t m = 192, k = 192, n = 192;
        auto A = randu(m * k, rng), B = randu(k * n, rng);
        ok &= run_case({"matmul 192x192x192",
                        [=](real* C) { kern::serial::matmul(C, A.data(), B.data(), m, k, n,
                                                            false, false, false); },
                        [=](real* C) { kern::matmul(C, A.data(), B.data(), m, k, n, false,
                                                    false, false); },
                        m * n},
                       reps);
        ok &= run_case({"matmul 192x192x192 tA",
                        [=](real* C) { kern::serial::matmul(C, A.data(), B.data(), m, k, n,
                                                            true, false, false); },
                        [=](real* C) { kern::matmul(C, A.data(), B.data(), m, k, n, true,
                                                    false, false); },
                        m * n},
                       reps);
    }
    {
        const int64_t G = 16, m = 48, k = 48, n = 48;
        auto A = randu(G * m * k, rng), B = randu(G * k * n, rng);
        ok &= run_case({"bmm 16 of 48x48x48",
                        [=](real* C) { kern::serial::bmm(C, A.data(), B.data(), G, m, k, n,
                                                         false, false, false); },
                        [=](real* C) { kern::bmm(C, A.data(), B.data(), G, m, k, n, false,
                                                 false, false); },
                        G * m * n},
                       reps);
    }
    {
        const int64_t B = 16, Cin = 32, L = 2000, Cout = 64, K = 10, S = 5;
        const int64_t Lout = kern::conv1d_out_len(L, K, S);
        auto x = randu(B * Cin * L, rng), w = randu(Cout * Cin * K, rng), bias = randu(Cout, rng);
        ok &= run_case({"conv1d 16x32x2000 k10s5",
                        [=](real* out) { kern::serial::conv1d(out, x.data(), w.data(),
                                                              bias.data(), B, Cin, L, Cout, K,
                                                              S); },
                        [=](real* out) { kern::conv1d(out, x.data(), w.data(), bias.data(), B,
                                                      Cin, L, Cout, K, S); },
                        B * Cout * Lout},
                       reps);
        auto dout = randu(B * Cout * Lout, rng);
        ok &= run_case({"conv1d grad_w",
                        [=](real* dw) {
                            std::memset(dw, 0, size_t(Cout * Cin * K) * sizeof(real));
                            kern::serial::conv1d_grad_w(dw, dout.data(), x.data(), B, Cin, L,
                                                        Cout, K, S);
                        },
                        [=](real* dw) {
                            std::memset(dw, 0, size_t(Cout * Cin * K) * sizeof(real));
                            kern::conv1d_grad_w(dw, dout.data(), x.data(), B, Cin, L, Cout, K,
                                                S);
                        },
                        Cout * Cin * K},
                       reps);
    }
    {
        const int64_t rows = 2048, cols = 256;
        auto x = randu(rows * cols, rng);
        ok &= run_case({"softmax 2048x256",
                        [=](real* out) { kern::serial::softmax_rows(out, x.data(), rows, cols); },
                        [=](real* out) { kern::softmax_rows(out, x.data(), rows, cols); },
                        rows * cols},
                       reps);
        auto gain = randu(cols, rng), bias = randu(cols, rng);
        std::vector<real> mean(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
        auto ms = mean, rs = rstd;
        ok &= run_case({"layer_norm 2048x256",
                        [=](real* out) mutable {
                            kern::serial::layer_norm_rows(out, ms.data(), rs.data(), x.data(),
                                                          gain.data(), bias.data(), rows, cols,
                                                          real(1e-5));
                        },
                        [=](real* out) mutable {
                            kern::layer_norm_rows(out, ms.data(), rs.data(), x.data(),
                                                  gain.data(), bias.data(), rows, cols,
                                                  real(1e-5));
                        },
                        rows * cols},
                       reps);
    }
    {
        const int64_t n = 1 << 21;
        auto x = randu(n, rng);
        ok &= run_case({"gelu 2M",
                        [=](real* out) { kern::serial::gelu(out, x.data(), n); },
                        [=](real* out) { kern::gelu(out, x.data(), n); },
                        n},
                       reps);
    }

    if (!ok) {
        std::printf("\nmismatch between serial and parallel results\n");
        return 1;
    }
    return 0;
}

#include "acc/kernels.hpp"

#include <algorithm>
#include <cmath>

// Parallel kernels. Decomposition is owner-computes: each output element is
// produced by exactly one thread, and its reduction runs in the same index
// order as the serial reference, so results are bit-identical to
// kern::serial and independent of the thread count. Tiny problems skip the
// parallel region via the `if` clause.

namespace acc::kern {

namespace {

constexpr int64_t kParCutoff = 1 << 14;  // flop-ish units below which threads don't pay off

// One output row of C = op(A)*op(B). Accumulation over p is ascending for
// every flag combination, matching the reference kernel.
inline void matmul_row(real* C, const real* A, const real* B, int64_t i, int64_t m, int64_t k,
                       int64_t n, bool ta, bool tb, bool accumulate) {
    real* Ci = C + i * n;
    if (!ta && !tb) {
        if (!accumulate) std::fill(Ci, Ci + n, real(0));
        const real* Ai = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const real a = Ai[p];
            const real* Bp = B + p * n;
            for (int64_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    } else if (ta && !tb) {
        if (!accumulate) std::fill(Ci, Ci + n, real(0));
        for (int64_t p = 0; p < k; ++p) {
            const real a = A[p * m + i];
            const real* Bp = B + p * n;
            for (int64_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    } else if (!ta && tb) {
        const real* Ai = A + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const real* Bj = B + j * k;
            real acc = accumulate ? Ci[j] : real(0);
            for (int64_t p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
            Ci[j] = acc;
        }
    } else {
        for (int64_t j = 0; j < n; ++j) {
            const real* Bj = B + j * k;
            real acc = accumulate ? Ci[j] : real(0);
            for (int64_t p = 0; p < k; ++p) acc += A[p * m + i] * Bj[p];
            Ci[j] = acc;
        }
    }
}

}  // namespace

void matmul(real* C, const real* A, const real* B, int64_t m, int64_t k, int64_t n, bool ta,
            bool tb, bool accumulate) {
    const int64_t work = m * k * n;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int64_t i = 0; i < m; ++i) matmul_row(C, A, B, i, m, k, n, ta, tb, accumulate);
}

void bmm(real* C, const real* A, const real* B, int64_t G, int64_t m, int64_t k, int64_t n,
         bool ta, bool tb, bool accumulate) {
    const int64_t work = G * m * k * n;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParCutoff)
    for (int64_t g = 0; g < G; ++g)
        for (int64_t i = 0; i < m; ++i)
            matmul_row(C + g * m * n, A + g * m * k, B + g * k * n, i, m, k, n, ta, tb,
                       accumulate);
}

void conv1d(real* out, const real* x, const real* w, const real* bias, int64_t B, int64_t Cin,
            int64_t L, int64_t Cout, int64_t K, int64_t S) {
    const int64_t Lout = conv1d_out_len(L, K, S);
    const int64_t work = B * Cout * Lout * Cin * K;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParCutoff)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
            for (int64_t t = 0; t < Lout; ++t) {
                real acc = bias ? bias[co] : real(0);
                for (int64_t ci = 0; ci < Cin; ++ci)
                    for (int64_t u = 0; u < K; ++u)
                        acc += x[(b * Cin + ci) * L + t * S + u] * w[(co * Cin + ci) * K + u];
                out[(b * Cout + co) * Lout + t] = acc;
            }
        }
    }
}

void conv1d_grad_x(real* dx, const real* dout, const real* w, int64_t B, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S) {
    const int64_t Lout = conv1d_out_len(L, K, S);
    const int64_t work = B * Cin * L * Cout;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParCutoff)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
            for (int64_t l = 0; l < L; ++l) {
                const int64_t t_lo = l >= K ? (l - K + S) / S : 0;
                const int64_t t_hi = std::min(l / S, Lout - 1);
                real acc = dx[(b * Cin + ci) * L + l];
                for (int64_t co = 0; co < Cout; ++co) {
                    for (int64_t t = t_lo; t <= t_hi; ++t) {
                        const int64_t u = l - t * S;
                        acc += dout[(b * Cout + co) * Lout + t] * w[(co * Cin + ci) * K + u];
                    }
                }
                dx[(b * Cin + ci) * L + l] = acc;
            }
        }
    }
}

void conv1d_grad_w(real* dw, const real* dout, const real* x, int64_t B, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S) {
    const int64_t Lout = conv1d_out_len(L, K, S);
    const int64_t work = Cout * Cin * K * B * Lout;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kParCutoff)
    for (int64_t co = 0; co < Cout; ++co) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
            for (int64_t u = 0; u < K; ++u) {
                real acc = dw[(co * Cin + ci) * K + u];
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t t = 0; t < Lout; ++t)
                        acc += dout[(b * Cout + co) * Lout + t] * x[(b * Cin + ci) * L + t * S + u];
                dw[(co * Cin + ci) * K + u] = acc;
            }
        }
    }
}

void conv1d_grad_bias(real* db, const real* dout, int64_t B, int64_t Cout, int64_t Lout) {
#pragma omp parallel for schedule(static) if (Cout * B * Lout >= kParCutoff)
    for (int64_t co = 0; co < Cout; ++co) {
        real acc = db[co];
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < Lout; ++t) acc += dout[(b * Cout + co) * Lout + t];
        db[co] = acc;
    }
}

void softmax_rows(real* out, const real* x, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols >= kParCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        const real* xr = x + r * cols;
        real* yr = out + r * cols;
        real mx = xr[0];
        for (int64_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        real sum = 0;
        for (int64_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const real inv = real(1) / sum;
        for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void softmax_grad_rows(real* dx, const real* y, const real* dout, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols >= kParCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        const real* yr = y + r * cols;
        const real* gr = dout + r * cols;
        real* dr = dx + r * cols;
        real dot = 0;
        for (int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        for (int64_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
}

void layer_norm_rows(real* out, real* mean, real* rstd, const real* x, const real* gain,
                     const real* bias, int64_t rows, int64_t cols, real eps) {
#pragma omp parallel for schedule(static) if (rows * cols >= kParCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        const real* xr = x + r * cols;
        real mu = 0;
        for (int64_t j = 0; j < cols; ++j) mu += xr[j];
        mu /= real(cols);
        real var = 0;
        for (int64_t j = 0; j < cols; ++j) {
            const real d = xr[j] - mu;
            var += d * d;
        }
        var /= real(cols);
        const real rs = real(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        real* yr = out + r * cols;
        for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    }
}

void layer_norm_grad(real* dx, real* dgain, real* dbias, const real* dout, const real* x,
                     const real* mean, const real* rstd, const real* gain, int64_t rows,
                     int64_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols >= kParCutoff)
    for (int64_t j = 0; j < cols; ++j) {
        real dg = dgain[j], db = dbias[j];
        for (int64_t r = 0; r < rows; ++r) {
            const real xhat = (x[r * cols + j] - mean[r]) * rstd[r];
            dg += dout[r * cols + j] * xhat;
            db += dout[r * cols + j];
        }
        dgain[j] = dg;
        dbias[j] = db;
    }
#pragma omp parallel for schedule(static) if (rows * cols >= kParCutoff)
    for (int64_t r = 0; r < rows; ++r) {
        const real* xr = x + r * cols;
        const real* gr = dout + r * cols;
        real* dr = dx + r * cols;
        const real mu = mean[r], rs = rstd[r];
        real s1 = 0, s2 = 0;
        for (int64_t j = 0; j < cols; ++j) {
            const real xhat = (xr[j] - mu) * rs;
            const real dxhat = gr[j] * gain[j];
            s1 += dxhat;
            s2 += dxhat * xhat;
        }
        s1 /= real(cols);
        s2 /= real(cols);
        for (int64_t j = 0; j < cols; ++j) {
            const real xhat = (xr[j] - mu) * rs;
            dr[j] += rs * (gr[j] * gain[j] - s1 - xhat * s2);
        }
    }
}

namespace {

constexpr real kInvSqrt2 = real(0.7071067811865475244);
constexpr real kInvSqrt2Pi = real(0.3989422804014326779);

}  // namespace

void gelu(real* out, const real* x, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParCutoff)
    for (int64_t i = 0; i < n; ++i) out[i] = real(0.5) * x[i] * (1 + std::erf(x[i] * kInvSqrt2));
}

void gelu_grad(real* dx, const real* x, const real* dout, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParCutoff)
    for (int64_t i = 0; i < n; ++i) {
        const real cdf = real(0.5) * (1 + std::erf(x[i] * kInvSqrt2));
        const real pdf = kInvSqrt2Pi * std::exp(real(-0.5) * x[i] * x[i]);
        dx[i] += dout[i] * (cdf + x[i] * pdf);
    }
}

}  // namespace acc::kern

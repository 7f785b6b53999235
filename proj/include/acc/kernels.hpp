#pragma once

#include <cstdint>

#include "acc/common.hpp"

// Compute kernels behind the tape ops. Two implementations share this
// interface: acc::kern (OpenMP-parallel, used everywhere) and
// acc::kern::serial (naive reference, kept for tests and the benchmark).
//
// Both accumulate into each output element in the same index order, and the
// parallel versions assign every output element to exactly one thread, so
// the two produce bit-identical results and the parallel results do not
// depend on the thread count.

namespace acc::kern {

// C[m,n] (+)= op(A) * op(B); op transposes when the flag is set.
// A is [m,k] ([k,m] if ta), B is [k,n] ([n,k] if tb).
void matmul(real* C, const real* A, const real* B, int64_t m, int64_t k, int64_t n, bool ta,
            bool tb, bool accumulate);

// G independent matmuls over contiguous batches.
void bmm(real* C, const real* A, const real* B, int64_t G, int64_t m, int64_t k, int64_t n,
         bool ta, bool tb, bool accumulate);

// x:[B,Cin,L] w:[Cout,Cin,K] bias:[Cout] -> out:[B,Cout,Lout], Lout = (L-K)/S+1.
void conv1d(real* out, const real* x, const real* w, const real* bias, int64_t B, int64_t Cin,
            int64_t L, int64_t Cout, int64_t K, int64_t S);
void conv1d_grad_x(real* dx, const real* dout, const real* w, int64_t B, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S);
void conv1d_grad_w(real* dw, const real* dout, const real* x, int64_t B, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S);
void conv1d_grad_bias(real* db, const real* dout, int64_t B, int64_t Cout, int64_t Lout);

// Row-wise softmax with max subtraction.
void softmax_rows(real* out, const real* x, int64_t rows, int64_t cols);
// dx += y .* (dout - sum(dout .* y)) per row.
void softmax_grad_rows(real* dx, const real* y, const real* dout, int64_t rows, int64_t cols);

// Per-row normalization over the last axis; mean/rstd saved for backward.
void layer_norm_rows(real* out, real* mean, real* rstd, const real* x, const real* gain,
                     const real* bias, int64_t rows, int64_t cols, real eps);
void layer_norm_grad(real* dx, real* dgain, real* dbias, const real* dout, const real* x,
                     const real* mean, const real* rstd, const real* gain, int64_t rows,
                     int64_t cols);

void gelu(real* out, const real* x, int64_t n);
void gelu_grad(real* dx, const real* x, const real* dout, int64_t n);

namespace serial {

void matmul(real* C, const real* A, const real* B, int64_t m, int64_t k, int64_t n, bool ta,
            bool tb, bool accumulate);
void bmm(real* C, const real* A, const real* B, int64_t G, int64_t m, int64_t k, int64_t n,
         bool ta, bool tb, bool accumulate);
void conv1d(real* out, const real* x, const real* w, const real* bias, int64_t B, int64_t Cin,
            int64_t L, int64_t Cout, int64_t K, int64_t S);
void conv1d_grad_x(real* dx, const real* dout, const real* w, int64_t B, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S);
void conv1d_grad_w(real* dw, const real* dout, const real* x, int64_t B, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S);
void conv1d_grad_bias(real* db, const real* dout, int64_t B, int64_t Cout, int64_t Lout);
void softmax_rows(real* out, const real* x, int64_t rows, int64_t cols);
void softmax_grad_rows(real* dx, const real* y, const real* dout, int64_t rows, int64_t cols);
void layer_norm_rows(real* out, real* mean, real* rstd, const real* x, const real* gain,
                     const real* bias, int64_t rows, int64_t cols, real eps);
void layer_norm_grad(real* dx, real* dgain, real* dbias, const real* dout, const real* x,
                     const real* mean, const real* rstd, const real* gain, int64_t rows,
                     int64_t cols);
void gelu(real* out, const real* x, int64_t n);
void gelu_grad(real* dx, const real* x, const real* dout, int64_t n);

}  // namespace serial

inline int64_t conv1d_out_len(int64_t L, int64_t K, int64_t S) {
    return L >= K ? (L - K) / S + 1 : 0;
}

}  // namespace acc::kern

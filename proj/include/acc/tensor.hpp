#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "acc/common.hpp"
#include "acc/rng.hpp"

namespace acc {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor with value semantics. Default precision is f64
// (f32 selectable at build time via ACC_REAL_FLOAT).
struct Tensor {
    Shape shape;
    std::vector<real> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<real> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(static_cast<size_t>(shape_numel(t.shape)), real(0));
        return t;
    }

    static Tensor full(Shape s, real v) {
        Tensor t = zeros(std::move(s));
        for (real& x : t.data) x = v;
        return t;
    }

    static Tensor from(Shape s, std::initializer_list<real> vals) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(vals);
        if (static_cast<int64_t>(t.data.size()) != shape_numel(t.shape))
            throw ShapeMismatch("tensor literal size does not match shape " + shape_str(t.shape));
        return t;
    }

    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(std::move(s));
        for (real& x : t.data) x = static_cast<real>(rng.normal(0.0, stddev));
        return t;
    }

    static Tensor truncated_normal(Shape s, Rng& rng, double stddev) {
        Tensor t = zeros(std::move(s));
        for (real& x : t.data) x = static_cast<real>(rng.truncated_normal(stddev));
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    real& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    real at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    real& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    real at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    real& at(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    real at(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Cosine of the angle between two tensors viewed as flat vectors, with the
// norms clamped below at 1e-8 so zero vectors stay finite.
inline real cosine_similarity(const Tensor& u, const Tensor& v) {
    if (!u.same_shape(v))
        throw ShapeMismatch("cosine_similarity: " + shape_str(u.shape) + " vs " +
                            shape_str(v.shape));
    real dot = 0, qu = 0, qv = 0;
    for (int64_t i = 0; i < u.numel(); ++i) {
        dot += u.data[i] * v.data[i];
        qu += u.data[i] * u.data[i];
        qv += v.data[i] * v.data[i];
    }
    const real eps = real(1e-8);
    return dot / (std::max(std::sqrt(qu), eps) * std::max(std::sqrt(qv), eps));
}

inline void require_shape(const Tensor& t, const Shape& s, const std::string& what) {
    if (t.shape != s)
        throw ShapeMismatch(what + ": expected " + shape_str(s) + ", got " +
                            shape_str(t.shape));
}

}  // namespace acc

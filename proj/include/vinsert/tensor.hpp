#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace vinsert {

// Dense row-major float tensor. Everything in the model and the data
// pipeline runs on these; shapes follow the [N, C, H, W] convention for
// video/feature data and [T, D] for token sequences.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
    Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= (size_t)d;
        return n;
    }

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    int dim(int i) const { return shape[(i < 0) ? (int)shape.size() + i : i]; }
    int ndim() const { return (int)shape.size(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }

    // [C,H,W] or [N,C,H,W] accessors
    float& at(int c, int y, int x) { return data[((size_t)c * shape[ndim() - 2] + y) * shape[ndim() - 1] + x]; }
    float at(int c, int y, int x) const { return data[((size_t)c * shape[ndim() - 2] + y) * shape[ndim() - 1] + x]; }
    float& at(int n, int c, int y, int x) {
        return data[(((size_t)n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    float at(int n, int c, int y, int x) const {
        return data[(((size_t)n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    Tensor reshaped(std::vector<int> s) const {
        VINSERT_FATAL_CHECK(numel_of(s) == numel(), "reshape %zu -> %zu elements", numel(), numel_of(s));
        Tensor t = *this;
        t.shape = std::move(s);
        return t;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }

    static Tensor randn(std::vector<int> s, Rng& rng, float stdev = 1.0f) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = rng.normalf() * stdev;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); i++) s += (i ? "," : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

inline float dotf(const float* a, const float* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; i++) acc += (double)a[i] * b[i];
    return (float)acc;
}

inline double mse(const Tensor& a, const Tensor& b) {
    VINSERT_FATAL_CHECK(a.numel() == b.numel(), "mse size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); i++) {
        double d = (double)a[i] - b[i];
        acc += d * d;
    }
    return acc / (double)a.numel();
}

inline double l2_norm(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data) acc += (double)v * v;
    return std::sqrt(acc);
}

inline double rel_l2(const Tensor& a, const Tensor& ref) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.numel(); i++) {
        double d = (double)a[i] - ref[i];
        num += d * d;
        den += (double)ref[i] * ref[i];
    }
    return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); i++) m = std::max(m, std::fabs((double)a[i] - b[i]));
    return m;
}

}  // namespace vinsert

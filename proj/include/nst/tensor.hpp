#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "nst/error.hpp"

namespace nst {

// Dense row-major tensor of 64-bit floats. Shapes used in this library:
//   [N, D]          flattened feature batches (dense layers)
//   [N, H, W, C]    image batches (conv layers)
//   [H, W, C]       single images
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape product " + std::to_string(numel_of(shape)));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t ndim() const { return shape.size(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    // [N, H, W, C] indexing.
    double& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
    }
    double at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

struct ImageShape {
    std::size_t h = 0, w = 0, c = 0;
    std::size_t numel() const { return h * w * c; }
    bool operator==(const ImageShape&) const = default;
};

// y[i,j] = sum_k x[i,k] * w[k,j]   (x: [n,k], w: [k,m], y: [n,m])
inline void matmul_accumulate(const Tensor& x, const Tensor& w, Tensor& y) {
    const std::size_t n = x.shape[0], k = x.shape[1], m = w.shape[1];
    const double* xp = x.data.data();
    const double* wp = w.data.data();
    double* yp = y.data.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = xp + i * k;
        double* yi = yp + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double xv = xi[kk];
            if (xv == 0.0) continue;
            const double* wk = wp + kk * m;
            for (std::size_t j = 0; j < m; ++j) yi[j] += xv * wk[j];
        }
    }
}

// y[i,j] = sum_k x[k,i] * g[k,j]   (accumulates x^T g; x: [k,i-dim], g: [k,m])
inline void matmul_at_b_accumulate(const Tensor& x, const Tensor& g, Tensor& y) {
    const std::size_t rows = x.shape[0], in = x.shape[1], out = g.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * in;
        const double* gr = g.data.data() + r * out;
        for (std::size_t i = 0; i < in; ++i) {
            const double xv = xr[i];
            if (xv == 0.0) continue;
            double* yi = y.data.data() + i * out;
            for (std::size_t j = 0; j < out; ++j) yi[j] += xv * gr[j];
        }
    }
}

// y[i,k] = sum_j g[i,j] * w[k,j]   (accumulates g w^T; g: [n,m], w: [k,m])
inline void matmul_b_wt_accumulate(const Tensor& g, const Tensor& w, Tensor& y) {
    const std::size_t n = g.shape[0], m = g.shape[1], k = w.shape[0];
    for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g.data.data() + i * m;
        double* yi = y.data.data() + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* wk = w.data.data() + kk * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += gi[j] * wk[j];
            yi[kk] += acc;
        }
    }
}

}  // namespace nst

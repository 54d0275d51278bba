#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "aerosense/error.hpp"

namespace aero {

// Dense row-major 64-bit float tensor. Everything in this project is rank 1
// or 2; shape is kept general for serialization.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::initializer_list<int64_t> s) : shape(s) { data.assign(numel(), 0.0); }

    static Tensor zeros(std::vector<int64_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(t.numel(), 0.0);
        return t;
    }
    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t = zeros(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }
    static Tensor row(std::span<const double> values) {
        Tensor t;
        t.shape = {1, int64_t(values.size())};
        t.data.assign(values.begin(), values.end());
        return t;
    }
    static Tensor scalar(double v) {
        Tensor t;
        t.shape = {1, 1};
        t.data = {v};
        return t;
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(int64_t i, int64_t j) { return data[size_t(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data[size_t(i * cols() + j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Recursive halving sum. Used wherever aggregation across set elements must
// commute exactly with duplicating the element list (pairwise trees over
// [S, S] reduce to 2 * tree(S) in IEEE arithmetic).
double pairwise_sum(std::span<const double> xs);

} // namespace aero

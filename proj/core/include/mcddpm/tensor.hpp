#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcddpm {

/// Dense row-major n-d array. Rank 0 is a scalar, rank 2 an image slice
/// (rows, cols), rank 3 a channel stack (channels, rows, cols).
template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> dims) : shape(std::move(dims)) {
        data.assign(count(shape), S(0));
    }
    Tensor(std::vector<int> dims, S fill) : shape(std::move(dims)) {
        data.assign(count(shape), fill);
    }

    static std::size_t count(const std::vector<int>& dims) {
        std::size_t n = 1;
        for (int d : dims) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
    static Tensor full(std::vector<int> dims, S v) { return Tensor(std::move(dims), v); }
    static Tensor scalar(S v) {
        Tensor t{std::vector<int>{}};
        t.data.assign(1, v);
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    S& operator[](std::size_t i) { return data[i]; }
    S operator[](std::size_t i) const { return data[i]; }

    // rank-2 access (rows, cols)
    S& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    S at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    // rank-3 access (ch, rows, cols)
    S& at(int ch, int r, int c) {
        return data[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
    }
    S at(int ch, int r, int c) const {
        return data[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
    }

    S item() const {
        assert(numel() == 1);
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename S>
void require_shape(const Tensor<S>& t, const std::vector<int>& dims, const char* what) {
    if (t.shape != dims)
        throw std::invalid_argument(std::string(what) + ": expected shape mismatch, got " +
                                    t.shape_str());
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace mcddpm

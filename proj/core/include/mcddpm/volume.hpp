#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcddpm/tensor.hpp"

namespace mcddpm {

/// 3D scalar volume, h x w x d, stored slice-contiguous: the transverse slice
/// at index s occupies data[s*h*w .. (s+1)*h*w).
template <typename T>
struct VolumeT {
    int h = 0, w = 0, d = 0;
    std::vector<T> data;

    VolumeT() = default;
    VolumeT(int h_, int w_, int d_, T fill = T(0))
        : h(h_), w(w_), d(d_), data(static_cast<std::size_t>(h_) * w_ * d_, fill) {}

    std::size_t numel() const { return data.size(); }
    std::size_t slice_size() const { return static_cast<std::size_t>(h) * w; }

    T& at(int r, int c, int s) { return data[(static_cast<std::size_t>(s) * h + r) * w + c]; }
    T at(int r, int c, int s) const {
        return data[(static_cast<std::size_t>(s) * h + r) * w + c];
    }

    bool same_dims(const VolumeT& o) const { return h == o.h && w == o.w && d == o.d; }

    std::string dims_str() const {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
    }
};

using Volume = VolumeT<float>;
using VolumeMask = VolumeT<std::uint8_t>;

/// Thresholded segmentation; entries are {0,1}.
using BinaryMap = VolumeMask;

/// Extracts transverse slice s as an (h, w) tensor.
template <typename S>
Tensor<S> extract_slice(const VolumeT<float>& v, int s) {
    if (s < 0 || s >= v.d) throw std::invalid_argument("extract_slice: index out of range");
    Tensor<S> t({v.h, v.w});
    const std::size_t base = static_cast<std::size_t>(s) * v.slice_size();
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<S>(v.data[base + i]);
    return t;
}

template <typename S>
void insert_slice(VolumeT<float>& v, int s, const Tensor<S>& t) {
    if (t.rank() != 2 || t.dim(0) != v.h || t.dim(1) != v.w)
        throw std::invalid_argument("insert_slice: shape mismatch");
    const std::size_t base = static_cast<std::size_t>(s) * v.slice_size();
    for (std::size_t i = 0; i < t.data.size(); ++i) v.data[base + i] = static_cast<float>(t.data[i]);
}

template <typename T>
void require_same_dims(const VolumeT<T>& a, const VolumeT<T>& b, const char* what) {
    if (!a.same_dims(b))
        throw std::invalid_argument(std::string(what) + ": volume dims mismatch " + a.dims_str() +
                                    " vs " + b.dims_str());
}

}  // namespace mcddpm

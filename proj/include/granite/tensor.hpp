#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace granite {

// Dense row-major tensor, last axis fastest. Channel-last layout (H x W x C)
// is used for all image-like fields.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_size(dims_), T(0)) {}

    TensorT(std::vector<std::size_t> dims, std::vector<T> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (checked_size(dims_) != data_.size())
            throw std::invalid_argument("tensor: dims do not match data length");
    }

    static TensorT full(std::vector<std::size_t> dims, T value) {
        TensorT t(std::move(dims));
        for (auto& v : t.data_) v = value;
        return t;
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    T& operator()(std::size_t i, std::size_t j) {
        return data_[i * dims_[1] + j];
    }
    const T& operator()(std::size_t i, std::size_t j) const {
        return data_[i * dims_[1] + j];
    }
    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
    }

    bool same_shape(const TensorT& other) const { return dims_ == other.dims_; }

    bool operator==(const TensorT& other) const {
        return dims_ == other.dims_ && data_ == other.data_;
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& dims) {
        if (dims.empty()) return 0;
        std::size_t n = 1;
        for (auto d : dims) {
            if (d == 0) throw std::invalid_argument("tensor: zero dimension");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> dims_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
std::string shape_string(const TensorT<T>& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.rank(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.dims()[i]);
    }
    return s + "]";
}

}  // namespace granite

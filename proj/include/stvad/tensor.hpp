#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stvad {

inline std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

// Dense row-major tensor, last axis contiguous. Feature maps use {T, H, W, C}
// with channels innermost; matrices use {rows, cols}; vectors use {n}.
// Copies are shallow (shared storage); use clone() for an independent buffer.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)),
          store_(std::make_shared<std::vector<T>>(numel_of(shape_), T(0))) {}

    Tensor(std::vector<int> shape, std::vector<T> values)
        : shape_(std::move(shape)),
          store_(std::make_shared<std::vector<T>>(std::move(values))) {
        if (store_->size() != numel_of(shape_))
            throw std::invalid_argument("tensor: value count does not match shape");
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.store_->begin(), t.store_->end(), value);
        return t;
    }

    bool defined() const { return static_cast<bool>(store_); }
    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return store_ ? store_->size() : 0; }

    T* data() { return store_->data(); }
    const T* data() const { return store_->data(); }
    T& operator[](std::size_t i) { return (*store_)[i]; }
    const T& operator[](std::size_t i) const { return (*store_)[i]; }

    void fill(T value) { std::fill(store_->begin(), store_->end(), value); }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.store_ = std::make_shared<std::vector<T>>(*store_);
        return t;
    }

    // Same storage, new axes. Element count must be preserved.
    Tensor reshaped(std::vector<int> new_shape) const {
        if (numel_of(new_shape) != size())
            throw std::invalid_argument("tensor: reshape changes element count");
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.store_ = store_;
        return t;
    }

    bool all_finite() const {
        for (const T& v : *store_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        for (std::size_t i = 0; i < size(); ++i) t[i] = static_cast<U>((*store_)[i]);
        return t;
    }

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<T>> store_;

    template <typename U>
    friend class Tensor;
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

}  // namespace stvad

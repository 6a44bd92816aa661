#pragma once

// Dense row-major tensor with value semantics. Images are NCHW.

#include "ssdd/error.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ssdd {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        for (int d : shape_) {
            require(d >= 0, "tensor", "negative dimension in " + shape_str(shape_));
        }
    }
    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        require(data_.size() == shape_numel(shape_), "tensor",
                "value count " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? i + rank() : i)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // NCHW element access for rank-4 tensors.
    T& at(int n, int c, int h, int w) { return data_[offset4(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[offset4(n, c, h, w)]; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const& {
        require(shape_numel(shape) == size(), "tensor", "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }
    Tensor reshaped(Shape shape) && {
        require(shape_numel(shape) == size(), "tensor", "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), std::move(data_));
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    // Slice [start, start+count) along the leading (batch) axis.
    Tensor batch_slice(int start, int count) const {
        require(rank() >= 1 && start >= 0 && count >= 0 && start + count <= shape_[0], "tensor", "batch slice out of range");
        const std::size_t stride = shape_[0] ? size() / static_cast<std::size_t>(shape_[0]) : 0;
        Shape s                  = shape_;
        s[0]                     = count;
        return Tensor(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(start * stride),
                                                   data_.begin() + static_cast<std::ptrdiff_t>((start + count) * stride)));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    std::size_t offset4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    Shape shape_;
    std::vector<T> data_;
};

// Stacks equally shaped tensors along a new leading axis, or concatenates
// along the existing leading axis when `concat` is set.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items, bool concat = true) {
    require(!items.empty(), "tensor", "cannot stack an empty list");
    Shape inner = items.front().shape();
    std::vector<T> values;
    int lead = 0;
    for (const auto& t : items) {
        require(t.shape() == inner, "tensor", "stack of mismatched shapes " + shape_str(t.shape()) + " vs " + shape_str(inner));
        values.insert(values.end(), t.begin(), t.end());
        lead += concat ? t.dim(0) : 1;
    }
    Shape out = inner;
    if (concat) {
        out[0] = lead;
    } else {
        out.insert(out.begin(), lead);
    }
    return Tensor<T>(std::move(out), std::move(values));
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "tensor", "max_abs_diff shape mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, a[i] > b[i] ? a[i] - b[i] : b[i] - a[i]);
    }
    return m;
}

}  // namespace ssdd

#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "forgesem/common.hpp"

namespace forgesem {

// Dense row-major n-d array. Value-semantic: copies copy the buffer, so
// tensors can move freely between threads. f32 is the training type; the
// double instantiation exists for high-precision gradient checking.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

    TensorT(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        FORGESEM_CHECK(data_.size() == checked_numel(shape_),
                       "tensor data length does not match shape");
    }

    static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<int> shape, T v) {
        TensorT t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }

    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // NCHW accessors for the common 4-d case.
    T& at4(int n, int c, int h, int w) {
        return data_[idx4(n, c, h, w)];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data_[idx4(n, c, h, w)];
    }
    std::size_t idx4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    T& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    const T& at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!is_finite_value(v)) return false;
        return true;
    }

    // Exact element-wise equality (bit-level for matching value
    // representations); used by determinism tests.
    bool equal(const TensorT& o) const {
        return shape_ == o.shape_ && data_ == o.data_;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return TensorT<U>(shape_, std::move(out));
    }

    static std::size_t checked_numel(const std::vector<int>& shape) {
        FORGESEM_CHECK(!shape.empty(), "tensor shape must have at least one dimension");
        std::size_t n = 1;
        for (int d : shape) {
            FORGESEM_CHECK(d >= 1, "tensor dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

} // namespace forgesem

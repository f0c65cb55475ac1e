#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lamcast/common.hpp"

namespace lamcast {

// Dense row-major shape, up to 4 axes. Axis 0 is the channel/variable axis
// throughout the library; spatial axes follow as [row, col].
struct Shape {
    std::array<std::int64_t, 4> dims{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<std::int64_t> ds) {
        require(ds.size() >= 1 && ds.size() <= 4, "Shape: rank must be 1..4");
        rank = static_cast<int>(ds.size());
        int i = 0;
        for (auto d : ds) {
            require(d >= 0, "Shape: negative dimension");
            dims[i++] = d;
        }
    }

    std::int64_t operator[](int axis) const {
        require(axis >= 0 && axis < rank, "Shape: axis out of range");
        return dims[axis];
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= dims[i];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (dims[i] != o.dims[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '[';
        for (int i = 0; i < rank; ++i) os << (i ? "," : "") << dims[i];
        os << ']';
        return os.str();
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(shape), data_(shape.numel(), T(0)) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        require(std::int64_t(data_.size()) == shape_.numel(),
                "Tensor: value count " + std::to_string(data_.size()) +
                    " does not match shape " + shape_.str());
    }

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor full(Shape shape, T value) {
        Tensor t(shape);
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return shape_.rank; }
    std::int64_t dim(int axis) const { return shape_[axis]; }
    std::int64_t numel() const { return std::int64_t(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::int64_t i) { return data_[size_t(i)]; }
    const T& operator[](std::int64_t i) const { return data_[size_t(i)]; }

    T& at(std::int64_t i, std::int64_t j) { return data_[size_t(i * shape_[1] + j)]; }
    const T& at(std::int64_t i, std::int64_t j) const { return data_[size_t(i * shape_[1] + j)]; }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[size_t((i * shape_[1] + j) * shape_[2] + k)];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[size_t((i * shape_[1] + j) * shape_[2] + k)];
    }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
        return data_[size_t(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
        return data_[size_t(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    // Same data, new shape; element count must match.
    Tensor reshaped(Shape s) const {
        require(s.numel() == numel(), "reshaped: element count mismatch " + shape_.str() +
                                          " -> " + s.str());
        return Tensor(s, data_);
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!is_finite_value(v)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw contract_error(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
}

}  // namespace lamcast

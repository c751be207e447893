// Dense row-major tensor. The scalar type is a template parameter: float is
// the training precision, double is used by the gradient-check path.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "shiftlab/common.hpp"

namespace shiftlab {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d <= 0) throw shape_error("tensor shape has non-positive dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), T(0)) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw shape_error("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    bool empty() const { return data_.empty(); }
    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t dim(std::int64_t i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Indexed access for the ranks the library actually uses.
    T& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * dim(1) + j)]; }
    const T& at2(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * dim(1) + j)]; }

    T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(((n * dim(1) + c) * dim(2) + h) * dim(3) + w)];
    }
    const T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(((n * dim(1) + c) * dim(2) + h) * dim(3) + w)];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw shape_error("reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
        return Tensor(std::move(shape), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T sum() const {
        T s = 0;
        for (T v : data_) s += v;
        return s;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    std::vector<To> out(t.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(t.vec()[i]);
    return Tensor<To>(t.shape(), std::move(out));
}

// Shift an [N,C,H,W] tensor by (dx, dy) pixels, zero-filling the exposed
// border. Positive dx moves content right, positive dy moves it down.
template <typename T>
Tensor<T> shift2d(const Tensor<T>& x, std::int64_t dx, std::int64_t dy) {
    if (x.rank() != 4) throw shape_error("shift2d expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out(x.shape());
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t iy = 0; iy < h; ++iy) {
                const std::int64_t sy = iy - dy;
                if (sy < 0 || sy >= h) continue;
                for (std::int64_t ix = 0; ix < w; ++ix) {
                    const std::int64_t sx = ix - dx;
                    if (sx < 0 || sx >= w) continue;
                    out.at4(in, ic, iy, ix) = x.at4(in, ic, sy, sx);
                }
            }
    return out;
}

}  // namespace shiftlab

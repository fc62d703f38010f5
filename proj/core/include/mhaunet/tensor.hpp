#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mhaunet/errors.hpp"

namespace mha {

// Dense row-major tensor. Activations use NCHW; parameters use whatever
// layout their op defines (conv weights are OIHW, spectral weights are
// (C, H, Wf, 2)).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        for (int d : shape_) check_shape(d >= 0, "Tensor: negative dimension");
        v_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
    }

    Tensor(std::vector<int> shape, T fill) : Tensor(std::move(shape)) {
        std::fill(v_.begin(), v_.end(), fill);
    }

    static Tensor scalar(T v) {
        Tensor t(std::vector<int>{1});
        t.v_[0] = v;
        return t;
    }

    bool defined() const { return !shape_.empty(); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    int64_t numel() const { return numel_of(shape_); }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    std::vector<T>& vec() { return v_; }
    const std::vector<T>& vec() const { return v_; }

    T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // NCHW accessor.
    T& at4(int n, int c, int h, int w) {
        return v_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(int n, int c, int h, int w) const {
        return v_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(v_.begin(), v_.end(), v); }

    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(v_[static_cast<size_t>(i)]);
        return out;
    }

    bool all_finite() const {
        for (const T& x : v_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

private:
    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = s.empty() ? 0 : 1;
        for (int d : s) n *= d;
        return n;
    }

    std::vector<int> shape_;
    std::vector<T> v_;
};

template <typename T>
int batch_of(const Tensor<T>& t) { return t.dim(0); }
template <typename T>
int channels_of(const Tensor<T>& t) { return t.dim(1); }
template <typename T>
int height_of(const Tensor<T>& t) { return t.dim(2); }
template <typename T>
int width_of(const Tensor<T>& t) { return t.dim(3); }

template <typename T>
void check_nchw(const Tensor<T>& t, const std::string& who) {
    check_shape(t.ndim() == 4, who + ": expected 4-D NCHW tensor, got " + t.shape_str());
}

}  // namespace mha

#pragma once

// Dense row-major matrices and the handful of kernels the model needs.
// Every tensor in this library is two-dimensional; vectors are 1×n rows.
// The scalar type is a template parameter: float for training and inference,
// double where a finite-difference oracle needs the extra precision.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfsgc {

template <typename T>
class BasicArray {
public:
    using value_type = T;

    BasicArray() = default;
    BasicArray(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    BasicArray(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Array: data length does not match shape");
    }

    static BasicArray matrix(std::initializer_list<std::initializer_list<T>> rows) {
        BasicArray out;
        out.rows_ = rows.size();
        out.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
        out.data_.reserve(out.rows_ * out.cols_);
        for (const auto& r : rows) {
            if (r.size() != out.cols_) throw std::invalid_argument("Array::matrix: ragged rows");
            out.data_.insert(out.data_.end(), r.begin(), r.end());
        }
        return out;
    }

    static BasicArray row_vector(std::vector<T> values) {
        const std::size_t n = values.size();
        return BasicArray(1, n, std::move(values));
    }

    template <typename U>
    BasicArray<U> cast() const {
        return BasicArray<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    template <typename U>
    bool same_shape(const BasicArray<U>& o) const { return rows_ == o.rows() && cols_ == o.cols(); }

    T& operator()(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    T operator()(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const BasicArray& a, const BasicArray& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Array = BasicArray<float>;

template <typename T>
std::string shape_string(const BasicArray<T>& a) {
    return "[" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + "]";
}

namespace kernel {

// c += a · b            a: m×k, b: k×n, c: m×n
template <typename T>
void gemm_nn(const BasicArray<T>& a, const BasicArray<T>& b, BasicArray<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const T* A = a.data();
    const T* B = b.data();
    T* C = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            const T* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a · bᵀ           a: m×k, b: n×k, c: m×n
template <typename T>
void gemm_nt(const BasicArray<T>& a, const BasicArray<T>& b, BasicArray<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    const T* A = a.data();
    const T* B = b.data();
    T* C = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = B + j * k;
            T s = T(0);
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            C[i * n + j] += s;
        }
    }
}

// c += aᵀ · b           a: k×m, b: k×n, c: m×n
template <typename T>
void gemm_tn(const BasicArray<T>& a, const BasicArray<T>& b, BasicArray<T>& c) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    const T* A = a.data();
    const T* B = b.data();
    T* C = c.data();
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = A[p * m + i];
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernel

template <typename T>
BasicArray<T> matmul(const BasicArray<T>& a, const BasicArray<T>& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: shape mismatch " + shape_string(a) + " · " + shape_string(b));
    BasicArray<T> c(a.rows(), b.cols());
    kernel::gemm_nn(a, b, c);
    return c;
}

template <typename T>
BasicArray<T> transpose(const BasicArray<T>& a) {
    BasicArray<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    T s = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
bool all_finite(const BasicArray<T>& a) {
    return std::all_of(a.values().begin(), a.values().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace tfsgc

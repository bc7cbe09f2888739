#pragma once

// Dense row-major matrices and batches, with the handful of kernels the
// networks need. GEMM goes through Eigen maps over our own storage.

#include <smoe/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace smoe {

namespace detail {

template <typename T>
using RowMajorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstMap = Eigen::Map<const RowMajorMatrix<T>>;

template <typename T>
using MutableMap = Eigen::Map<RowMajorMatrix<T>>;

} // namespace detail

/// Row-major 2-D array. Shared storage for Matrix and Batch.
template <typename T>
class Array2D {
public:
    using value_type = T;

    Array2D() = default;
    Array2D(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Array2D(std::size_t rows, std::size_t cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data))
    {
        require(data_.size() == rows_ * cols_, ErrorKind::Dimension,
                "data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Array2D&) const = default;

protected:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Parameter matrix (in_dim x out_dim for every weight in this library).
template <typename T>
class Matrix : public Array2D<T> {
public:
    using Array2D<T>::Array2D;

    static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            m(i, i) = T(1);
        return m;
    }
};

/// One sample per row; the batch dimension leads.
template <typename T>
class Batch : public Array2D<T> {
public:
    using Array2D<T>::Array2D;

    std::size_t batch_size() const noexcept { return this->rows_; }
    std::size_t dim() const noexcept { return this->cols_; }
};

template <typename To, typename From>
Matrix<To> cast(const Matrix<From>& m)
{
    std::vector<To> v(m.values().begin(), m.values().end());
    return Matrix<To>(m.rows(), m.cols(), std::move(v));
}

template <typename To, typename From>
Batch<To> cast(const Batch<From>& b)
{
    std::vector<To> v(b.values().begin(), b.values().end());
    return Batch<To>(b.rows(), b.cols(), std::move(v));
}

template <typename T>
bool all_finite(std::span<const T> xs) noexcept
{
    return std::all_of(xs.begin(), xs.end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Products

template <typename T>
Batch<T> matmul(const Batch<T>& a, const Matrix<T>& w)
{
    require(a.dim() == w.rows(), ErrorKind::Dimension,
            "matmul: batch dim " + std::to_string(a.dim()) + " != weight rows " + std::to_string(w.rows()));
    Batch<T> out(a.batch_size(), w.cols());
    if (a.batch_size() == 0 || w.cols() == 0)
        return out;
    detail::MutableMap<T>(out.data(), out.rows(), out.cols()).noalias() =
        detail::ConstMap<T>(a.data(), a.rows(), a.cols()) * detail::ConstMap<T>(w.data(), w.rows(), w.cols());
    return out;
}

/// Matrix-matrix product, used for composition checks.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b)
{
    require(a.cols() == b.rows(), ErrorKind::Dimension, "matmul: inner dimensions differ");
    Matrix<T> out(a.rows(), b.cols());
    if (out.empty())
        return out;
    detail::MutableMap<T>(out.data(), out.rows(), out.cols()).noalias() =
        detail::ConstMap<T>(a.data(), a.rows(), a.cols()) * detail::ConstMap<T>(b.data(), b.rows(), b.cols());
    return out;
}

/// out = a * w^T. Used when propagating gradients back through a weight.
template <typename T>
Batch<T> matmul_transposed(const Batch<T>& a, const Matrix<T>& w)
{
    require(a.dim() == w.cols(), ErrorKind::Dimension, "matmul_transposed: batch dim != weight cols");
    Batch<T> out(a.batch_size(), w.rows());
    if (out.empty())
        return out;
    detail::MutableMap<T>(out.data(), out.rows(), out.cols()).noalias() =
        detail::ConstMap<T>(a.data(), a.rows(), a.cols()) * detail::ConstMap<T>(w.data(), w.rows(), w.cols()).transpose();
    return out;
}

/// grad += x^T * d, the weight gradient of a linear map x -> x*W.
template <typename T>
void accumulate_outer(Matrix<T>& grad, const Batch<T>& x, const Batch<T>& d)
{
    require(grad.rows() == x.dim() && grad.cols() == d.dim() && x.batch_size() == d.batch_size(), ErrorKind::Dimension,
            "accumulate_outer: shape mismatch");
    if (grad.empty() || x.batch_size() == 0)
        return;
    detail::MutableMap<T>(grad.data(), grad.rows(), grad.cols()).noalias() +=
        detail::ConstMap<T>(x.data(), x.rows(), x.cols()).transpose() * detail::ConstMap<T>(d.data(), d.rows(), d.cols());
}

template <typename T>
void add_row_vector(Batch<T>& b, std::span<const T> bias)
{
    require(bias.size() == b.dim(), ErrorKind::Dimension, "bias length != batch dim");
    if (b.empty())
        return;
    detail::MutableMap<T>(b.data(), b.rows(), b.cols()).rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), static_cast<Eigen::Index>(bias.size()));
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
T elu(T x, T alpha = T(1)) noexcept
{
    return x > T(0) ? x : alpha * std::expm1(x);
}

/// Derivative of elu with respect to its input.
template <typename T>
T elu_derivative(T x, T alpha = T(1)) noexcept
{
    return x > T(0) ? T(1) : alpha * std::exp(x);
}

template <typename T>
void elu_inplace(Batch<T>& x, T alpha = T(1))
{
    if (x.empty())
        return;
    auto a = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(x.data(), static_cast<Eigen::Index>(x.size()));
    a = (a > T(0)).select(a, alpha * (a.exp() - T(1)));
}

template <typename T>
Batch<T> elu(Batch<T> x, T alpha = T(1))
{
    elu_inplace(x, alpha);
    return x;
}

/// Max-subtracted softmax. Entries equal to -inf come out as exactly 0.
template <typename T>
void softmax_inplace(std::span<T> x)
{
    const T neg_inf = -std::numeric_limits<T>::infinity();
    T max_v = neg_inf;
    for (T v : x)
        max_v = std::max(max_v, v);
    require(max_v != neg_inf, ErrorKind::InvalidArgument, "softmax: every entry is -inf");
    T sum = T(0);
    for (T& v : x) {
        v = (v == neg_inf) ? T(0) : std::exp(v - max_v);
        sum += v;
    }
    for (T& v : x)
        v /= sum;
}

template <typename T>
std::vector<T> softmax(std::span<const T> x)
{
    std::vector<T> out(x.begin(), x.end());
    softmax_inplace(std::span<T>(out));
    return out;
}

template <typename T>
std::vector<T> softmax(const std::vector<T>& x)
{
    return softmax(std::span<const T>(x));
}

} // namespace smoe

#pragma once

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace dctkit {

/**
 * @brief Dense row-major matrix of real numbers.
 *
 * Every per-point feature table, weight matrix, attention map and score vector in the
 * library is a `DenseMatrix`. Vectors are stored as 1-row or 1-column matrices.
 *
 * @tparam T Floating point type, `float` or `double`.
 */
template <typename T>
class DenseMatrix {
public:
    using value_type = T;

    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows * cols) {
            throw ShapeError("DenseMatrix: " + std::to_string(values_.size()) + " values for shape " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    DenseMatrix(std::initializer_list<std::initializer_list<T>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        values_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) {
                throw ShapeError("DenseMatrix: ragged initializer");
            }
            values_.insert(values_.end(), r.begin(), r.end());
        }
    }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix out(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            out(i, i) = T(1);
        }
        return out;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    T& operator[](std::size_t i) noexcept { return values_[i]; }
    const T& operator[](std::size_t i) const noexcept { return values_[i]; }

    std::span<T> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {values_.data() + r * cols_, cols_}; }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }

    void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

    std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    template <typename U>
    DenseMatrix<U> cast() const {
        DenseMatrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < values_.size(); ++i) {
            out[i] = static_cast<U>(values_[i]);
        }
        return out;
    }

    bool operator==(const DenseMatrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> values_;
};

template <typename T>
bool all_finite(const DenseMatrix<T>& m) {
    return std::all_of(m.values().begin(), m.values().end(), [](T v) { return std::isfinite(v); });
}

/// Throws NumericError naming `where` when `m` holds a NaN or infinity.
template <typename T>
void require_finite(const DenseMatrix<T>& m, const char* where) {
    if (!all_finite(m)) {
        throw NumericError(std::string(where) + ": non-finite value in " + m.shape_string() + " input");
    }
}

template <typename T>
void require_same_shape(const DenseMatrix<T>& a, const DenseMatrix<T>& b, const char* where) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

/// Standard product. Each output entry is accumulated over the inner index in increasing order.
template <typename T>
DenseMatrix<T> matmul(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    require_finite(a, "matmul");
    require_finite(b, "matmul");
    DenseMatrix<T> out(a.rows(), b.cols());
    const std::size_t inner = a.cols();
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T* orow = out.data() + i * n;
        const T* arow = a.data() + i * inner;
        for (std::size_t p = 0; p < inner; ++p) {
            const T av = arow[p];
            const T* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

template <typename T>
DenseMatrix<T> transpose(const DenseMatrix<T>& a) {
    DenseMatrix<T> out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

/// Row-wise softmax with per-row max subtraction.
template <typename T>
DenseMatrix<T> softmax_rows(const DenseMatrix<T>& x) {
    require_finite(x, "softmax_rows");
    DenseMatrix<T> out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto in = x.row(i);
        auto o = out.row(i);
        if (in.empty()) {
            continue;
        }
        const T mx = *std::max_element(in.begin(), in.end());
        T total = 0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (auto& v : o) {
            v /= total;
        }
    }
    return out;
}

/// Column-wise softmax with per-column max subtraction.
template <typename T>
DenseMatrix<T> softmax_cols(const DenseMatrix<T>& x) {
    require_finite(x, "softmax_cols");
    DenseMatrix<T> out(x.rows(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        T mx = x.rows() == 0 ? T(0) : x(0, j);
        for (std::size_t i = 1; i < x.rows(); ++i) {
            mx = std::max(mx, x(i, j));
        }
        T total = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            out(i, j) = std::exp(x(i, j) - mx);
            total += out(i, j);
        }
        for (std::size_t i = 0; i < x.rows(); ++i) {
            out(i, j) /= total;
        }
    }
    return out;
}

template <typename T>
DenseMatrix<T> gather_rows(const DenseMatrix<T>& m, std::span<const std::size_t> indices) {
    DenseMatrix<T> out(indices.size(), m.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= m.rows()) {
            throw ParameterError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                                 std::to_string(m.rows()) + " rows");
        }
        std::copy_n(m.row(indices[r]).data(), m.cols(), out.row(r).data());
    }
    return out;
}

/// Squared Euclidean distance between two equally sized rows, summed in index order.
template <typename T>
T squared_distance(std::span<const T> a, std::span<const T> b) noexcept {
    T acc = 0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        const T d = a[c] - b[c];
        acc += d * d;
    }
    return acc;
}

template <typename T>
T max_abs_diff(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    T worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

template <typename T>
std::string to_string(const DenseMatrix<T>& m) {
    std::ostringstream os;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            os << (j ? " " : "") << m(i, j);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace dctkit

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace inpad {

/// Dense row-major matrix of doubles. Rank is always 2; token grids,
/// score maps and channel planes all map onto (rows, cols).
class Tensor {
public:
    Tensor() = default;
    Tensor(int64_t rows, int64_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows * cols), fill) {
        if (rows < 0 || cols < 0) {
            throw std::invalid_argument("Tensor: negative dimension");
        }
    }

    static Tensor zeros(int64_t rows, int64_t cols) { return Tensor(rows, cols, 0.0); }
    static Tensor full(int64_t rows, int64_t cols, double v) { return Tensor(rows, cols, v); }
    static Tensor identity(int64_t n) {
        Tensor t(n, n);
        for (int64_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }
    static Tensor from_vector(int64_t rows, int64_t cols, std::vector<double> v) {
        if (static_cast<int64_t>(v.size()) != rows * cols) {
            throw std::invalid_argument("Tensor::from_vector: size mismatch");
        }
        Tensor t;
        t.rows_ = rows;
        t.cols_ = cols;
        t.data_ = std::move(v);
        return t;
    }

    int64_t rows() const { return rows_; }
    int64_t cols() const { return cols_; }
    int64_t size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols_ + j)]; }
    double operator()(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols_ + j)]; }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& vec() const { return data_; }
    std::vector<double>& vec() { return data_; }

    bool all_finite() const;
    double sum() const;
    double min() const;
    double max() const;
    double frobenius_norm() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

private:
    int64_t rows_ = 0;
    int64_t cols_ = 0;
    std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);

/// a (n x k) times b (k x m)
Tensor matmul(const Tensor& a, const Tensor& b);
/// a (n x c) times b^T (m x c) -> n x m
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a^T (k x n) times b (k x m) -> n x m
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);

/// Cosine similarity of two equal-length vectors with norm clamping at eps.
/// Zero vectors yield cosine 0.
double cosine(const double* a, const double* b, int64_t n, double eps = 1e-8);
double cosine(const Tensor& a, const Tensor& b, double eps = 1e-8);

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& where);

} // namespace inpad

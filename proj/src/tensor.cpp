// SPDX-License-Identifier: Apache-2.0
#include "inpad/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace inpad {

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::min() const {
    if (data_.empty()) throw std::runtime_error("Tensor::min on empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    if (data_.empty()) throw std::runtime_error("Tensor::max on empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

double Tensor::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

Tensor& Tensor::operator+=(const Tensor& o) {
    check_same_shape(*this, o, "Tensor::operator+=");
    for (int64_t i = 0; i < size(); ++i) data_[static_cast<size_t>(i)] += o[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    check_same_shape(*this, o, "Tensor::operator-=");
    for (int64_t i = 0; i < size(); ++i) data_[static_cast<size_t>(i)] -= o[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r += b;
    return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r -= b;
    return r;
}

Tensor operator*(const Tensor& a, double s) {
    Tensor r = a;
    r *= s;
    return r;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tensor r(a.rows(), b.cols());
    for (int64_t i = 0; i < a.rows(); ++i) {
        for (int64_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int64_t j = 0; j < b.cols(); ++j) {
                r(i, j) += aik * b(k, j);
            }
        }
    }
    return r;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    Tensor r(a.rows(), b.rows());
    for (int64_t i = 0; i < a.rows(); ++i) {
        for (int64_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (int64_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            r(i, j) = s;
        }
    }
    return r;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
    Tensor r(a.cols(), b.cols());
    for (int64_t k = 0; k < a.rows(); ++k) {
        for (int64_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (int64_t j = 0; j < b.cols(); ++j) {
                r(i, j) += aki * b(k, j);
            }
        }
    }
    return r;
}

Tensor transpose(const Tensor& a) {
    Tensor r(a.cols(), a.rows());
    for (int64_t i = 0; i < a.rows(); ++i)
        for (int64_t j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
    return r;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "hadamard");
    Tensor r = a;
    for (int64_t i = 0; i < r.size(); ++i) r[i] *= b[i];
    return r;
}

double cosine(const double* a, const double* b, int64_t n, double eps) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    const double s = dot / (std::max(na, eps) * std::max(nb, eps));
    return std::clamp(s, -1.0, 1.0);
}

double cosine(const Tensor& a, const Tensor& b, double eps) {
    check_same_shape(a, b, "cosine");
    return cosine(a.data(), b.data(), a.size(), eps);
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& where) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(where + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                    "x" + std::to_string(b.cols()) + ")");
    }
}

} // namespace inpad

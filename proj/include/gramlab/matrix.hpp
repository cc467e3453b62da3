#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gramlab {

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct NotPositiveDefinite : std::runtime_error {
    explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};
struct NotSymmetric : std::runtime_error {
    explicit NotSymmetric(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateInput : std::runtime_error {
    explicit DegenerateInput(const std::string& what) : std::runtime_error(what) {}
};
struct ConstantInput : std::runtime_error {
    explicit ConstantInput(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateGram : std::runtime_error {
    explicit DegenerateGram(const std::string& what) : std::runtime_error(what) {}
};
struct AssumptionViolated : std::runtime_error {
    explicit AssumptionViolated(const std::string& what) : std::runtime_error(what) {}
};
struct NotHomogeneous : std::runtime_error {
    explicit NotHomogeneous(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateLabels : std::runtime_error {
    explicit DegenerateLabels(const std::string& what) : std::runtime_error(what) {}
};
struct NumericalFailure : std::runtime_error {
    explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix of 64-bit reals. The universal numeric carrier:
/// weights, batches of hidden states, Gram matrices, label matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeMismatch("Matrix: data length does not match rows*cols");
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

using EigenMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline EigenMap as_eigen(Matrix& m) {
    return EigenMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}
inline ConstEigenMap as_eigen(const Matrix& m) {
    return ConstEigenMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                         static_cast<Eigen::Index>(m.cols()));
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
    return out;
}

/// AᵀB without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ShapeMismatch("matmul_tn: inner dims differ");
    Matrix out(a.cols(), b.cols());
    as_eigen(out).noalias() = as_eigen(a).transpose() * as_eigen(b);
    return out;
}

/// ABᵀ without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeMismatch("matmul_nt: inner dims differ");
    Matrix out(a.rows(), b.rows());
    as_eigen(out).noalias() = as_eigen(a) * as_eigen(b).transpose();
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    as_eigen(out) = as_eigen(a).transpose();
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    as_eigen(out) += as_eigen(b);
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    as_eigen(out) -= as_eigen(b);
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    as_eigen(out) *= s;
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out(a.rows(), a.cols());
    as_eigen(out) = as_eigen(a).cwiseProduct(as_eigen(b));
    return out;
}

inline double frobenius_norm(const Matrix& a) { return as_eigen(a).norm(); }

inline double trace(const Matrix& a) {
    std::size_t n = std::min(a.rows(), a.cols());
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) t += a(i, i);
    return t;
}

inline double dot(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
    return m;
}

inline bool is_symmetric(const Matrix& a, double rel_tol) {
    if (a.rows() != a.cols()) return false;
    double scale = std::max(max_abs(a), 1e-300);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            if (std::abs(a(i, j) - a(j, i)) > rel_tol * scale) return false;
        }
    }
    return true;
}

}  // namespace gramlab

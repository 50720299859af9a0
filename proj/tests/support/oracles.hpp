#pragma once

#include <stdexcept>
#include <vector>

namespace testsupport {

/// Solves the linear system A x = b in place (Gaussian elimination with
/// partial pivoting). A is n x n row-major, b has n rows and m columns.
inline void solve_linear(std::vector<double>& A, std::vector<double>& b, int n, int m) {
    for (int k = 0; k < n; ++k) {
        int pivot = k;
        for (int i = k + 1; i < n; ++i)
            if (std::fabs(A[i * n + k]) > std::fabs(A[pivot * n + k])) pivot = i;
        if (std::fabs(A[pivot * n + k]) < 1e-12) throw std::runtime_error("solve_linear: singular");
        if (pivot != k) {
            for (int j = 0; j < n; ++j) std::swap(A[k * n + j], A[pivot * n + j]);
            for (int j = 0; j < m; ++j) std::swap(b[k * m + j], b[pivot * m + j]);
        }
        for (int i = k + 1; i < n; ++i) {
            const double f = A[i * n + k] / A[k * n + k];
            for (int j = k; j < n; ++j) A[i * n + j] -= f * A[k * n + j];
            for (int j = 0; j < m; ++j) b[i * m + j] -= f * b[k * m + j];
        }
    }
    for (int i = n - 1; i >= 0; --i) {
        for (int j = 0; j < m; ++j) {
            double acc = b[i * m + j];
            for (int k2 = i + 1; k2 < n; ++k2) acc -= A[i * n + k2] * b[k2 * m + j];
            b[i * m + j] = acc / A[i * n + i];
        }
    }
}

/// Closed-form least squares: returns W (d x q, row-major) minimizing
/// ||X W - Y||_F, with X (n x d) and Y (n x q), plus intercept if X carries a
/// ones column. Normal equations.
inline std::vector<double> least_squares(const std::vector<double>& X,
                                         const std::vector<double>& Y, int n, int d, int q) {
    std::vector<double> xtx(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> xty(static_cast<std::size_t>(d) * q, 0.0);
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < d; ++i) {
            const double xi = X[r * d + i];
            for (int j = 0; j < d; ++j) xtx[i * d + j] += xi * X[r * d + j];
            for (int j = 0; j < q; ++j) xty[i * q + j] += xi * Y[r * q + j];
        }
    }
    solve_linear(xtx, xty, d, q);
    return xty;
}

}  // namespace testsupport

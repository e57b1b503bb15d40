#pragma once

#include <cblas.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "seglm/mat.hpp"

namespace seglm {

template <typename T>
inline constexpr T neg_inf = -std::numeric_limits<T>::infinity();

namespace detail {

inline void gemm(bool ta, bool tb, idx m, idx n, idx k, float alpha, const float* a, idx lda,
                 const float* b, idx ldb, float beta, float* c, idx ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool ta, bool tb, idx m, idx n, idx k, double alpha, const double* a, idx lda,
                 const double* b, idx ldb, double beta, double* c, idx ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace detail

// c = alpha * op(a) * op(b) + beta * c, shapes checked against c.
template <typename T>
void matmul(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool ta = false, bool tb = false,
            T alpha = T(1), T beta = T(0)) {
    const idx m = ta ? a.cols() : a.rows();
    const idx k = ta ? a.rows() : a.cols();
    const idx kb = tb ? b.cols() : b.rows();
    const idx n = tb ? b.rows() : b.cols();
    if (k != kb || c.rows() != m || c.cols() != n) throw std::invalid_argument("matmul: shape mismatch");
    if (m == 0 || n == 0 || k == 0) return;
    detail::gemm(ta, tb, m, n, k, alpha, a.data(), a.cols(), b.data(), b.cols(), beta, c.data(),
                 c.cols());
}

// Raw-pointer gemm for block views into larger row-major buffers.
template <typename T>
void gemm_raw(bool ta, bool tb, idx m, idx n, idx k, T alpha, const T* a, idx lda, const T* b,
              idx ldb, T beta, T* c, idx ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    detail::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void add_inplace(Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    T* pa = a.data();
    const T* pb = b.data();
    for (idx i = 0, e = a.size(); i < e; ++i) pa[i] += pb[i];
}

// In-place row softmax where -inf marks masked entries. Rows with no finite
// entry become all-zero instead of NaN.
template <typename T>
void row_softmax_masked(Mat<T>& m) {
    for (idx i = 0; i < m.rows(); ++i) {
        T* row = m.row(i);
        T mx = neg_inf<T>;
        for (idx j = 0; j < m.cols(); ++j)
            if (row[j] > mx) mx = row[j];
        if (mx == neg_inf<T>) {
            for (idx j = 0; j < m.cols(); ++j) row[j] = T(0);
            continue;
        }
        T sum = T(0);
        for (idx j = 0; j < m.cols(); ++j) {
            if (row[j] == neg_inf<T>) {
                row[j] = T(0);
            } else {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
        }
        const T inv = T(1) / sum;
        for (idx j = 0; j < m.cols(); ++j) row[j] *= inv;
    }
}

// Backward of row_softmax_masked: given weights w = softmax(z) and dL/dw,
// writes dL/dz. Masked entries have w == 0 and get zero gradient. All-zero
// rows (fully masked) propagate nothing.
template <typename T>
void row_softmax_backward(const Mat<T>& w, const Mat<T>& dw, Mat<T>& dz) {
    for (idx i = 0; i < w.rows(); ++i) {
        const T* wr = w.row(i);
        const T* dr = dw.row(i);
        T* zr = dz.row(i);
        T dot = T(0);
        for (idx j = 0; j < w.cols(); ++j) dot += wr[j] * dr[j];
        for (idx j = 0; j < w.cols(); ++j) zr[j] = wr[j] * (dr[j] - dot);
    }
}

template <typename T>
struct LayerNormCache {
    Mat<T> mean;  // n x 1
    Mat<T> rstd;  // n x 1
};

template <typename T>
void layernorm_forward(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, Mat<T>& y,
                       LayerNormCache<T>& cache, T eps = T(1e-5)) {
    const idx n = x.rows(), d = x.cols();
    cache.mean = Mat<T>(n, 1);
    cache.rstd = Mat<T>(n, 1);
    for (idx i = 0; i < n; ++i) {
        const T* xr = x.row(i);
        T mu = T(0);
        for (idx j = 0; j < d; ++j) mu += xr[j];
        mu /= T(d);
        T var = T(0);
        for (idx j = 0; j < d; ++j) {
            const T dv = xr[j] - mu;
            var += dv * dv;
        }
        var /= T(d);
        const T rstd = T(1) / std::sqrt(var + eps);
        cache.mean(i, 0) = mu;
        cache.rstd(i, 0) = rstd;
        T* yr = y.row(i);
        for (idx j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rstd * gain(0, j) + bias(0, j);
    }
}

template <typename T>
void layernorm_backward(const Mat<T>& x, const Mat<T>& gain, const LayerNormCache<T>& cache,
                        const Mat<T>& dy, Mat<T>& dx, Mat<T>& dgain, Mat<T>& dbias) {
    const idx n = x.rows(), d = x.cols();
    for (idx i = 0; i < n; ++i) {
        const T* xr = x.row(i);
        const T* dyr = dy.row(i);
        T* dxr = dx.row(i);
        const T mu = cache.mean(i, 0);
        const T rstd = cache.rstd(i, 0);
        T sum_dyg = T(0), sum_dyg_xhat = T(0);
        for (idx j = 0; j < d; ++j) {
            const T xhat = (xr[j] - mu) * rstd;
            const T dyg = dyr[j] * gain(0, j);
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            dgain(0, j) += dyr[j] * xhat;
            dbias(0, j) += dyr[j];
        }
        const T inv_d = T(1) / T(d);
        for (idx j = 0; j < d; ++j) {
            const T xhat = (xr[j] - mu) * rstd;
            const T dyg = dyr[j] * gain(0, j);
            dxr[j] += rstd * (dyg - inv_d * sum_dyg - xhat * inv_d * sum_dyg_xhat);
        }
    }
}

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
    const T pdf = T(0.3989422804014327) * std::exp(T(-0.5) * x * x);
    return cdf + x * pdf;
}

}  // namespace seglm

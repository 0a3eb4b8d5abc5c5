#include "sidkit/kernels.hpp"

// Scalar reference kernels. These define the semantics; the SIMD variants
// must agree with them up to floating-point reassociation.

namespace sidkit::kernels {
namespace {

void s_gemm_nn(int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      const double av = alpha * a[static_cast<size_t>(i) * lda + p];
      const double* brow = b + static_cast<size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_gemm_nt(int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * lda;
    double* crow = c + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * ldb;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * crow[j]);
    }
  }
}

void s_gemm_tn(int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * lda;
    const double* brow = b + static_cast<size_t>(p) * ldb;
    for (int i = 0; i < m; ++i) {
      const double av = alpha * arow[i];
      double* crow = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double s_dot(int n, const double* x, const double* y) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double s_sum(int n, const double* x) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double s_sumsq(int n, const double* x) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

void s_axpy(int n, double a, const double* x, double* y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_axpby(int n, double a, const double* x, double b, double* y) {
  for (int i = 0; i < n; ++i) y[i] = a * x[i] + b * y[i];
}

void s_scal(int n, double a, double* x) {
  for (int i = 0; i < n; ++i) x[i] *= a;
}

void s_vadd(int n, const double* x, const double* y, double* z) {
  for (int i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void s_vsub(int n, const double* x, const double* y, double* z) {
  for (int i = 0; i < n; ++i) z[i] = x[i] - y[i];
}

void s_vmul(int n, const double* x, const double* y, double* z) {
  for (int i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void s_affine(int n, double a, double b, const double* x, double* y) {
  for (int i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

void s_relu_fwd(int n, const double* x, double* y) {
  for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_bwd(int n, const double* y, const double* dy, double* dx) {
  for (int i = 0; i < n; ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
}

}  // namespace

const Backend& scalar_backend() {
  static const Backend backend = {
      "scalar",  s_gemm_nn, s_gemm_nt, s_gemm_tn, s_dot,   s_sum,
      s_sumsq,   s_axpy,    s_axpby,   s_scal,    s_vadd,  s_vsub,
      s_vmul,    s_affine,  s_relu_fwd, s_relu_bwd,
  };
  return backend;
}

}  // namespace sidkit::kernels

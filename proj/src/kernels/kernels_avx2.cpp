#include "sidkit/kernels.hpp"

// AVX2+FMA variants. Compiled only on x86-64 (see src/CMakeLists.txt);
// dispatch guards execution behind a cpuid check. Semantics match the
// scalar references up to floating-point reassociation in reductions.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

namespace sidkit::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

// crow[j] += av * brow[j], vectorized over j
inline void row_axpy(int n, double av, const double* brow, double* crow) {
  const __m256d va = _mm256_set1_pd(av);
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_loadu_pd(crow + j);
    __m256d c1 = _mm256_loadu_pd(crow + j + 4);
    c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), c0);
    c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j + 4), c1);
    _mm256_storeu_pd(crow + j, c0);
    _mm256_storeu_pd(crow + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(crow + j);
    c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), c0);
    _mm256_storeu_pd(crow + j, c0);
  }
  for (; j < n; ++j) crow[j] += av * brow[j];
}

inline void scale_row(int n, double beta, double* crow) {
  if (beta == 1.0) return;
  if (beta == 0.0) {
    for (int j = 0; j < n; ++j) crow[j] = 0.0;
    return;
  }
  const __m256d vb = _mm256_set1_pd(beta);
  int j = 0;
  for (; j + 4 <= n; j += 4)
    _mm256_storeu_pd(crow + j, _mm256_mul_pd(vb, _mm256_loadu_pd(crow + j)));
  for (; j < n; ++j) crow[j] *= beta;
}

void v_gemm_nn(int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * ldc;
    scale_row(n, beta, crow);
    const double* arow = a + static_cast<size_t>(i) * lda;
    int p = 0;
    // two k-steps at a time halves the traffic on crow
    for (; p + 2 <= k; p += 2) {
      const double a0 = alpha * arow[p];
      const double a1 = alpha * arow[p + 1];
      const double* b0 = b + static_cast<size_t>(p) * ldb;
      const double* b1 = b0 + ldb;
      const __m256d va0 = _mm256_set1_pd(a0);
      const __m256d va1 = _mm256_set1_pd(a1);
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d cv = _mm256_loadu_pd(crow + j);
        cv = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b0 + j), cv);
        cv = _mm256_fmadd_pd(va1, _mm256_loadu_pd(b1 + j), cv);
        _mm256_storeu_pd(crow + j, cv);
      }
      for (; j < n; ++j) crow[j] += a0 * b0[j] + a1 * b1[j];
    }
    for (; p < k; ++p)
      row_axpy(n, alpha * arow[p], b + static_cast<size_t>(p) * ldb, crow);
  }
}

void v_gemm_nt(int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * lda;
    double* crow = c + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * ldb;
      __m256d acc0 = _mm256_setzero_pd();
      __m256d acc1 = _mm256_setzero_pd();
      int p = 0;
      for (; p + 8 <= k; p += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p),
                               _mm256_loadu_pd(brow + p), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p + 4),
                               _mm256_loadu_pd(brow + p + 4), acc1);
      }
      for (; p + 4 <= k; p += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p),
                               _mm256_loadu_pd(brow + p), acc0);
      double acc = hsum(_mm256_add_pd(acc0, acc1));
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * crow[j]);
    }
  }
}

void v_gemm_tn(int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i)
    scale_row(n, beta, c + static_cast<size_t>(i) * ldc);
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * lda;
    const double* brow = b + static_cast<size_t>(p) * ldb;
    for (int i = 0; i < m; ++i)
      row_axpy(n, alpha * arow[i], brow, c + static_cast<size_t>(i) * ldc);
  }
}

double v_dot(int n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double v_sum(int n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double v_sumsq(int n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

void v_axpy(int n, double a, const double* x, double* y) {
  row_axpy(n, a, x, y);
}

void v_axpby(int n, double a, const double* x, double b, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_mul_pd(vb, _mm256_loadu_pd(y + i));
    yv = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), yv);
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] = a * x[i] + b * y[i];
}

void v_scal(int n, double a, double* x) {
  const __m256d va = _mm256_set1_pd(a);
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

void v_vadd(int n, const double* x, const double* y, double* z) {
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void v_vsub(int n, const double* x, const double* y, double* z) {
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] - y[i];
}

void v_vmul(int n, const double* x, const double* y, double* z) {
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

void v_affine(int n, double a, double b, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
  for (; i < n; ++i) y[i] = a * x[i] + b;
}

void v_relu_fwd(int n, const double* x, double* y) {
  const __m256d zero = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_bwd(int n, const double* y, const double* dy, double* dx) {
  const __m256d zero = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(y + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
  }
  for (; i < n; ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
}

}  // namespace

const Backend& avx2_backend() {
  static const Backend backend = {
      "avx2",   v_gemm_nn, v_gemm_nt, v_gemm_tn, v_dot,   v_sum,
      v_sumsq,  v_axpy,    v_axpby,   v_scal,    v_vadd,  v_vsub,
      v_vmul,   v_affine,  v_relu_fwd, v_relu_bwd,
  };
  return backend;
}

}  // namespace sidkit::kernels

#endif  // x86-64

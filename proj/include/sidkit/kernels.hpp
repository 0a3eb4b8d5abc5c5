#pragma once

#include <cstddef>
#include <string>

// Double-precision arithmetic kernels used by the tensor ops and losses.
// Every kernel has a scalar reference implementation and, on x86-64 with
// AVX2+FMA, a vectorized variant. The active backend is chosen once at
// runtime (cpuid), overridable via SIDKIT_KERNELS=scalar|avx2 or select().
// SIMD variants are equivalence-tested against the scalar references.

namespace sidkit::kernels {

struct Backend {
  const char* name;

  // C[M x N] = alpha * op(A) * op(B) + beta * C, row-major, ld = row stride.
  // nn: A[M x K], B[K x N]
  // nt: A[M x K], B[N x K]   (B transposed)
  // tn: A[K x M], B[K x N]   (A transposed)
  void (*gemm_nn)(int m, int n, int k, double alpha, const double* a, int lda,
                  const double* b, int ldb, double beta, double* c, int ldc);
  void (*gemm_nt)(int m, int n, int k, double alpha, const double* a, int lda,
                  const double* b, int ldb, double beta, double* c, int ldc);
  void (*gemm_tn)(int m, int n, int k, double alpha, const double* a, int lda,
                  const double* b, int ldb, double beta, double* c, int ldc);

  double (*dot)(int n, const double* x, const double* y);
  double (*sum)(int n, const double* x);
  double (*sumsq)(int n, const double* x);

  void (*axpy)(int n, double a, const double* x, double* y);       // y += a*x
  void (*axpby)(int n, double a, const double* x, double b, double* y);  // y = a*x + b*y
  void (*scal)(int n, double a, double* x);                        // x *= a
  void (*vadd)(int n, const double* x, const double* y, double* z);
  void (*vsub)(int n, const double* x, const double* y, double* z);
  void (*vmul)(int n, const double* x, const double* y, double* z);
  void (*affine)(int n, double a, double b, const double* x, double* y);  // y = a*x + b

  void (*relu_fwd)(int n, const double* x, double* y);
  // dx = dy where y > 0, else 0 (y is the forward output)
  void (*relu_bwd)(int n, const double* y, const double* dy, double* dx);
};

const Backend& scalar_backend();
bool avx2_available();           // compiled in and supported by this CPU
const Backend& avx2_backend();   // valid only if avx2_available()

// Active backend. First call resolves: SIDKIT_KERNELS env var if set,
// otherwise avx2 when available, else scalar.
const Backend& active();

// Force a backend by name ("scalar", "avx2", "auto"). Throws on unknown
// name or if avx2 is requested but unavailable.
const Backend& select(const std::string& name);

// Convenience forwarding wrappers.
inline void gemm_nn(int m, int n, int k, double alpha, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc) {
  active().gemm_nn(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm_nt(int m, int n, int k, double alpha, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc) {
  active().gemm_nt(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm_tn(int m, int n, int k, double alpha, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc) {
  active().gemm_tn(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline double dot(int n, const double* x, const double* y) { return active().dot(n, x, y); }
inline double sum(int n, const double* x) { return active().sum(n, x); }
inline double sumsq(int n, const double* x) { return active().sumsq(n, x); }
inline void axpy(int n, double a, const double* x, double* y) { active().axpy(n, a, x, y); }
inline void axpby(int n, double a, const double* x, double b, double* y) { active().axpby(n, a, x, b, y); }
inline void scal(int n, double a, double* x) { active().scal(n, a, x); }
inline void vadd(int n, const double* x, const double* y, double* z) { active().vadd(n, x, y, z); }
inline void vsub(int n, const double* x, const double* y, double* z) { active().vsub(n, x, y, z); }
inline void vmul(int n, const double* x, const double* y, double* z) { active().vmul(n, x, y, z); }
inline void affine(int n, double a, double b, const double* x, double* y) { active().affine(n, a, b, x, y); }
inline void relu_fwd(int n, const double* x, double* y) { active().relu_fwd(n, x, y); }
inline void relu_bwd(int n, const double* y, const double* dy, double* dx) { active().relu_bwd(n, y, dy, dx); }

}  // namespace sidkit::kernels

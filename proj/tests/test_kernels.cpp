#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "sidkit/kernels.hpp"

namespace k = sidkit::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, int n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = dist(rng);
  return v;
}

// |a - b| <= tol * (scale of the terms that formed them)
void check_close(double a, double b, double term_magnitude) {
  const double tol = 1e-13 * term_magnitude + 1e-300;
  CHECK(std::abs(a - b) <= tol);
}

const std::vector<int> kSizes = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 32, 33, 63, 100, 257, 1000};

struct GemmCase {
  int m, n, k;
  int pad_a, pad_b, pad_c;
  double alpha, beta;
};

// long-double reference for one gemm variant
enum class Op { NN, NT, TN };

std::vector<double> gemm_ref(Op op, const GemmCase& g, const std::vector<double>& a, int lda,
                             const std::vector<double>& b, int ldb, const std::vector<double>& c0,
                             int ldc) {
  std::vector<double> c = c0;
  for (int i = 0; i < g.m; ++i) {
    for (int j = 0; j < g.n; ++j) {
      long double acc = 0.0L;
      for (int p = 0; p < g.k; ++p) {
        double av, bv;
        switch (op) {
          case Op::NN: av = a[static_cast<size_t>(i) * lda + p]; bv = b[static_cast<size_t>(p) * ldb + j]; break;
          case Op::NT: av = a[static_cast<size_t>(i) * lda + p]; bv = b[static_cast<size_t>(j) * ldb + p]; break;
          case Op::TN: av = a[static_cast<size_t>(p) * lda + i]; bv = b[static_cast<size_t>(p) * ldb + j]; break;
        }
        acc += static_cast<long double>(av) * bv;
      }
      double& out = c[static_cast<size_t>(i) * ldc + j];
      long double prev = (g.beta == 0.0) ? 0.0L : static_cast<long double>(g.beta) * out;
      out = static_cast<double>(static_cast<long double>(g.alpha) * acc + prev);
    }
  }
  return c;
}

void run_gemm_case(const k::Backend& be, Op op, const GemmCase& g, std::mt19937_64& rng) {
  const int lda = (op == Op::TN ? g.m : g.k) + g.pad_a;
  const int ldb = (op == Op::NT ? g.k : g.n) + g.pad_b;
  const int ldc = g.n + g.pad_c;
  const int rows_a = (op == Op::TN) ? g.k : g.m;
  const int rows_b = (op == Op::NT) ? g.n : g.k;

  auto a = random_vec(rng, rows_a * lda);
  auto b = random_vec(rng, rows_b * ldb);
  auto c0 = random_vec(rng, g.m * ldc);
  if (g.beta == 0.0) {
    // beta == 0 must overwrite, never read: poison the destination
    for (auto& x : c0) x = std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<double> want;
  {
    auto c_clean = c0;
    if (g.beta == 0.0)
      for (auto& x : c_clean) x = 0.0;
    want = gemm_ref(op, g, a, lda, b, ldb, c_clean, ldc);
  }

  auto got = c0;
  auto fn = (op == Op::NN) ? be.gemm_nn : (op == Op::NT) ? be.gemm_nt : be.gemm_tn;
  fn(g.m, g.n, g.k, g.alpha, a.data(), lda, b.data(), ldb, g.beta, got.data(), ldc);

  const double scale = std::abs(g.alpha) * g.k + std::abs(g.beta) + 1.0;
  for (int i = 0; i < g.m; ++i)
    for (int j = 0; j < g.n; ++j) {
      const size_t idx = static_cast<size_t>(i) * ldc + j;
      REQUIRE(std::isfinite(got[idx]));
      check_close(got[idx], want[idx], scale);
    }
  // padding columns must be untouched
  for (int i = 0; i < g.m; ++i)
    for (int j = g.n; j < ldc; ++j) {
      const size_t idx = static_cast<size_t>(i) * ldc + j;
      if (g.beta == 0.0)
        CHECK(std::isnan(got[idx]));
      else
        CHECK(got[idx] == c0[idx]);
    }
}

void gemm_suite(const k::Backend& be) {
  std::mt19937_64 rng(0x5ebc0ffee1u);
  const std::vector<GemmCase> cases = {
      {1, 1, 1, 0, 0, 0, 1.0, 0.0},   {2, 3, 4, 0, 0, 0, 1.0, 0.0},
      {3, 7, 5, 1, 2, 3, 2.5, 0.0},   {8, 8, 8, 0, 0, 0, 1.0, 1.0},
      {5, 17, 9, 0, 0, 0, -1.0, 0.5}, {16, 16, 16, 3, 1, 2, 0.7, 1.0},
      {13, 31, 33, 0, 0, 0, 1.0, 0.0}, {33, 13, 31, 2, 0, 1, 1.0, 2.0},
      {1, 64, 7, 0, 0, 0, 3.0, 0.0},  {64, 1, 7, 0, 0, 0, 1.0, 1.0},
      {7, 7, 1, 0, 0, 0, 1.0, 0.0},   {40, 25, 50, 5, 5, 5, 0.01, -1.0},
  };
  for (const auto& g : cases) {
    run_gemm_case(be, Op::NN, g, rng);
    run_gemm_case(be, Op::NT, g, rng);
    run_gemm_case(be, Op::TN, g, rng);
  }
}

}  // namespace

TEST_CASE("scalar gemm matches long-double reference") { gemm_suite(k::scalar_backend()); }

TEST_CASE("avx2 gemm matches long-double reference") {
  if (!k::avx2_available()) return;
  gemm_suite(k::avx2_backend());
}

TEST_CASE("avx2 elementwise kernels match scalar exactly") {
  if (!k::avx2_available()) return;
  const auto& s = k::scalar_backend();
  const auto& v = k::avx2_backend();
  std::mt19937_64 rng(42);
  for (int n : kSizes) {
    auto x = random_vec(rng, n, -2.0, 2.0);
    auto y = random_vec(rng, n, -2.0, 2.0);
    std::vector<double> zs(n), zv(n);

    s.vadd(n, x.data(), y.data(), zs.data());
    v.vadd(n, x.data(), y.data(), zv.data());
    CHECK(zs == zv);
    s.vsub(n, x.data(), y.data(), zs.data());
    v.vsub(n, x.data(), y.data(), zv.data());
    CHECK(zs == zv);
    s.vmul(n, x.data(), y.data(), zs.data());
    v.vmul(n, x.data(), y.data(), zv.data());
    CHECK(zs == zv);

    s.relu_fwd(n, x.data(), zs.data());
    v.relu_fwd(n, x.data(), zv.data());
    CHECK(zs == zv);
    // relu_bwd masks on the forward output
    std::vector<double> dxs(n), dxv(n);
    s.relu_bwd(n, zs.data(), y.data(), dxs.data());
    v.relu_bwd(n, zv.data(), y.data(), dxv.data());
    CHECK(dxs == dxv);

    auto ys = y, yv = y;
    s.axpy(n, 1.75, x.data(), ys.data());
    v.axpy(n, 1.75, x.data(), yv.data());
    // axpy uses fma on avx2; allow one-ulp-scale difference
    for (int i = 0; i < n; ++i) check_close(ys[i], yv[i], 4.0);

    ys = y;
    yv = y;
    s.axpby(n, 0.5, x.data(), -1.25, ys.data());
    v.axpby(n, 0.5, x.data(), -1.25, yv.data());
    for (int i = 0; i < n; ++i) check_close(ys[i], yv[i], 4.0);

    auto xs = x, xv = x;
    s.scal(n, -3.0, xs.data());
    v.scal(n, -3.0, xv.data());
    CHECK(xs == xv);

    s.affine(n, 2.0, 0.125, x.data(), zs.data());
    v.affine(n, 2.0, 0.125, x.data(), zv.data());
    for (int i = 0; i < n; ++i) check_close(zs[i], zv[i], 4.0);
  }
}

TEST_CASE("avx2 reductions match scalar within reassociation tolerance") {
  if (!k::avx2_available()) return;
  const auto& s = k::scalar_backend();
  const auto& v = k::avx2_backend();
  std::mt19937_64 rng(7);
  for (int n : kSizes) {
    auto x = random_vec(rng, n, -1.0, 1.0);
    auto y = random_vec(rng, n, -1.0, 1.0);

    double mag_dot = 0.0, mag_sum = 0.0, mag_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      mag_dot += std::abs(x[i] * y[i]);
      mag_sum += std::abs(x[i]);
      mag_sq += x[i] * x[i];
    }
    check_close(s.dot(n, x.data(), y.data()), v.dot(n, x.data(), y.data()), mag_dot);
    check_close(s.sum(n, x.data()), v.sum(n, x.data()), mag_sum);
    check_close(s.sumsq(n, x.data()), v.sumsq(n, x.data()), mag_sq);
  }
}

TEST_CASE("reduction kernels: exact small cases") {
  for (const k::Backend* be : {&k::scalar_backend(),
                               k::avx2_available() ? &k::avx2_backend() : nullptr}) {
    if (!be) continue;
    const double x[5] = {1.0, 2.0, 3.0, 4.0, 5.0};
    const double y[5] = {1.0, -1.0, 1.0, -1.0, 1.0};
    CHECK(be->sum(5, x) == 15.0);
    CHECK(be->sumsq(5, x) == 55.0);
    CHECK(be->dot(5, x, y) == 3.0);
    CHECK(be->sum(0, x) == 0.0);
    CHECK(be->dot(0, x, y) == 0.0);
  }
}

TEST_CASE("backend selection") {
  const auto& s = k::select("scalar");
  CHECK(std::string(s.name) == "scalar");
  CHECK(std::string(k::active().name) == "scalar");
  CHECK_THROWS(k::select("bogus"));
  if (k::avx2_available()) {
    const auto& v = k::select("avx2");
    CHECK(std::string(v.name) == "avx2");
  } else {
    CHECK_THROWS(k::select("avx2"));
  }
  const auto& a = k::select("auto");
  CHECK(std::string(a.name) == std::string(k::avx2_available() ? "avx2" : "scalar"));
}

#include "amer/blas.hpp"

#ifdef AMER_WITH_BLAS
#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace amer {

namespace {
// BLAS runs single-threaded so results do not depend on a thread count.
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init{};
}  // namespace

void gemm_f32(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f64(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
              const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace amer

#else  // fallback, correct but unoptimized

namespace amer {

namespace {
template <typename Real>
void gemm_naive(bool ta, bool tb, int m, int n, int k, Real alpha, const Real* a, int lda,
                const Real* b, int ldb, Real beta, Real* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            Real acc = 0;
            for (int p = 0; p < k; ++p) {
                Real av = ta ? a[size_t(p) * lda + i] : a[size_t(i) * lda + p];
                Real bv = tb ? b[size_t(j) * ldb + p] : b[size_t(p) * ldb + j];
                acc += av * bv;
            }
            Real& out = c[size_t(i) * ldc + j];
            out = alpha * acc + (beta == Real(0) ? Real(0) : beta * out);
        }
    }
}
}  // namespace

void gemm_f32(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc) {
    gemm_naive(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f64(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
              const double* b, int ldb, double beta, double* c, int ldc) {
    gemm_naive(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace amer

#endif

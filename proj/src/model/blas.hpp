#pragma once

#include <cblas.h>

#include <atomic>
#include <cstdint>

namespace cactus::model {

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

/// Counts forward multiply-accumulates actually issued by convolution and
/// linear layers on the current thread while an instance is alive.
class MacCounter {
 public:
  MacCounter() : previous_(active_) { active_ = this; }
  ~MacCounter() { active_ = previous_; }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t conv_macs() const { return conv_; }
  std::uint64_t linear_macs() const { return linear_; }

  static void add_conv(std::uint64_t macs) {
    if (active_) active_->conv_ += macs;
  }
  static void add_linear(std::uint64_t macs) {
    if (active_) active_->linear_ += macs;
  }

 private:
  static thread_local MacCounter* active_;
  MacCounter* previous_;
  std::uint64_t conv_ = 0;
  std::uint64_t linear_ = 0;
};

/// Pins OpenBLAS to one thread so results are bitwise reproducible.
void configure_blas_single_thread();

}  // namespace cactus::model

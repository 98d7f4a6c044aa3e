#pragma once

#include <cassert>

#include "ttrec/common.hpp"

namespace ttrec {

// Small row-major matrix kernels. The TT chain multiplies many tiny
// matrices (dims are products of shape factors and ranks, typically
// 2..256), so a cache-blocked BLAS buys nothing here; plain ikj loops
// vectorize fine and keep the operation order deterministic.

/// C(m x n) = A(m x k) * B(k x n); accumulate=true adds into C instead.
template <Scalar T>
void matmul(const T* a, const T* b, T* c, index_t m, index_t k, index_t n,
            bool accumulate = false) {
  assert(m >= 0 && k >= 0 && n >= 0);
  if (!accumulate) {
    for (index_t i = 0; i < m * n; ++i) c[i] = T(0);
  }
  for (index_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (index_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C(k x n) += A(m x k)^T * B(m x n).
template <Scalar T>
void matmul_atb_acc(const T* a, const T* b, T* c, index_t m, index_t k, index_t n) {
  for (index_t p = 0; p < m; ++p) {
    const T* arow = a + p * k;
    const T* brow = b + p * n;
    for (index_t i = 0; i < k; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C(m x k) = A(m x n) * B(k x n)^T.
template <Scalar T>
void matmul_abt(const T* a, const T* b, T* c, index_t m, index_t n, index_t k) {
  for (index_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (index_t r = 0; r < k; ++r) {
      const T* brow = b + r * n;
      T acc = T(0);
      for (index_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[r] = acc;
    }
  }
}

/// y += alpha * x.
template <Scalar T>
void axpy(T alpha, const T* x, T* y, index_t n) {
  for (index_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace ttrec

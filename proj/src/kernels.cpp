#include "alm/kernels.hpp"

#include <algorithm>

namespace alm::kernels {
namespace {

template <typename T>
inline void matmul_row(const T* a_row, const T* b, const T* bias, T* c_row, std::size_t k,
                       std::size_t n) {
  if (bias) {
    std::copy(bias, bias + n, c_row);
  } else {
    std::fill(c_row, c_row + n, T{});
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a_row[p];
    const T* b_row = b + p * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

template <typename T>
inline T dot(const T* x, const T* y, std::size_t k) {
  T acc{};
#pragma omp simd reduction(+ : acc)
  for (std::size_t p = 0; p < k; ++p) acc += x[p] * y[p];
  return acc;
}

template <typename T>
inline void matmul_bt_row(const T* a_row, const T* b, T* c_row, std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c_row[j] = dot(a_row, b + j * k, k);
}

// Row p of c accumulates column p of a against every row of b, in row order.
template <typename T>
inline void matmul_at_row(const T* a, const T* b, T* c_row, std::size_t p, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    const T av = a[r * k + p];
    const T* b_row = b + r * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

}  // namespace

namespace serial {

template <typename T>
void matmul(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a + i * k, b, bias, c + i * n, k, n);
}

template <typename T>
void matmul_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_bt_row(a + i * k, b, c + i * n, k, n);
}

template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) matmul_at_row(a, b, c + p * n, p, m, k, n);
}

}  // namespace serial

namespace omp {

template <typename T>
void matmul(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
            std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) matmul_row(a + i * k, b, bias, c + i * n, k, n);
}

template <typename T>
void matmul_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) matmul_bt_row(a + i * k, b, c + i * n, k, n);
}

template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  const auto rows = static_cast<long>(k);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long p = 0; p < rows; ++p) matmul_at_row(a, b, c + p * n, p, m, k, n);
}

}  // namespace omp

#define ALM_INSTANTIATE_KERNELS(NS, T)                                                   \
  template void NS::matmul<T>(const T*, const T*, const T*, T*, std::size_t, std::size_t, \
                              std::size_t);                                               \
  template void NS::matmul_bt<T>(const T*, const T*, T*, std::size_t, std::size_t,        \
                                 std::size_t);                                            \
  template void NS::matmul_at_acc<T>(const T*, const T*, T*, std::size_t, std::size_t,    \
                                     std::size_t);

ALM_INSTANTIATE_KERNELS(serial, float)
ALM_INSTANTIATE_KERNELS(serial, double)
ALM_INSTANTIATE_KERNELS(omp, float)
ALM_INSTANTIATE_KERNELS(omp, double)

#undef ALM_INSTANTIATE_KERNELS

}  // namespace alm::kernels

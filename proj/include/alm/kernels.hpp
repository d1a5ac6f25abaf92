#pragma once

#include <cstddef>

// Dense kernels used by the transformer. Each kernel exists twice: a serial
// reference and an OpenMP version that splits output rows across threads.
// Both run the same per-row routine, so their results are bit-identical for
// any thread count. Matrices are row-major raw buffers.
namespace alm::kernels {

namespace serial {

// c[m×n] = a[m×k] · b[k×n] (+ bias[n] if non-null)
template <typename T>
void matmul(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
            std::size_t n);

// c[m×n] = a[m×k] · b[n×k]ᵀ
template <typename T>
void matmul_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

// c[k×n] += a[m×k]ᵀ · b[m×n]
template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n);

}  // namespace serial

namespace omp {

template <typename T>
void matmul(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
            std::size_t n);

template <typename T>
void matmul_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n);

}  // namespace omp

// Work (m·k·n) below which the OpenMP kernels stay on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 18;

// What the model calls.
using omp::matmul;
using omp::matmul_at_acc;
using omp::matmul_bt;

}  // namespace alm::kernels

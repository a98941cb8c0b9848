#pragma once

#include <cstddef>

namespace btks {

// Row-major C = alpha * op(A) * op(B) + beta * C with op(A): m x k, op(B): k x n.
// Operands are densely packed.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, const T* b,
          T beta, T* c);

extern template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*,
                                 const float*, float, float*);
extern template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*,
                                  const double*, double, double*);

// Worker threads for GEMM. Results are reproducible for a fixed thread count.
void set_num_threads(std::size_t n);
std::size_t num_threads();

} // namespace btks

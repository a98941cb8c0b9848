#include "btks/gemm.hpp"

#include <Eigen/Core>

namespace btks {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, const T* b,
          T beta, T* c) {
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using ConstMap = Eigen::Map<const Matrix>;
    const auto rows = static_cast<Eigen::Index>(m), cols = static_cast<Eigen::Index>(n);
    const auto inner = static_cast<Eigen::Index>(k);
    if (m == 0 || n == 0) return;
    Eigen::Map<Matrix> out(c, rows, cols);
    if (beta == T(0))
        out.setZero();
    else if (beta != T(1))
        out *= beta;
    if (k == 0) return;
    // A stored as m x k (or k x m when transposed); likewise B.
    const ConstMap ma(a, trans_a ? inner : rows, trans_a ? rows : inner);
    const ConstMap mb(b, trans_b ? cols : inner, trans_b ? inner : cols);
    if (trans_a && trans_b)
        out.noalias() += alpha * (ma.transpose() * mb.transpose());
    else if (trans_a)
        out.noalias() += alpha * (ma.transpose() * mb);
    else if (trans_b)
        out.noalias() += alpha * (ma * mb.transpose());
    else
        out.noalias() += alpha * (ma * mb);
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*, const float*, float,
                          float*);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*, const double*,
                           double, double*);

void set_num_threads(std::size_t n) { Eigen::setNbThreads(static_cast<int>(n == 0 ? 1 : n)); }

std::size_t num_threads() { return static_cast<std::size_t>(Eigen::nbThreads()); }

} // namespace btks

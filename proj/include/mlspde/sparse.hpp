#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <ostream>

namespace mlspde {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Vec = Eigen::VectorXd;

inline double max_abs(const SpMat& a)
{
    double m = 0.0;
    for (int k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it)
            m = std::max(m, std::abs(it.value()));
    return m;
}

/// Matrix-market style ASCII dump (coordinate format, 1-based, debugging aid).
inline void write_matrix_market(std::ostream& out, const SpMat& a)
{
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << a.rows() << " " << a.cols() << " " << a.nonZeros() << "\n";
    out.precision(17);
    for (int k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it)
            out << it.row() + 1 << " " << it.col() + 1 << " " << it.value() << "\n";
}

} // namespace mlspde

#pragma once

// Minimum-norm least squares through a truncated SVD pseudo-inverse:
//   X = U S V^T,  F = V S^+ U^T Y,
// where singular values below cutoff * s_max are treated as zero.

#include <cstddef>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "contrans/error.hpp"

namespace contrans {

template <typename Scalar>
struct LeastSquaresSolution {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> F;
    double residual = 0.0;  // ||X F - Y||_F evaluated in double
    double sigma_max = 0.0;
    std::size_t rank = 0;
};

/// Solves min_F ||X F - Y||_F^2 for X [n, d1], Y [n, d2]. Arithmetic runs
/// in double; F is returned in the input scalar type.
template <typename DerivedX, typename DerivedY>
LeastSquaresSolution<typename DerivedX::Scalar> solve_least_squares(const Eigen::MatrixBase<DerivedX>& X,
                                                                    const Eigen::MatrixBase<DerivedY>& Y,
                                                                    double cutoff = 1e-6) {
    using Scalar = typename DerivedX::Scalar;
    if (X.rows() < 1) throw ValidationError("least squares needs at least one sample");
    if (X.rows() != Y.rows())
        throw ValidationError("least squares: X has " + std::to_string(X.rows()) + " rows, Y has " + std::to_string(Y.rows()));
    if (!(cutoff >= 0.0 && cutoff < 1.0)) throw ValidationError("singular-value cutoff must lie in [0, 1)");
    if (!X.allFinite() || !Y.allFinite()) throw NumericalError("least squares inputs contain non-finite values");

    const Eigen::MatrixXd Xd = X.template cast<double>();
    const Eigen::MatrixXd Yd = Y.template cast<double>();
    if (Xd.isZero(0.0)) throw NumericalError("source activations are all zero; the corpus is degenerate");

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Xd, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double smax = s.size() ? s[0] : 0.0;
    const double threshold = cutoff * smax;

    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > threshold) {
            inv[i] = 1.0 / s[i];
            ++rank;
        }

    const Eigen::MatrixXd UtY = svd.matrixU().transpose() * Yd;
    const Eigen::MatrixXd Fd = svd.matrixV() * (inv.asDiagonal() * UtY);

    LeastSquaresSolution<Scalar> out;
    out.F = Fd.template cast<Scalar>();
    out.residual = (Xd * out.F.template cast<double>() - Yd).norm();
    out.sigma_max = smax;
    out.rank = rank;
    if (!out.F.allFinite()) throw NumericalError("least squares produced non-finite coefficients");
    return out;
}

}  // namespace contrans

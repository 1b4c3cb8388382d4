#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "seme/numerics.hpp"

namespace seme {

struct PseudoinverseConfig {
    double rcond = 1e-6;              // relative singular-value cutoff
    double max_condition_warn = 1e8;  // conditioning diagnostic threshold
};

struct PseudoinverseDiagnostics {
    double sigma_max = 0.0;
    double sigma_min_kept = 0.0;
    std::size_t rank = 0;
    double condition = 0.0;
    bool condition_warning = false;
};

// Moore-Penrose pseudoinverse of the d x v head, returned v x d.
// SVD in double; singular values below rcond * sigma_max are treated as zero.
// A zero matrix yields a zero pseudoinverse.
inline MatrixF pseudoinverse(const MatrixF& W, const PseudoinverseConfig& cfg = {},
                             PseudoinverseDiagnostics* diag = nullptr) {
    if (W.rows == 0 || W.cols == 0) throw Error("pseudoinverse: empty matrix");
    if (!(cfg.rcond > 0.0 && cfg.rcond < 1.0)) throw Error("pseudoinverse: rcond must be in (0, 1)");
    if (!all_finite(std::span<const float>(W.data))) throw Error("pseudoinverse: non-finite input");

    Eigen::MatrixXd A(W.rows, W.cols);
    for (std::size_t i = 0; i < W.rows; ++i)
        for (std::size_t j = 0; j < W.cols; ++j) A(static_cast<long>(i), static_cast<long>(j)) = W.at(i, j);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sigma = svd.singularValues();
    const double sigma_max = sigma.size() > 0 ? sigma(0) : 0.0;
    const double cutoff = cfg.rcond * sigma_max;

    Eigen::VectorXd inv_sigma = Eigen::VectorXd::Zero(sigma.size());
    std::size_t rank = 0;
    double sigma_min_kept = 0.0;
    for (long k = 0; k < sigma.size(); ++k) {
        if (sigma(k) > cutoff && sigma(k) > 0.0) {
            inv_sigma(k) = 1.0 / sigma(k);
            sigma_min_kept = sigma(k);
            ++rank;
        }
    }

    const Eigen::MatrixXd pinv = svd.matrixV() * inv_sigma.asDiagonal() * svd.matrixU().transpose();

    if (diag) {
        diag->sigma_max = sigma_max;
        diag->sigma_min_kept = sigma_min_kept;
        diag->rank = rank;
        diag->condition = (sigma_min_kept > 0.0) ? sigma_max / sigma_min_kept : 0.0;
        diag->condition_warning = diag->condition > cfg.max_condition_warn;
    }

    MatrixF out(W.cols, W.rows);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j)
            out.at(i, j) = static_cast<float>(pinv(static_cast<long>(i), static_cast<long>(j)));
    return out;
}

} // namespace seme

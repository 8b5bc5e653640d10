#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mpox/core/error.hpp"

namespace mpox {

struct PcaResult {
    Eigen::MatrixXd coordinates;  ///< rows x dims, input row order
    Eigen::MatrixXd components;   ///< features x dims, unit columns
    std::vector<double> explained_variance;  ///< eigenvalues of the sample covariance
    std::vector<double> explained_variance_ratio;
    Eigen::RowVectorXd mean;
};

/// Mean-centred projection onto the top `dims` principal axes. Each axis is
/// oriented so that its largest-magnitude loading is positive.
inline PcaResult pca_project(const Eigen::MatrixXd& x, int dims = 3) {
    require(dims >= 1, ErrorCode::invalid_argument, "dims must be >= 1");
    require(dims <= x.cols(), ErrorCode::invalid_argument, "dims exceeds the feature dimension");
    require(x.rows() >= dims, ErrorCode::invalid_argument, "need at least dims rows");
    require(x.allFinite(), ErrorCode::invalid_argument, "embeddings contain non-finite values");
    PcaResult r;
    r.mean = x.colwise().mean();
    const Eigen::MatrixXd centred = x.rowwise() - r.mean;
    const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
    const Eigen::MatrixXd cov = (centred.transpose() * centred) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    require(eig.info() == Eigen::Success, ErrorCode::runtime, "covariance eigendecomposition failed");
    const Eigen::VectorXd values = eig.eigenvalues();  // ascending
    const double total = std::max(values.sum(), 0.0);
    const auto n = values.size();
    r.components.resize(x.cols(), dims);
    for (int k = 0; k < dims; ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(n - 1 - k);
        Eigen::Index at;
        v.cwiseAbs().maxCoeff(&at);
        if (v(at) < 0) v = -v;
        r.components.col(k) = v;
        const double lambda = std::max(values(n - 1 - k), 0.0);
        r.explained_variance.push_back(lambda);
        r.explained_variance_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
    }
    r.coordinates = centred * r.components;
    return r;
}

}  // namespace mpox

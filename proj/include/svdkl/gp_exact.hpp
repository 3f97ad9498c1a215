#pragma once

#include "svdkl/kernels.hpp"
#include "svdkl/model.hpp"

namespace svdkl {

/// Full-rank GP regression, used as the reference for the sparse model.
struct ExactGpModel {
    Matrix inputs;  // n x Q
    Vector targets;
    ArdKernelParams kernel;
    double log_noise_variance = 0.0;

    static constexpr Eigen::Index kMaxPoints = 4096;

    void validate() const;
};

/// log N(y | 0, K + sigma^2 I) via Cholesky.
double log_marginal_likelihood(const ExactGpModel& model);

/// Posterior over latent values at `queries`, with full covariance.
GaussianMoments predict(const ExactGpModel& model, const Matrix& queries);

}  // namespace svdkl

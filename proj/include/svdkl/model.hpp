#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "svdkl/deepnet.hpp"
#include "svdkl/kernels.hpp"
#include "svdkl/types.hpp"

namespace svdkl {

/// q(f_Z) = N(m, S) with S = chol_cov * chol_cov^T; Z lives in feature space.
struct VariationalState {
    Matrix inducing_inputs;  // M x Q
    Vector mean;             // M
    Matrix chol_cov;         // M x M, lower, positive diagonal

    Eigen::Index size() const { return inducing_inputs.rows(); }
    Matrix covariance() const { return chol_cov * chol_cov.transpose(); }
    void validate() const;
};

/// One output dimension's SVGP.
struct SvgpHead {
    VariationalState state;
    double log_noise_variance = 0.0;

    double noise_variance() const;
};

/// Mean and (diagonal or full) covariance of a Gaussian.
struct GaussianMoments {
    Vector mean;
    Vector variance;                   // always filled, clamped at 0
    std::optional<Matrix> covariance;  // only for full predictions

    bool full() const { return covariance.has_value(); }
};

/// Log-F0 statistics over voiced frames.
struct F0Stats {
    double mean_log_f0 = 0.0;
    double std_log_f0 = 0.0;
    std::int64_t voiced_frame_count = 0;
};

/// Per-dimension affine input standardization.
struct InputNormalizer {
    Vector mean;
    Vector scale;

    static InputNormalizer identity(Eigen::Index dim);
    /// Column mean and population standard deviation; zero-variance columns get scale 1.
    static InputNormalizer fit(const Matrix& x);
    Matrix apply(const Matrix& x) const;
};

/// Shared net and SE-ARD kernel with one SVGP head per output dimension.
struct SvdklModel {
    FeedForwardNet net;
    ArdKernelParams kernel;
    std::vector<SvgpHead> heads;
    InputNormalizer input_normalizer;
    Vector output_centers;
    std::optional<F0Stats> f0_source;
    std::optional<F0Stats> f0_target;
    double jitter_base = 1e-6;
    double warping_alpha = 0.41;

    Eigen::Index input_dim() const { return net.input_dim(); }
    Eigen::Index feature_dim() const { return net.output_dim(); }
    Eigen::Index output_dim() const { return static_cast<Eigen::Index>(heads.size()); }

    /// Throws ConfigError on inconsistent shapes.
    void validate() const;
    /// Normalizes raw inputs and maps them through the net.
    Matrix features(const Matrix& x) const;
};

}  // namespace svdkl

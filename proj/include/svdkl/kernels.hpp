#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "svdkl/types.hpp"

namespace svdkl {

class FeedForwardNet;

/// Squared-exponential ARD parameters, stored in the log domain.
struct ArdKernelParams {
    double log_signal_variance = 0.0;
    Vector log_length_scales;

    ArdKernelParams() = default;
    ArdKernelParams(double log_sf2, Vector log_ls)
        : log_signal_variance(log_sf2), log_length_scales(std::move(log_ls)) {}

    static ArdKernelParams isotropic(Eigen::Index dim, double signal_variance, double length_scale);

    Eigen::Index dim() const { return log_length_scales.size(); }
    double signal_variance() const;
    /// 1 / l_q^2 per feature dimension.
    Vector inverse_squared_length_scales() const;

    /// Throws InputError when any entry is non-finite or exponentiates to 0/inf.
    void validate() const;
};

enum class Activation { kRelu, kLinear };

/// Architecture of the feature extractor feeding the SE-ARD kernel.
struct DeepKernelSpec {
    std::vector<Eigen::Index> layer_sizes;  // [D, h_1, ..., Q]
    Activation hidden_activation = Activation::kRelu;
    Activation output_activation = Activation::kLinear;
    double jitter_base = 1e-6;

    Eigen::Index input_dim() const { return layer_sizes.front(); }
    Eigen::Index feature_dim() const { return layer_sizes.back(); }
    void validate() const;
};

double se_ard(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
              const ArdKernelParams& p);

/// Entry (i, j) is se_ard(row i of a, row j of b).
Matrix kernel_matrix(const Matrix& a, const Matrix& b, const ArdKernelParams& p);

/// Lower Cholesky factor of a kernel matrix plus the relative jitter that made it factorize.
struct JitteredFactor {
    Matrix lower;
    double jitter = 0.0;           // relative epsilon used
    double jitter_absolute = 0.0;  // epsilon * mean(diag)
    int escalations = 0;           // number of failed attempts before success
};

/// Factorizes k + eps * mean(diag(k)) * I for the smallest eps in
/// {jitter_base, 10 jitter_base, ..., 1e4 jitter_base}; with try_unjittered the
/// plain matrix is attempted first. Throws NumericalError naming `what`.
JitteredFactor factor_with_jitter(const Matrix& k, double jitter_base, std::string_view what,
                                  bool try_unjittered = false);

/// factor_with_jitter(kernel_matrix(a, a, p), ...).
JitteredFactor psd_factor(const Matrix& a, const ArdKernelParams& p, double jitter_base,
                          std::string_view what = "K_AA");

/// Total number of factor_with_jitter calls made by this process.
std::uint64_t factorization_count();

/// se_ard(forward(net, x_i), forward(net, x_j), p).
double deep_kernel(const Eigen::Ref<const Vector>& x_i, const Eigen::Ref<const Vector>& x_j,
                   const FeedForwardNet& net, const ArdKernelParams& p);

}  // namespace svdkl

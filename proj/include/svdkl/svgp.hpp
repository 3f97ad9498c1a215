#pragma once

#include <vector>

#include "svdkl/kernels.hpp"
#include "svdkl/model.hpp"

namespace svdkl {

/// q(f_X) marginals at `features` (diagonal only): mean psi m and
/// diag(K_XX - psi (K_ZZ - S) psi^T), psi = K_XZ K_ZZ^-1.
GaussianMoments marginal_q(const SvgpHead& head, const ArdKernelParams& kernel,
                           const Matrix& features, double jitter_base);

/// E_{f ~ N(mu, var)} log N(y | f, noise_var).
double expected_log_lik(double mu, double var, double y, double noise_var);

/// KL[q(f_Z) || p(f_Z)].
double kl_q_p(const SvgpHead& head, const ArdKernelParams& kernel, double jitter_base);

/// scale * sum_i E[log p(y_i | f_i)] - KL for one head, on feature-space inputs
/// and centered targets.
double head_elbo(const SvgpHead& head, const ArdKernelParams& kernel, const Matrix& features,
                 const Vector& centered_targets, double scale, double jitter_base);

/// Sum over heads of the ELBO. X and Y are in raw (unnormalized, uncentered) units.
double elbo_full(const SvdklModel& model, const Matrix& x, const Matrix& y);

/// (total_n / |B|) * data term on the batch minus the summed KL.
double elbo_minibatch(const SvdklModel& model, const Matrix& x_batch, const Matrix& y_batch,
                      Eigen::Index total_n);

/// Predictive moments of one head at feature-space points (no output center added).
GaussianMoments predict_head(const SvgpHead& head, const ArdKernelParams& kernel,
                             const Matrix& features, double jitter_base, bool full_covariance);

/// Per-head predictive moments at raw inputs; means include the output centers.
std::vector<GaussianMoments> predict(const SvdklModel& model, const Matrix& x_star,
                                     bool full_covariance = false);

/// Predictive means only, one column per head.
Matrix predict_mean(const SvdklModel& model, const Matrix& x_star);

/// Maximizer of head_elbo over (m, S) for fixed Z, kernel and noise:
/// S = K (K + s^-2 K_ZX K_XZ)^-1 K, m = s^-2 S K^-1 K_ZX y.
VariationalState optimal_variational_state(const SvgpHead& head, const ArdKernelParams& kernel,
                                           const Matrix& features, const Vector& centered_targets,
                                           double jitter_base);

}  // namespace svdkl

#include "svdkl/gp_exact.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "svdkl/errors.hpp"

namespace svdkl {

namespace {

JitteredFactor factor_noisy(const ExactGpModel& model) {
    Matrix k = kernel_matrix(model.inputs, model.inputs, model.kernel);
    k.diagonal().array() += std::exp(model.log_noise_variance);
    return factor_with_jitter(k, 1e-10, "K_XX + sigma^2 I", /*try_unjittered=*/true);
}

}  // namespace

void ExactGpModel::validate() const {
    if (inputs.rows() < 1) throw InputError("exact GP needs at least one training point");
    if (inputs.rows() > kMaxPoints) {
        throw InputError("exact GP is limited to " + std::to_string(kMaxPoints) +
                         " points (cubic cost); got " + std::to_string(inputs.rows()));
    }
    if (targets.size() != inputs.rows()) throw InputError("exact GP: target count != input count");
    if (!targets.allFinite()) throw InputError("exact GP: non-finite targets");
    kernel.validate();
    if (inputs.cols() != kernel.dim()) throw InputError("exact GP: input width != kernel dimension");
    const double s2 = std::exp(log_noise_variance);
    if (!(s2 > 0.0) || !std::isfinite(s2)) throw InputError("exact GP: noise variance must be positive");
}

double log_marginal_likelihood(const ExactGpModel& model) {
    model.validate();
    const JitteredFactor f = factor_noisy(model);
    const auto l = f.lower.triangularView<Eigen::Lower>();
    const Vector a = l.solve(model.targets);
    const double n = static_cast<double>(model.targets.size());
    const double log_det = 2.0 * f.lower.diagonal().array().log().sum();
    return -0.5 * a.squaredNorm() - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

GaussianMoments predict(const ExactGpModel& model, const Matrix& queries) {
    model.validate();
    if (queries.cols() != model.kernel.dim()) throw InputError("exact GP predict: query width mismatch");
    const JitteredFactor f = factor_noisy(model);
    const auto l = f.lower.triangularView<Eigen::Lower>();
    const Matrix k_xs = kernel_matrix(model.inputs, queries, model.kernel);
    const Vector alpha = l.transpose().solve(l.solve(model.targets));
    const Matrix v = l.solve(k_xs);

    GaussianMoments out;
    out.mean = k_xs.transpose() * alpha;
    Matrix cov = kernel_matrix(queries, queries, model.kernel);
    cov.noalias() -= v.transpose() * v;
    cov = 0.5 * (cov + cov.transpose());
    out.variance = cov.diagonal().cwiseMax(0.0);
    out.covariance = std::move(cov);
    return out;
}

}  // namespace svdkl

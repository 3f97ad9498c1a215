#include "svdkl/svgp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "svdkl/errors.hpp"

namespace svdkl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_head(const SvgpHead& head, const ArdKernelParams& kernel) {
    head.state.validate();
    if (head.state.inducing_inputs.cols() != kernel.dim()) {
        throw InputError("inducing inputs have " + std::to_string(head.state.inducing_inputs.cols()) +
                         " columns, kernel expects " + std::to_string(kernel.dim()));
    }
}

// Quantities shared by the marginal, the KL term and prediction.
struct HeadSolve {
    JitteredFactor kzz;
    Matrix a;       // L_Z^-1 K_ZX
    Matrix b;       // L_Z^-1 chol_S
    Vector m_tilde; // L_Z^-1 m
};

HeadSolve solve_head(const SvgpHead& head, const ArdKernelParams& kernel, const Matrix* features,
                     double jitter_base) {
    HeadSolve s;
    const auto& st = head.state;
    s.kzz = psd_factor(st.inducing_inputs, kernel, jitter_base, "K_ZZ");
    const auto l = s.kzz.lower.triangularView<Eigen::Lower>();
    if (features != nullptr) s.a = l.solve(kernel_matrix(st.inducing_inputs, *features, kernel));
    s.b = l.solve(st.chol_cov.triangularView<Eigen::Lower>().toDenseMatrix());
    s.m_tilde = l.solve(st.mean);
    return s;
}

GaussianMoments marginal_from(const HeadSolve& s, double prior_var) {
    GaussianMoments q;
    q.mean = s.a.transpose() * s.m_tilde;
    const Matrix bta = s.b.transpose() * s.a;
    q.variance = (prior_var - s.a.colwise().squaredNorm().array() +
                  bta.colwise().squaredNorm().array())
                     .cwiseMax(0.0)
                     .matrix()
                     .transpose();
    return q;
}

double kl_from(const HeadSolve& s, const SvgpHead& head) {
    const double m = static_cast<double>(head.state.size());
    const double log_det_k = 2.0 * s.kzz.lower.diagonal().array().log().sum();
    const double log_det_s = 2.0 * head.state.chol_cov.diagonal().array().log().sum();
    return 0.5 * (s.b.squaredNorm() + s.m_tilde.squaredNorm() - m + log_det_k - log_det_s);
}

void check_batch(const SvdklModel& model, const Matrix& x, const Matrix& y) {
    if (x.rows() < 1) throw InputError("ELBO needs at least one data row");
    if (x.rows() != y.rows()) throw InputError("input and target row counts differ");
    if (y.cols() != model.output_dim()) {
        throw InputError("targets have " + std::to_string(y.cols()) + " columns, model has " +
                         std::to_string(model.output_dim()) + " heads");
    }
}

double data_and_kl(const SvdklModel& model, const Matrix& x, const Matrix& y, double scale) {
    model.validate();
    check_batch(model, x, y);
    const Matrix h = model.features(x);
    double total = 0.0;
    for (std::size_t d = 0; d < model.heads.size(); ++d) {
        const auto di = static_cast<Eigen::Index>(d);
        const Vector yc = y.col(di).array() - model.output_centers[di];
        total += head_elbo(model.heads[d], model.kernel, h, yc, scale, model.jitter_base);
    }
    return total;
}

}  // namespace

GaussianMoments marginal_q(const SvgpHead& head, const ArdKernelParams& kernel,
                           const Matrix& features, double jitter_base) {
    check_head(head, kernel);
    if (features.cols() != kernel.dim()) throw InputError("marginal_q: feature width mismatch");
    const HeadSolve s = solve_head(head, kernel, &features, jitter_base);
    return marginal_from(s, kernel.signal_variance());
}

double expected_log_lik(double mu, double var, double y, double noise_var) {
    if (!(noise_var > 0.0)) throw InputError("expected_log_lik: noise variance must be positive");
    if (var < 0.0) throw InputError("expected_log_lik: negative variance");
    const double r = y - mu;
    return -0.5 * (kLog2Pi + std::log(noise_var)) - 0.5 * (r * r + var) / noise_var;
}

double kl_q_p(const SvgpHead& head, const ArdKernelParams& kernel, double jitter_base) {
    check_head(head, kernel);
    const HeadSolve s = solve_head(head, kernel, nullptr, jitter_base);
    return kl_from(s, head);
}

double head_elbo(const SvgpHead& head, const ArdKernelParams& kernel, const Matrix& features,
                 const Vector& centered_targets, double scale, double jitter_base) {
    check_head(head, kernel);
    if (features.rows() != centered_targets.size()) throw InputError("head_elbo: row count mismatch");
    const HeadSolve s = solve_head(head, kernel, &features, jitter_base);
    const GaussianMoments q = marginal_from(s, kernel.signal_variance());
    const double s2 = head.noise_variance();
    double fit = 0.0;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        fit += expected_log_lik(q.mean[i], q.variance[i], centered_targets[i], s2);
    }
    const double value = scale * fit - kl_from(s, head);
    if (!std::isfinite(value)) throw NumericalError("ELBO is not finite");
    return value;
}

double elbo_full(const SvdklModel& model, const Matrix& x, const Matrix& y) {
    return data_and_kl(model, x, y, 1.0);
}

double elbo_minibatch(const SvdklModel& model, const Matrix& x_batch, const Matrix& y_batch,
                      Eigen::Index total_n) {
    if (x_batch.rows() < 1 || x_batch.rows() > total_n) {
        throw InputError("minibatch size must be in [1, total_n]");
    }
    const double scale = static_cast<double>(total_n) / static_cast<double>(x_batch.rows());
    return data_and_kl(model, x_batch, y_batch, scale);
}

GaussianMoments predict_head(const SvgpHead& head, const ArdKernelParams& kernel,
                             const Matrix& features, double jitter_base, bool full_covariance) {
    check_head(head, kernel);
    if (features.cols() != kernel.dim()) throw InputError("predict: feature width mismatch");
    const HeadSolve s = solve_head(head, kernel, &features, jitter_base);
    if (!full_covariance) return marginal_from(s, kernel.signal_variance());

    GaussianMoments out;
    out.mean = s.a.transpose() * s.m_tilde;
    const Matrix bta = s.b.transpose() * s.a;
    Matrix cov = kernel_matrix(features, features, kernel);
    cov.noalias() -= s.a.transpose() * s.a;
    cov.noalias() += bta.transpose() * bta;
    cov = 0.5 * (cov + cov.transpose());
    out.variance = cov.diagonal().cwiseMax(0.0);
    out.covariance = std::move(cov);
    return out;
}

std::vector<GaussianMoments> predict(const SvdklModel& model, const Matrix& x_star,
                                     bool full_covariance) {
    model.validate();
    const Matrix h = model.features(x_star);
    std::vector<GaussianMoments> out;
    out.reserve(model.heads.size());
    for (std::size_t d = 0; d < model.heads.size(); ++d) {
        GaussianMoments g =
            predict_head(model.heads[d], model.kernel, h, model.jitter_base, full_covariance);
        g.mean.array() += model.output_centers[static_cast<Eigen::Index>(d)];
        out.push_back(std::move(g));
    }
    return out;
}

Matrix predict_mean(const SvdklModel& model, const Matrix& x_star) {
    const auto moments = predict(model, x_star, false);
    Matrix out(x_star.rows(), model.output_dim());
    for (std::size_t d = 0; d < moments.size(); ++d) {
        out.col(static_cast<Eigen::Index>(d)) = moments[d].mean;
    }
    return out;
}

VariationalState optimal_variational_state(const SvgpHead& head, const ArdKernelParams& kernel,
                                           const Matrix& features, const Vector& centered_targets,
                                           double jitter_base) {
    check_head(head, kernel);
    const auto& z = head.state.inducing_inputs;
    const JitteredFactor kf = psd_factor(z, kernel, jitter_base, "K_ZZ");
    Matrix kzz = kernel_matrix(z, z, kernel);
    kzz.diagonal().array() += kf.jitter_absolute;
    const Matrix kzx = kernel_matrix(z, features, kernel);
    const double inv_s2 = 1.0 / head.noise_variance();

    // S = K Sigma^-1 K with Sigma = K + s^-2 K_ZX K_XZ; m = s^-2 K Sigma^-1 K_ZX y.
    Matrix sigma = kzz;
    sigma.noalias() += inv_s2 * kzx * kzx.transpose();
    const JitteredFactor sf = factor_with_jitter(sigma, 1e-12, "K_ZZ + K_ZX K_XZ / s^2", true);
    const auto ls = sf.lower.triangularView<Eigen::Lower>();
    const Matrix r = ls.solve(kzz);  // L_Sigma^-1 K
    VariationalState out;
    out.inducing_inputs = z;
    out.mean = inv_s2 * r.transpose() * ls.solve(kzx * centered_targets);
    Matrix s = r.transpose() * r;
    s = 0.5 * (s + s.transpose());
    out.chol_cov = factor_with_jitter(s, 1e-12, "optimal S", true).lower;
    return out;
}

}  // namespace svdkl

#include "doctest.h"

#include <cmath>
#include <numbers>

#include "support/synthetic.hpp"
#include "svdkl/errors.hpp"
#include "svdkl/gp_exact.hpp"
#include "svdkl/svgp.hpp"
#include "svdkl/trainer.hpp"

using namespace svdkl;
using svdkl::testing::random_matrix;
using svdkl::testing::random_vector;

namespace {

constexpr double kJitter = 1e-6;

Matrix random_lower(Rng& rng, Eigen::Index m) {
    Matrix l = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) l(i, j) = 0.3 * rng.normal();
        l(i, i) = std::exp(rng.uniform(-1.5, 0.3));
    }
    return l;
}

SvgpHead random_head(Rng& rng, Eigen::Index m, Eigen::Index q) {
    SvgpHead h;
    h.state.inducing_inputs = random_matrix(rng, m, q);
    h.state.mean = random_vector(rng, m);
    h.state.chol_cov = random_lower(rng, m);
    h.log_noise_variance = rng.uniform(-3.0, -0.5);
    return h;
}

ArdKernelParams random_kernel(Rng& rng, Eigen::Index q) { return {rng.uniform(-0.5, 0.5), random_vector(rng, q, 0.3)}; }

// K_ZZ with the same relative jitter the library applies on its first attempt.
Matrix jittered_kzz(const SvgpHead& h, const ArdKernelParams& k) {
    Matrix kzz = kernel_matrix(h.state.inducing_inputs, h.state.inducing_inputs, k);
    kzz.diagonal().array() += kJitter * kzz.diagonal().mean();
    return kzz;
}

SvdklModel identity_model(Eigen::Index q, const ArdKernelParams& k, std::vector<SvgpHead> heads) {
    SvdklModel m;
    m.net = FeedForwardNet::identity(q);
    m.kernel = k;
    m.input_normalizer = InputNormalizer::identity(q);
    m.output_centers = Vector::Zero(static_cast<Eigen::Index>(heads.size()));
    m.heads = std::move(heads);
    return m;
}

double dense_kl(const SvgpHead& h, const ArdKernelParams& k) {
    const Matrix kzz = jittered_kzz(h, k);
    const Matrix inv = kzz.inverse();
    const Matrix s = h.state.covariance();
    const double m = double(h.state.mean.size());
    return 0.5 * ((inv * s).trace() + h.state.mean.dot(inv * h.state.mean) - m + std::log(kzz.determinant()) -
                  std::log(s.determinant()));
}

}  // namespace

TEST_CASE("q equal to the prior gives zero mean and prior variance") {
    Rng rng(1);
    const ArdKernelParams k = random_kernel(rng, 2);
    SvgpHead h = random_head(rng, 4, 2);
    h.state.mean.setZero();
    h.state.chol_cov = factor_with_jitter(kernel_matrix(h.state.inducing_inputs, h.state.inducing_inputs, k), kJitter, "K").lower;
    const Matrix x = random_matrix(rng, 6, 2);
    const GaussianMoments q = marginal_q(h, k, x, kJitter);
    CHECK(q.mean.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((q.variance.array() - k.signal_variance()).abs().maxCoeff() <= 1e-10);
    CHECK(std::abs(kl_q_p(h, k, kJitter)) <= 1e-10);
}

TEST_CASE("at the inducing inputs with S near zero the mean is m") {
    Rng rng(2);
    const ArdKernelParams k = random_kernel(rng, 3);
    SvgpHead h = random_head(rng, 3, 3);
    h.state.inducing_inputs *= 3.0;
    h.state.chol_cov = 1e-9 * Matrix::Identity(3, 3);
    const GaussianMoments q = marginal_q(h, k, h.state.inducing_inputs, 1e-12);
    CHECK((q.mean - h.state.mean).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("marginal_q matches the dense-inverse formula") {
    Rng rng(3);
    const ArdKernelParams k = random_kernel(rng, 2);
    const SvgpHead h = random_head(rng, 3, 2);
    const Matrix x = random_matrix(rng, 4, 2);
    const Matrix inv = jittered_kzz(h, k).inverse();
    const Matrix kxz = kernel_matrix(x, h.state.inducing_inputs, k);
    const Matrix psi = kxz * inv;
    const Vector mean = psi * h.state.mean;
    const Vector var = (kernel_matrix(x, x, k) - psi * (jittered_kzz(h, k) - h.state.covariance()) * psi.transpose()).diagonal();
    const GaussianMoments q = marginal_q(h, k, x, kJitter);
    CHECK((q.mean - mean).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((q.variance - var).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("expected_log_lik closed cases") {
    const double plain = -0.5 * std::log(2.0 * std::numbers::pi * 0.3) - 0.5 * 0.25 / 0.3;
    CHECK(expected_log_lik(1.0, 0.0, 1.5, 0.3) == doctest::Approx(plain).epsilon(1e-15));
    CHECK(std::abs(expected_log_lik(0.7, 0.0, 0.7, 1.0 / (2.0 * std::numbers::pi))) <= 1e-15);
    CHECK_THROWS_AS(expected_log_lik(0.0, -1.0, 0.0, 1.0), InputError);
    CHECK_THROWS_AS(expected_log_lik(0.0, 1.0, 0.0, 0.0), InputError);
}

TEST_CASE("expected_log_lik agrees with Monte Carlo") {
    Rng rng(4);
    const double mu = 0.4, var = 0.8, y = -0.3, s2 = 0.5;
    const int samples = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double f = mu + std::sqrt(var) * rng.normal();
        const double v = -0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * (y - f) * (y - f) / s2;
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / samples;
    const double se = std::sqrt((sum2 / samples - mean * mean) / samples);
    CHECK(std::abs(expected_log_lik(mu, var, y, s2) - mean) <= 3.0 * se);
}

TEST_CASE("scalar KL example") {
    SvgpHead h;
    h.state.inducing_inputs = Matrix::Zero(1, 1);
    h.state.mean = Vector::Constant(1, 2.0);
    h.state.chol_cov = Matrix::Identity(1, 1);
    const ArdKernelParams k = ArdKernelParams::isotropic(1, 1.0, 1.0);
    CHECK(kl_q_p(h, k, 1e-15) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("KL matches the dense formula and is nonnegative") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const ArdKernelParams k = random_kernel(rng, 2);
        const SvgpHead h = random_head(rng, 3, 2);
        const double kl = kl_q_p(h, k, kJitter);
        CHECK(kl == doctest::Approx(dense_kl(h, k)).epsilon(1e-9));
        CHECK(kl >= -1e-8);
    }
}

TEST_CASE("ELBO is below the exact log marginal likelihood") {
    Rng rng(6);
    for (int t = 0; t < 40; ++t) {
        const auto q = static_cast<Eigen::Index>(1 + rng.below(3));
        const auto n = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto m = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(std::min<Eigen::Index>(n, 16))));
        const ArdKernelParams k = random_kernel(rng, q);
        SvgpHead h = random_head(rng, m, q);
        const Matrix x = random_matrix(rng, n, q);
        const Matrix y = random_matrix(rng, n, 1);
        if (t % 2 == 1) h.state = optimal_variational_state(h, k, x, y.col(0), kJitter);
        const double elbo = elbo_full(identity_model(q, k, {h}), x, y);
        const double lml = log_marginal_likelihood({x, y.col(0), k, h.log_noise_variance});
        CHECK(elbo <= lml + 1e-8);
    }
}

TEST_CASE("bound collapses when Z is the training inputs") {
    Rng rng(7);
    const Eigen::Index n = 24;
    Matrix x(n, 1), y(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i, 0) = rng.uniform(-2.0, 2.0);
        y(i, 0) = std::cos(2.0 * x(i, 0)) + 0.1 * rng.normal();
    }
    const ArdKernelParams k = ArdKernelParams::isotropic(1, 1.0, 0.8);
    SvgpHead h;
    h.state.inducing_inputs = x;
    h.state.mean = Vector::Zero(n);
    h.state.chol_cov = Matrix::Identity(n, n);
    h.log_noise_variance = std::log(0.02);
    h.state = optimal_variational_state(h, k, x, y.col(0), kJitter);
    const SvdklModel model = identity_model(1, k, {h});
    const ExactGpModel gp{x, y.col(0), k, h.log_noise_variance};
    const double lml = log_marginal_likelihood(gp);
    CHECK(std::abs(elbo_full(model, x, y) - lml) <= 1e-3 * std::abs(lml));
    const Matrix q = random_matrix(rng, 30, 1);
    const Vector diff = predict_mean(model, q).col(0) - predict(gp, q).mean;
    CHECK(std::sqrt(diff.squaredNorm() / 30.0) <= 1e-3);
}

TEST_CASE("optimal variational state is a stationary point") {
    Rng rng(8);
    const ArdKernelParams k = random_kernel(rng, 2);
    const Matrix x = random_matrix(rng, 15, 2);
    const Matrix y = random_matrix(rng, 15, 1);
    SvgpHead h = random_head(rng, 5, 2);
    h.state = optimal_variational_state(h, k, x, y.col(0), kJitter);
    SvdklModel model = identity_model(2, k, {h});
    const double best = elbo_full(model, x, y);
    const GradientRecord g = compute_gradients(model, x, y, 15);
    const ParameterLayout layout(model);
    for (const auto& r : layout.ranges()) {
        if (r.group != ParamGroup::kMean && r.group != ParamGroup::kCholCov) continue;
        CHECK(g.gradient.segment(r.offset, r.length).cwiseAbs().maxCoeff() <= 1e-6);
    }
    model.heads[0].state.mean[0] += 1e-3;
    CHECK(elbo_full(model, x, y) < best);
}

TEST_CASE("full minibatch equals the full ELBO") {
    Rng rng(9);
    const ArdKernelParams k = random_kernel(rng, 2);
    const SvdklModel model = identity_model(2, k, {random_head(rng, 3, 2), random_head(rng, 4, 2)});
    const Matrix x = random_matrix(rng, 6, 2);
    const Matrix y = random_matrix(rng, 6, 2);
    CHECK(elbo_minibatch(model, x, y, 6) == elbo_full(model, x, y));
}

TEST_CASE("minibatch estimator is unbiased over all pairs") {
    Rng rng(10);
    const ArdKernelParams k = random_kernel(rng, 2);
    const SvdklModel model = identity_model(2, k, {random_head(rng, 3, 2)});
    for (Eigen::Index n : {4, 8}) {
        const Matrix x = random_matrix(rng, n, 2);
        const Matrix y = random_matrix(rng, n, 1);
        double sum = 0.0;
        int count = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                Matrix xb(2, 2), yb(2, 1);
                xb << x.row(i), x.row(j);
                yb << y.row(i), y.row(j);
                sum += elbo_minibatch(model, xb, yb, n);
                ++count;
            }
        }
        CHECK(count == n * (n - 1) / 2);
        CHECK(std::abs(sum / count - elbo_full(model, x, y)) <= 1e-10);
    }
}

TEST_CASE("ELBO sums per-head terms over shared features") {
    Rng rng(11);
    const ArdKernelParams k = random_kernel(rng, 2);
    SvdklModel model = identity_model(2, k, {random_head(rng, 3, 2), random_head(rng, 2, 2)});
    model.output_centers << 0.5, -1.0;
    const Matrix x = random_matrix(rng, 5, 2);
    const Matrix y = random_matrix(rng, 5, 2);
    double sum = 0.0;
    for (Eigen::Index d = 0; d < 2; ++d) {
        const Vector centered = y.col(d).array() - model.output_centers[d];
        sum += head_elbo(model.heads[std::size_t(d)], k, x, centered, 1.0, kJitter);
    }
    CHECK(elbo_full(model, x, y) == doctest::Approx(sum).epsilon(1e-14));
}

TEST_CASE("ELBO preconditions") {
    Rng rng(12);
    const SvdklModel model = identity_model(2, random_kernel(rng, 2), {random_head(rng, 3, 2)});
    CHECK_THROWS_AS(elbo_full(model, Matrix::Zero(0, 2), Matrix::Zero(0, 1)), InputError);
    CHECK_THROWS_AS(elbo_full(model, Matrix::Zero(3, 2), Matrix::Zero(2, 1)), InputError);
    CHECK_THROWS_AS(elbo_minibatch(model, Matrix::Zero(3, 2), Matrix::Zero(3, 1), 2), InputError);
}

TEST_CASE("prediction at an inducing input with tiny S returns m plus the center") {
    Rng rng(13);
    const ArdKernelParams k = random_kernel(rng, 2);
    SvgpHead h = random_head(rng, 3, 2);
    h.state.inducing_inputs *= 4.0;
    h.state.chol_cov = 1e-9 * Matrix::Identity(3, 3);
    SvdklModel model = identity_model(2, k, {h});
    model.jitter_base = 1e-12;
    model.output_centers[0] = 2.5;
    const Matrix at = h.state.inducing_inputs.topRows(1);
    CHECK(predict_mean(model, at)(0, 0) == doctest::Approx(h.state.mean[0] + 2.5).epsilon(1e-6));
}

TEST_CASE("prediction far from the inducing inputs reverts to the prior") {
    Rng rng(14);
    const ArdKernelParams k = random_kernel(rng, 2);
    SvdklModel model = identity_model(2, k, {random_head(rng, 4, 2)});
    model.output_centers[0] = -0.7;
    const auto p = predict(model, Matrix::Constant(3, 2, 500.0));
    CHECK((p[0].mean.array() + 0.7).abs().maxCoeff() <= 1e-9);
    CHECK((p[0].variance.array() - k.signal_variance()).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("predict_head full covariance matches the dense formula") {
    Rng rng(15);
    const ArdKernelParams k = random_kernel(rng, 2);
    const SvgpHead h = random_head(rng, 3, 2);
    const Matrix x = random_matrix(rng, 4, 2);
    const Matrix kzz = jittered_kzz(h, k);
    const Matrix psi = kernel_matrix(x, h.state.inducing_inputs, k) * kzz.inverse();
    const Matrix cov = psi * h.state.covariance() * psi.transpose() + kernel_matrix(x, x, k) -
                       psi * kernel_matrix(h.state.inducing_inputs, x, k);
    const GaussianMoments p = predict_head(h, k, x, kJitter, true);
    REQUIRE(p.covariance);
    CHECK((*p.covariance - cov).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((p.variance - cov.diagonal()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK_FALSE(predict_head(h, k, x, kJitter, false).covariance);
}

TEST_CASE("variational state validation") {
    VariationalState s;
    s.inducing_inputs = Matrix::Zero(2, 1);
    s.mean = Vector::Zero(2);
    s.chol_cov = Matrix::Identity(2, 2);
    CHECK_NOTHROW(s.validate());
    s.chol_cov(1, 1) = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.chol_cov = Matrix::Identity(3, 3);
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("predictive mean is linear in m") {
    Rng rng(16);
    const ArdKernelParams k = random_kernel(rng, 2);
    const SvgpHead a = random_head(rng, 4, 2);
    SvgpHead b = a, sum = a;
    b.state.mean = random_vector(rng, 4);
    sum.state.mean = a.state.mean + b.state.mean;
    const Matrix x = random_matrix(rng, 5, 2);
    const Vector lhs = predict_head(a, k, x, kJitter, false).mean + predict_head(b, k, x, kJitter, false).mean;
    CHECK((lhs - predict_head(sum, k, x, kJitter, false).mean).cwiseAbs().maxCoeff() <= 1e-12);
}

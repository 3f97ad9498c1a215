#include "doctest.h"

#include <cmath>

#include "support/synthetic.hpp"
#include "svdkl/deepnet.hpp"
#include "svdkl/errors.hpp"
#include "svdkl/kernels.hpp"

using namespace svdkl;
using svdkl::testing::random_matrix;
using svdkl::testing::random_vector;

namespace {

ArdKernelParams random_params(Rng& rng, Eigen::Index q) {
    return {rng.uniform(-1.0, 1.0), random_vector(rng, q, 0.5)};
}

double oracle_se(const Vector& a, const Vector& b, const ArdKernelParams& p) {
    double r2 = 0.0;
    for (Eigen::Index q = 0; q < a.size(); ++q) {
        const double l = std::exp(p.log_length_scales[q]);
        r2 += (a[q] - b[q]) * (a[q] - b[q]) / (l * l);
    }
    return std::exp(p.log_signal_variance) * std::exp(-0.5 * r2);
}

}  // namespace

TEST_CASE("se_ard at zero distance is the signal variance") {
    Rng rng(1);
    const Vector a = random_vector(rng, 4);
    const ArdKernelParams p(std::log(2.5), random_vector(rng, 4));
    CHECK(se_ard(a, a, p) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("se_ard unit offset in one dimension") {
    const ArdKernelParams p = ArdKernelParams::isotropic(3, 1.0, 1.0);
    Vector a = Vector::Zero(3);
    Vector b = Vector::Zero(3);
    b[0] = 1.0;
    CHECK(se_ard(a, b, p) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK(se_ard(a, b, p) == doctest::Approx(0.60653).epsilon(1e-5));
}

TEST_CASE("se_ard tends to the signal variance for huge length scales") {
    Rng rng(2);
    const ArdKernelParams p = ArdKernelParams::isotropic(5, 1.7, 1e8);
    const Vector a = random_vector(rng, 5, 3.0);
    const Vector b = random_vector(rng, 5, 3.0);
    CHECK(std::abs(se_ard(a, b, p) - 1.7) <= 1e-9);
}

TEST_CASE("se_ard is symmetric and bounded") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const ArdKernelParams p = random_params(rng, 3);
        const Vector a = random_vector(rng, 3);
        const Vector b = random_vector(rng, 3);
        const double k = se_ard(a, b, p);
        CHECK(k == se_ard(b, a, p));
        CHECK(k > 0.0);
        CHECK(k < p.signal_variance());
        CHECK(k == doctest::Approx(oracle_se(a, b, p)).epsilon(1e-13));
    }
}

TEST_CASE("se_ard rejects mismatched dimensions") {
    const ArdKernelParams p = ArdKernelParams::isotropic(3, 1.0, 1.0);
    CHECK_THROWS_AS(se_ard(Vector::Zero(2), Vector::Zero(2), p), InputError);
    CHECK_THROWS_AS(se_ard(Vector::Zero(3), Vector::Zero(2), p), InputError);
}

TEST_CASE("kernel_matrix of a single row") {
    const ArdKernelParams p = ArdKernelParams::isotropic(2, 0.8, 1.3);
    const Matrix a = Matrix::Constant(1, 2, 0.4);
    const Matrix k = kernel_matrix(a, a, p);
    REQUIRE(k.rows() == 1);
    REQUIRE(k.cols() == 1);
    CHECK(k(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("kernel_matrix equals the entrywise loop and is transpose-symmetric") {
    Rng rng(4);
    const ArdKernelParams p = random_params(rng, 5);
    const Matrix a = random_matrix(rng, 3, 5);
    const Matrix b = random_matrix(rng, 4, 5);
    const Matrix kab = kernel_matrix(a, b, p);
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) CHECK(kab(i, j) == se_ard(a.row(i).transpose(), b.row(j).transpose(), p));
    }
    CHECK((kab.transpose().array() == kernel_matrix(b, a, p).array()).all());
    const Matrix kaa = kernel_matrix(a, a, p);
    CHECK((kaa.array() == kaa.transpose().array()).all());
    CHECK_THROWS_AS(kernel_matrix(a, random_matrix(rng, 2, 4), p), InputError);
}

TEST_CASE("psd_factor of one point") {
    const ArdKernelParams p = ArdKernelParams::isotropic(2, 2.0, 1.0);
    const JitteredFactor f = psd_factor(Matrix::Zero(1, 2), p, 1e-6);
    CHECK(f.jitter == 1e-6);
    CHECK(f.lower(0, 0) == doctest::Approx(std::sqrt(2.0 * (1.0 + 1e-6))).epsilon(1e-15));
}

TEST_CASE("psd_factor reconstructs the jittered matrix") {
    Rng rng(5);
    const ArdKernelParams p = random_params(rng, 3);
    const Matrix a = random_matrix(rng, 20, 3);
    const JitteredFactor f = psd_factor(a, p, 1e-6);
    Matrix k = kernel_matrix(a, a, p);
    k.diagonal().array() += f.jitter * k.diagonal().mean();
    const Matrix rebuilt = f.lower * f.lower.transpose();
    CHECK((rebuilt - k).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(f.jitter_absolute == doctest::Approx(f.jitter * kernel_matrix(a, a, p).diagonal().mean()));
}

TEST_CASE("psd_factor escalates jitter on duplicated rows") {
    const ArdKernelParams p = ArdKernelParams::isotropic(2, 1.0, 1.0);
    Matrix a(40, 2);
    for (Eigen::Index i = 0; i < 40; ++i) a.row(i) << double(i % 4) * 1e-9, 0.0;
    const JitteredFactor f = psd_factor(a, p, 1e-16);
    CHECK(f.jitter > 1e-16);
    CHECK(f.escalations > 0);
}

TEST_CASE("factor_with_jitter names the matrix when it gives up") {
    Matrix k = Matrix::Identity(2, 2);
    k(0, 1) = k(1, 0) = 5.0;
    try {
        factor_with_jitter(k, 1e-6, "K_test");
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("K_test") != std::string::npos);
    }
}

TEST_CASE("psd_factor succeeds on 512 random points") {
    Rng rng(6);
    const ArdKernelParams p = ArdKernelParams::isotropic(2, 1.0, 3.0);
    CHECK_NOTHROW(psd_factor(random_matrix(rng, 512, 2), p, 1e-6));
}

TEST_CASE("factorization counter increments per call") {
    const std::uint64_t before = factorization_count();
    factor_with_jitter(Matrix::Identity(3, 3), 1e-6, "I");
    psd_factor(Matrix::Zero(1, 1), ArdKernelParams::isotropic(1, 1.0, 1.0), 1e-6);
    CHECK(factorization_count() == before + 2);
}

TEST_CASE("deep_kernel at equal inputs") {
    Rng rng(7);
    const std::vector<Eigen::Index> sizes{4, 6, 2};
    const FeedForwardNet net = FeedForwardNet::glorot(sizes, 3);
    const ArdKernelParams p(std::log(1.9), random_vector(rng, 2));
    const Vector x = random_vector(rng, 4);
    CHECK(deep_kernel(x, x, net, p) == doctest::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("deep_kernel with an identity net is se_ard") {
    Rng rng(8);
    const ArdKernelParams p = random_params(rng, 3);
    const Vector a = random_vector(rng, 3);
    const Vector b = random_vector(rng, 3);
    CHECK(deep_kernel(a, b, FeedForwardNet::identity(3), p) == se_ard(a, b, p));
}

TEST_CASE("deep_kernel composes forward and se_ard") {
    Rng rng(9);
    const std::vector<Eigen::Index> sizes{5, 7, 3};
    FeedForwardNet net = FeedForwardNet::glorot(sizes, 11);
    for (auto& l : net.layers()) l.bias = random_vector(rng, l.bias.size(), 0.2);
    const ArdKernelParams p = random_params(rng, 3);
    const Vector a = random_vector(rng, 5);
    const Vector b = random_vector(rng, 5);
    Matrix both(2, 5);
    both << a.transpose(), b.transpose();
    const Matrix h = net.forward(both);
    CHECK(deep_kernel(a, b, net, p) == doctest::Approx(oracle_se(h.row(0), h.row(1), p)).epsilon(1e-13));
    CHECK_THROWS_AS(deep_kernel(a, b, net, random_params(rng, 2)), ConfigError);
}

TEST_CASE("DeepKernelSpec validation") {
    DeepKernelSpec spec;
    spec.layer_sizes = {24, 20};
    CHECK_THROWS(spec.validate());
    spec.layer_sizes = {24, 50, 20};
    CHECK_NOTHROW(spec.validate());
    spec.layer_sizes = {24, 0, 20};
    CHECK_THROWS(spec.validate());
}

TEST_CASE("ArdKernelParams validation") {
    ArdKernelParams p = ArdKernelParams::isotropic(2, 1.0, 1.0);
    CHECK_NOTHROW(p.validate());
    p.log_length_scales[1] = std::nan("");
    CHECK_THROWS_AS(p.validate(), InputError);
    p.log_length_scales[1] = 1e4;
    CHECK_THROWS_AS(p.validate(), InputError);
}

#include "svdkl/kernels.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "svdkl/deepnet.hpp"
#include "svdkl/errors.hpp"

namespace svdkl {

namespace {

std::atomic<std::uint64_t> g_factorizations{0};

// Distance accumulated in ascending dimension order so that results are reproducible.
inline double scaled_sq_distance(const double* a, Eigen::Index a_stride, const double* b,
                                 Eigen::Index b_stride, const double* inv_l2, Eigen::Index q) {
    double acc = 0.0;
    for (Eigen::Index d = 0; d < q; ++d) {
        const double diff = a[d * a_stride] - b[d * b_stride];
        acc += diff * diff * inv_l2[d];
    }
    return acc;
}

}  // namespace

ArdKernelParams ArdKernelParams::isotropic(Eigen::Index dim, double signal_variance,
                                           double length_scale) {
    return {std::log(signal_variance), Vector::Constant(dim, std::log(length_scale))};
}

double ArdKernelParams::signal_variance() const { return std::exp(log_signal_variance); }

Vector ArdKernelParams::inverse_squared_length_scales() const {
    return (-2.0 * log_length_scales.array()).exp().matrix();
}

void ArdKernelParams::validate() const {
    if (log_length_scales.size() == 0) throw InputError("ARD kernel has no length scales");
    const double sf2 = signal_variance();
    if (!std::isfinite(log_signal_variance) || !(sf2 > 0.0) || !std::isfinite(sf2)) {
        throw InputError("ARD signal variance is not finite and positive");
    }
    for (Eigen::Index q = 0; q < log_length_scales.size(); ++q) {
        const double l2 = std::exp(2.0 * log_length_scales[q]);
        if (!std::isfinite(log_length_scales[q]) || !(l2 > 0.0) || !std::isfinite(l2)) {
            throw InputError("ARD length scale " + std::to_string(q) + " is not finite and positive");
        }
    }
}

void DeepKernelSpec::validate() const {
    if (layer_sizes.size() < 3) {
        throw ConfigError("deep kernel needs an input size, at least one hidden layer and an output size");
    }
    for (auto s : layer_sizes) {
        if (s < 1) throw ConfigError("deep kernel layer sizes must be >= 1");
    }
    if (!(jitter_base > 0.0)) throw ConfigError("jitter_base must be positive");
}

double se_ard(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
              const ArdKernelParams& p) {
    const Eigen::Index q = p.dim();
    if (a.size() != q || b.size() != q) {
        throw InputError("se_ard: vectors of length " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " for " + std::to_string(q) + " length scales");
    }
    const Vector inv_l2 = p.inverse_squared_length_scales();
    return p.signal_variance() *
           std::exp(-0.5 * scaled_sq_distance(a.data(), 1, b.data(), 1, inv_l2.data(), q));
}

Matrix kernel_matrix(const Matrix& a, const Matrix& b, const ArdKernelParams& p) {
    const Eigen::Index q = p.dim();
    if (a.cols() != q || b.cols() != q) {
        throw InputError("kernel_matrix: inputs have " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.cols()) + " columns, kernel expects " + std::to_string(q));
    }
    const Vector inv_l2 = p.inverse_squared_length_scales();
    const double sf2 = p.signal_variance();
    Matrix k(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double d2 = scaled_sq_distance(&a(i, 0), a.rows(), &b(j, 0), b.rows(),
                                                 inv_l2.data(), q);
            k(i, j) = sf2 * std::exp(-0.5 * d2);
        }
    }
    return k;
}

JitteredFactor factor_with_jitter(const Matrix& k, double jitter_base, std::string_view what,
                                  bool try_unjittered) {
    if (k.rows() != k.cols() || k.rows() == 0) {
        throw InputError("cannot factor non-square or empty matrix " + std::string(what));
    }
    ++g_factorizations;
    const double mean_diag = k.diagonal().mean();
    JitteredFactor out;
    Matrix work(k.rows(), k.cols());

    auto attempt = [&](double eps) {
        work = k;
        work.diagonal().array() += eps * mean_diag;
        Eigen::LLT<Matrix> llt(work);
        if (llt.info() != Eigen::Success) return false;
        const Matrix l = llt.matrixL();
        if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) return false;
        out.lower = l;
        out.jitter = eps;
        out.jitter_absolute = eps * mean_diag;
        return true;
    };

    if (try_unjittered) {
        if (attempt(0.0)) return out;
        ++out.escalations;
    }
    double eps = jitter_base;
    for (int i = 0; i < 5; ++i, eps *= 10.0) {
        if (attempt(eps)) return out;
        ++out.escalations;
    }
    throw NumericalError("Cholesky factorization of " + std::string(what) +
                         " failed at maximum jitter " + std::to_string(eps / 10.0));
}

JitteredFactor psd_factor(const Matrix& a, const ArdKernelParams& p, double jitter_base,
                          std::string_view what) {
    if (a.rows() < 1) throw InputError("psd_factor needs at least one point");
    return factor_with_jitter(kernel_matrix(a, a, p), jitter_base, what);
}

std::uint64_t factorization_count() { return g_factorizations.load(); }

double deep_kernel(const Eigen::Ref<const Vector>& x_i, const Eigen::Ref<const Vector>& x_j,
                   const FeedForwardNet& net, const ArdKernelParams& p) {
    if (net.output_dim() != p.dim()) {
        throw ConfigError("deep kernel: net outputs " + std::to_string(net.output_dim()) +
                          " features but kernel has " + std::to_string(p.dim()) + " length scales");
    }
    if (x_i.size() != net.input_dim() || x_j.size() != net.input_dim()) {
        throw ConfigError("deep kernel: input length does not match net input size");
    }
    Matrix batch(2, net.input_dim());
    batch.row(0) = x_i.transpose();
    batch.row(1) = x_j.transpose();
    const Matrix h = net.forward(batch);
    return se_ard(h.row(0).transpose(), h.row(1).transpose(), p);
}

}  // namespace svdkl

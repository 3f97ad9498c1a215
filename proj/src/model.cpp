#include "svdkl/model.hpp"

#include <cmath>
#include <string>

#include "svdkl/errors.hpp"

namespace svdkl {

void VariationalState::validate() const {
    const Eigen::Index m = size();
    if (m < 1) throw ConfigError("variational state needs at least one inducing point");
    if (mean.size() != m || chol_cov.rows() != m || chol_cov.cols() != m) {
        throw ConfigError("variational state: mean/covariance sizes do not match inducing count");
    }
    if (!inducing_inputs.allFinite() || !mean.allFinite() || !chol_cov.allFinite()) {
        throw ConfigError("variational state has non-finite entries");
    }
    if ((chol_cov.diagonal().array() <= 0.0).any()) {
        throw ConfigError("variational Cholesky factor needs a positive diagonal");
    }
}

double SvgpHead::noise_variance() const { return std::exp(log_noise_variance); }

InputNormalizer InputNormalizer::identity(Eigen::Index dim) {
    return {Vector::Zero(dim), Vector::Ones(dim)};
}

InputNormalizer InputNormalizer::fit(const Matrix& x) {
    if (x.rows() < 1) throw InputError("cannot fit a normalizer to an empty matrix");
    InputNormalizer n;
    n.mean = x.colwise().mean().transpose();
    n.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double var = (x.col(j).array() - n.mean[j]).square().mean();
        n.scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return n;
}

Matrix InputNormalizer::apply(const Matrix& x) const {
    if (x.cols() != mean.size()) {
        throw InputError("normalizer expects " + std::to_string(mean.size()) + " columns, got " +
                         std::to_string(x.cols()));
    }
    Matrix out = x;
    out.rowwise() -= mean.transpose();
    out.array().rowwise() /= scale.transpose().array();
    return out;
}

void SvdklModel::validate() const {
    if (net.layers().empty()) throw ConfigError("model has no network");
    if (kernel.dim() != net.output_dim()) {
        throw ConfigError("kernel has " + std::to_string(kernel.dim()) + " length scales but net outputs " +
                          std::to_string(net.output_dim()) + " features");
    }
    if (heads.empty()) throw ConfigError("model has no output heads");
    for (std::size_t d = 0; d < heads.size(); ++d) {
        heads[d].state.validate();
        if (heads[d].state.inducing_inputs.cols() != net.output_dim()) {
            throw ConfigError("head " + std::to_string(d) + " inducing inputs have wrong width");
        }
        if (!std::isfinite(heads[d].log_noise_variance)) {
            throw ConfigError("head " + std::to_string(d) + " has non-finite noise variance");
        }
    }
    if (input_normalizer.mean.size() != net.input_dim() ||
        input_normalizer.scale.size() != net.input_dim()) {
        throw ConfigError("input normalizer width does not match net input size");
    }
    if (output_centers.size() != output_dim()) {
        throw ConfigError("output centers do not match head count");
    }
    if (!(jitter_base > 0.0)) throw ConfigError("jitter_base must be positive");
}

Matrix SvdklModel::features(const Matrix& x) const {
    if (x.cols() != input_dim()) {
        throw ConfigError("model expects " + std::to_string(input_dim()) + " input columns, got " +
                          std::to_string(x.cols()));
    }
    return net.forward(input_normalizer.apply(x));
}

}  // namespace svdkl

#include "svdkl/baseline.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "svdkl/adam.hpp"
#include "svdkl/errors.hpp"
#include "svdkl/random.hpp"

namespace svdkl {

namespace {

Matrix gather_rows(const Matrix& m, std::span<const Eigen::Index> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    return out;
}

}  // namespace

Matrix DnnRegressor::predict(const Matrix& x) const {
    Matrix out = net.forward(input_normalizer.apply(x));
    out.array().rowwise() *= output_scales.transpose().array();
    out.rowwise() += output_centers.transpose();
    return out;
}

double rmse(const Matrix& prediction, const Matrix& truth) {
    if (prediction.rows() != truth.rows() || prediction.cols() != truth.cols() || truth.size() == 0) {
        throw InputError("rmse: shape mismatch");
    }
    return std::sqrt((prediction - truth).squaredNorm() / static_cast<double>(truth.size()));
}

BaselineResult run_baseline_dnn(const AlignedCorpus& corpus, const BaselineConfig& cfg) {
    const Eigen::Index n = corpus.x.rows();
    if (n < 2) throw InputError("baseline needs at least two rows");
    if (corpus.y.rows() != n) throw InputError("corpus X and Y row counts differ");
    if (cfg.layer_sizes.empty() || cfg.max_epochs < 1 || cfg.batch_size < 1 || cfg.patience < 0) {
        throw InputError("invalid baseline configuration");
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng split_rng(derive_seed(cfg.seed, 11));
    split_rng.shuffle(order);
    auto n_val = static_cast<Eigen::Index>(std::llround(cfg.validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<Eigen::Index>(n_val, 1, n - 1);
    const std::span<const Eigen::Index> val_idx(order.data(), static_cast<std::size_t>(n_val));
    const std::span<const Eigen::Index> train_idx(order.data() + n_val, static_cast<std::size_t>(n - n_val));
    const Matrix x_train = gather_rows(corpus.x, train_idx);
    const Matrix y_train = gather_rows(corpus.y, train_idx);
    const Matrix x_val = gather_rows(corpus.x, val_idx);
    const Matrix y_val = gather_rows(corpus.y, val_idx);

    DnnRegressor reg;
    reg.input_normalizer = InputNormalizer::fit(x_train);
    const InputNormalizer out_norm = InputNormalizer::fit(y_train);
    reg.output_centers = out_norm.mean;
    reg.output_scales = out_norm.scale;
    const Matrix xn = reg.input_normalizer.apply(x_train);
    const Matrix yn = out_norm.apply(y_train);

    std::vector<Eigen::Index> sizes{corpus.x.cols()};
    sizes.insert(sizes.end(), cfg.layer_sizes.begin(), cfg.layer_sizes.end());
    FeedForwardNet features = FeedForwardNet::glorot(sizes, derive_seed(cfg.seed, 1));
    if (cfg.pretrain_epochs > 0) {
        features = pretrain_layerwise(features, xn, cfg.pretrain_epochs, cfg.pretrain_step_size,
                                      derive_seed(cfg.seed, 2));
    }
    auto layers = features.layers();
    const std::vector<Eigen::Index> head_sizes{sizes.back(), corpus.y.cols()};
    layers.push_back(FeedForwardNet::glorot(head_sizes, derive_seed(cfg.seed, 3)).layers().front());
    reg.net = FeedForwardNet(std::move(layers), cfg.seed);

    const Eigen::Index p = reg.net.parameter_count();
    Vector params(p);
    reg.net.pack({params.data(), static_cast<std::size_t>(params.size())});
    AdamState state(p);
    Vector grad(p);

    BaselineResult result;
    double best = std::numeric_limits<double>::infinity();
    Vector best_params = params;
    int since_best = 0;
    const Eigen::Index n_train = x_train.rows();
    const Eigen::Index batch = std::min(cfg.batch_size, n_train);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n_train));
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(perm);
        for (Eigen::Index start = 0; start < n_train; start += batch) {
            const Eigen::Index len = std::min(batch, n_train - start);
            const std::span<const Eigen::Index> idx(perm.data() + start, static_cast<std::size_t>(len));
            const Matrix xb = gather_rows(xn, idx);
            const Matrix yb = gather_rows(yn, idx);
            const Matrix resid = reg.net.forward(xb) - yb;
            const Matrix upstream = (2.0 / static_cast<double>(resid.size())) * resid;
            const NetBackward nb = backward(reg.net, xb, upstream);
            nb.params.pack({grad.data(), static_cast<std::size_t>(grad.size())});
            if (!grad.allFinite()) throw NumericalError("baseline: non-finite gradient");
            adam_step(params, grad, state, AdamSettings{}, cfg.step_size);
            reg.net.unpack({params.data(), static_cast<std::size_t>(params.size())});
        }
        result.epochs_run = epoch + 1;
        const double val = rmse(reg.predict(x_val), y_val);
        if (!std::isfinite(val)) throw NumericalError("baseline: non-finite validation error");
        if (val < best) {
            best = val;
            best_params = params;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best > cfg.patience) {
            break;
        }
    }
    reg.net.unpack({best_params.data(), static_cast<std::size_t>(best_params.size())});
    result.regressor = std::move(reg);
    result.validation_rmse = best;
    return result;
}

}  // namespace svdkl

#pragma once

#include <cstdint>
#include <vector>

#include "svdkl/corpus.hpp"
#include "svdkl/deepnet.hpp"
#include "svdkl/model.hpp"

namespace svdkl {

/// Same feature net as the deep kernel, followed by one linear output layer.
struct BaselineConfig {
    std::vector<Eigen::Index> layer_sizes{1000, 500, 50, 20};
    int max_epochs = 500;
    Eigen::Index batch_size = 32;
    double step_size = 1e-3;
    int patience = 20;  // epochs without validation improvement tolerated before stopping
    int pretrain_epochs = 50;
    double pretrain_step_size = 1e-3;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct DnnRegressor {
    InputNormalizer input_normalizer;
    Vector output_centers;
    Vector output_scales;
    FeedForwardNet net;

    Matrix predict(const Matrix& x) const;
};

struct BaselineResult {
    DnnRegressor regressor;
    double validation_rmse = 0.0;
    int epochs_run = 0;
    int best_epoch = 0;
};

/// MSE training with early stopping on a seeded train/validation split.
BaselineResult run_baseline_dnn(const AlignedCorpus& corpus, const BaselineConfig& cfg);

/// Root mean squared error over every entry.
double rmse(const Matrix& prediction, const Matrix& truth);

}  // namespace svdkl

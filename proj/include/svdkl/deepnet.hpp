#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "svdkl/kernels.hpp"
#include "svdkl/types.hpp"

namespace svdkl {

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::kLinear;

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

/// Feedforward feature extractor: rectifier hidden layers, linear output layer.
class FeedForwardNet {
public:
    FeedForwardNet() = default;
    explicit FeedForwardNet(std::vector<DenseLayer> layers, std::uint64_t rng_seed = 0);

    /// Glorot-uniform weights, zero biases. sizes = [D, h_1, ..., Q].
    static FeedForwardNet glorot(std::span<const Eigen::Index> sizes, std::uint64_t seed);
    /// One square linear layer with identity weights and zero bias.
    static FeedForwardNet identity(Eigen::Index dim);

    Eigen::Index input_dim() const;
    Eigen::Index output_dim() const;
    std::vector<Eigen::Index> layer_sizes() const;
    Eigen::Index parameter_count() const;
    std::uint64_t rng_seed() const { return rng_seed_; }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    /// Row i of the result is the feature vector of row i of `batch`.
    Matrix forward(const Matrix& batch) const;

    /// Flat parameter order: for each layer, weight row-major then bias.
    void pack(std::span<double> out) const;
    void unpack(std::span<const double> in);

private:
    void check_chain() const;

    std::vector<DenseLayer> layers_;
    std::uint64_t rng_seed_ = 0;
};

struct NetGradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;

    static NetGradients zeros_like(const FeedForwardNet& net);
    /// Same order as FeedForwardNet::pack.
    void pack(std::span<double> out) const;
};

struct NetBackward {
    NetGradients params;
    Matrix input;  // n x D
};

/// Gradients of sum_ij upstream_ij * forward(net, batch)_ij.
NetBackward backward(const FeedForwardNet& net, const Matrix& batch, const Matrix& upstream);

struct PretrainReport {
    std::vector<double> initial_mse;
    std::vector<double> final_mse;
};

/// Greedy layerwise pretraining: each layer is trained with a temporary linear
/// decoder to reconstruct its own input (full-batch Adam, mean squared error),
/// then frozen. The best iterate per layer is kept.
FeedForwardNet pretrain_layerwise(const FeedForwardNet& net, const Matrix& data, int epochs,
                                  double step_size, std::uint64_t seed,
                                  PretrainReport* report = nullptr);

}  // namespace svdkl

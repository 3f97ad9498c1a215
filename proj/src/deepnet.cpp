#include "svdkl/deepnet.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "svdkl/adam.hpp"
#include "svdkl/errors.hpp"
#include "svdkl/random.hpp"

namespace svdkl {

namespace {

void apply_activation(Matrix& z, Activation act) {
    if (act == Activation::kRelu) z = z.cwiseMax(0.0);
}

Matrix affine(const Matrix& input, const DenseLayer& layer) {
    Matrix z = input * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    return z;
}

Matrix glorot_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-limit, limit);
    }
    return w;
}

}  // namespace

FeedForwardNet::FeedForwardNet(std::vector<DenseLayer> layers, std::uint64_t rng_seed)
    : layers_(std::move(layers)), rng_seed_(rng_seed) {
    check_chain();
}

void FeedForwardNet::check_chain() const {
    if (layers_.empty()) throw ConfigError("network has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.weight.rows() < 1 || layer.weight.cols() < 1 ||
            layer.bias.size() != layer.weight.rows()) {
            throw ConfigError("layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
        }
        if (l > 0 && layer.in_dim() != layers_[l - 1].out_dim()) {
            throw ConfigError("layer " + std::to_string(l) + " input size " +
                              std::to_string(layer.in_dim()) + " does not match previous output " +
                              std::to_string(layers_[l - 1].out_dim()));
        }
    }
}

FeedForwardNet FeedForwardNet::glorot(std::span<const Eigen::Index> sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw ConfigError("network needs at least an input and an output size");
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 1; l < sizes.size(); ++l) {
        if (sizes[l] < 1 || sizes[l - 1] < 1) throw ConfigError("layer sizes must be >= 1");
        DenseLayer layer;
        layer.weight = glorot_matrix(sizes[l], sizes[l - 1], rng);
        layer.bias = Vector::Zero(sizes[l]);
        layer.activation = (l + 1 == sizes.size()) ? Activation::kLinear : Activation::kRelu;
        layers.push_back(std::move(layer));
    }
    return FeedForwardNet(std::move(layers), seed);
}

FeedForwardNet FeedForwardNet::identity(Eigen::Index dim) {
    DenseLayer layer{Matrix::Identity(dim, dim), Vector::Zero(dim), Activation::kLinear};
    return FeedForwardNet({std::move(layer)}, 0);
}

Eigen::Index FeedForwardNet::input_dim() const {
    return layers_.empty() ? 0 : layers_.front().in_dim();
}

Eigen::Index FeedForwardNet::output_dim() const {
    return layers_.empty() ? 0 : layers_.back().out_dim();
}

std::vector<Eigen::Index> FeedForwardNet::layer_sizes() const {
    std::vector<Eigen::Index> sizes;
    if (layers_.empty()) return sizes;
    sizes.push_back(input_dim());
    for (const auto& layer : layers_) sizes.push_back(layer.out_dim());
    return sizes;
}

Eigen::Index FeedForwardNet::parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
}

Matrix FeedForwardNet::forward(const Matrix& batch) const {
    if (batch.cols() != input_dim()) {
        throw InputError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, net expects " + std::to_string(input_dim()));
    }
    Matrix a = batch;
    for (const auto& layer : layers_) {
        a = affine(a, layer);
        apply_activation(a, layer.activation);
    }
    return a;
}

void FeedForwardNet::pack(std::span<double> out) const {
    if (static_cast<Eigen::Index>(out.size()) != parameter_count()) {
        throw InputError("FeedForwardNet::pack: wrong buffer size");
    }
    std::size_t k = 0;
    for (const auto& layer : layers_) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) out[k++] = layer.weight(i, j);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) out[k++] = layer.bias[i];
    }
}

void FeedForwardNet::unpack(std::span<const double> in) {
    if (static_cast<Eigen::Index>(in.size()) != parameter_count()) {
        throw InputError("FeedForwardNet::unpack: wrong buffer size");
    }
    std::size_t k = 0;
    for (auto& layer : layers_) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = in[k++];
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = in[k++];
    }
}

NetGradients NetGradients::zeros_like(const FeedForwardNet& net) {
    NetGradients g;
    for (const auto& layer : net.layers()) {
        g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        g.bias.push_back(Vector::Zero(layer.bias.size()));
    }
    return g;
}

void NetGradients::pack(std::span<double> out) const {
    std::size_t k = 0;
    for (std::size_t l = 0; l < weight.size(); ++l) {
        for (Eigen::Index i = 0; i < weight[l].rows(); ++i)
            for (Eigen::Index j = 0; j < weight[l].cols(); ++j) out[k++] = weight[l](i, j);
        for (Eigen::Index i = 0; i < bias[l].size(); ++i) out[k++] = bias[l][i];
    }
    if (k != out.size()) throw InputError("NetGradients::pack: wrong buffer size");
}

NetBackward backward(const FeedForwardNet& net, const Matrix& batch, const Matrix& upstream) {
    if (batch.cols() != net.input_dim()) throw InputError("backward: batch width mismatch");
    if (upstream.rows() != batch.rows() || upstream.cols() != net.output_dim()) {
        throw InputError("backward: upstream shape does not match forward output");
    }
    const auto& layers = net.layers();
    // inputs[l] is the input of layer l; pre[l] its pre-activation.
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre;
    inputs.reserve(layers.size());
    pre.reserve(layers.size());
    Matrix a = batch;
    for (const auto& layer : layers) {
        inputs.push_back(a);
        pre.push_back(affine(a, layer));
        a = pre.back();
        apply_activation(a, layer.activation);
    }

    NetBackward out;
    out.params = NetGradients::zeros_like(net);
    Matrix delta = upstream;
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (layers[l].activation == Activation::kRelu) {
            delta = (pre[l].array() > 0.0).select(delta, 0.0);
        }
        out.params.weight[l].noalias() = delta.transpose() * inputs[l];
        out.params.bias[l] = delta.colwise().sum().transpose();
        delta = delta * layers[l].weight;
    }
    out.input = std::move(delta);
    return out;
}

namespace {

struct AutoencoderLayer {
    DenseLayer encoder;
    Matrix decoder_weight;  // in x out
    Vector decoder_bias;    // in

    Eigen::Index size() const {
        return encoder.weight.size() + encoder.bias.size() + decoder_weight.size() +
               decoder_bias.size();
    }

    void pack(Vector& v) const {
        v.resize(size());
        Eigen::Index k = 0;
        auto put = [&](const auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) v[k++] = m.data()[i];
        };
        put(encoder.weight);
        put(encoder.bias);
        put(decoder_weight);
        put(decoder_bias);
    }

    void unpack(const Vector& v) {
        Eigen::Index k = 0;
        auto get = [&](auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = v[k++];
        };
        get(encoder.weight);
        get(encoder.bias);
        get(decoder_weight);
        get(decoder_bias);
    }

    // Mean squared reconstruction error and, when grad != nullptr, its gradient in pack order.
    double loss(const Matrix& x, Vector* grad) const {
        const Matrix pre = affine(x, encoder);
        Matrix h = pre;
        apply_activation(h, encoder.activation);
        Matrix recon = h * decoder_weight.transpose();
        recon.rowwise() += decoder_bias.transpose();
        const Matrix resid = recon - x;
        const double count = static_cast<double>(x.size());
        const double mse = resid.squaredNorm() / count;
        if (grad == nullptr) return mse;

        const Matrix d_recon = (2.0 / count) * resid;
        const Matrix g_dec_w = d_recon.transpose() * h;
        const Vector g_dec_b = d_recon.colwise().sum().transpose();
        Matrix d_h = d_recon * decoder_weight;
        if (encoder.activation == Activation::kRelu) d_h = (pre.array() > 0.0).select(d_h, 0.0);
        const Matrix g_enc_w = d_h.transpose() * x;
        const Vector g_enc_b = d_h.colwise().sum().transpose();

        grad->resize(size());
        Eigen::Index k = 0;
        auto put = [&](const auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) (*grad)[k++] = m.data()[i];
        };
        put(g_enc_w);
        put(g_enc_b);
        put(g_dec_w);
        put(g_dec_b);
        return mse;
    }
};

}  // namespace

FeedForwardNet pretrain_layerwise(const FeedForwardNet& net, const Matrix& data, int epochs,
                                  double step_size, std::uint64_t seed, PretrainReport* report) {
    if (data.rows() < 2) throw InputError("pretraining needs at least two rows");
    if (epochs < 1) throw InputError("pretraining needs epochs >= 1");
    if (data.cols() != net.input_dim()) throw InputError("pretraining data width mismatch");

    FeedForwardNet out = net;
    if (report != nullptr) *report = {};
    Matrix layer_input = data;
    for (std::size_t l = 0; l < out.layers().size(); ++l) {
        auto& layer = out.layers()[l];
        Rng rng(derive_seed(seed, l));
        AutoencoderLayer ae;
        ae.encoder = layer;
        ae.decoder_weight = glorot_matrix(layer.in_dim(), layer.out_dim(), rng);
        ae.decoder_bias = layer_input.colwise().mean().transpose();

        Vector params;
        ae.pack(params);
        Vector best = params;
        Vector grad;
        const double initial = ae.loss(layer_input, nullptr);
        if (!std::isfinite(initial)) {
            throw NumericalError("pretraining layer " + std::to_string(l) + ": non-finite loss");
        }
        double best_loss = initial;
        AdamState state(params.size());
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const double current = ae.loss(layer_input, &grad);
            if (!std::isfinite(current) || !grad.allFinite()) {
                throw NumericalError("pretraining layer " + std::to_string(l) + ": non-finite loss at epoch " +
                                     std::to_string(epoch));
            }
            if (current < best_loss) {
                best_loss = current;
                best = params;
            }
            adam_step(params, grad, state, AdamSettings{}, step_size);
            ae.unpack(params);
        }
        const double last = ae.loss(layer_input, nullptr);
        if (std::isfinite(last) && last < best_loss) {
            best_loss = last;
            best = params;
        }
        ae.unpack(best);
        layer = ae.encoder;
        if (report != nullptr) {
            report->initial_mse.push_back(initial);
            report->final_mse.push_back(best_loss);
        }
        layer_input = affine(layer_input, layer);
        apply_activation(layer_input, layer.activation);
    }
    return out;
}

}  // namespace svdkl

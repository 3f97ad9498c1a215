#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "svdkl/corpus.hpp"
#include "svdkl/random.hpp"
#include "svdkl/vc_pipeline.hpp"

namespace svdkl::testing {

/// Piecewise target on [-1, 1]^2: sign flip across both axes, a step in the
/// second coordinate and a smooth oscillation in the first.
inline double piecewise_target(double a, double b) {
    return (a * b > 0.0 ? 1.0 : -1.0) + 0.5 * std::sin(5.0 * a) + (b > 0.3 ? 0.8 : 0.0);
}

/// n uniform inputs with the piecewise target plus Gaussian noise of the given std.
inline AlignedCorpus piecewise_task(Rng& rng, Eigen::Index n, double noise_std) {
    AlignedCorpus c;
    c.x.resize(n, 2);
    c.y.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        c.x(i, 0) = rng.uniform(-1.0, 1.0);
        c.x(i, 1) = rng.uniform(-1.0, 1.0);
        c.y(i, 0) = piecewise_target(c.x(i, 0), c.x(i, 1)) + noise_std * rng.normal();
    }
    return c;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

/// Random utterance with smooth MCC trajectories and a partly voiced F0 track.
inline vc::Utterance random_utterance(Rng& rng, Eigen::Index frames) {
    vc::Utterance u;
    u.mcc.resize(frames, vc::kMccWidth);
    for (Eigen::Index d = 0; d < vc::kMccWidth; ++d) {
        const double amp = 1.0 / (1.0 + 0.5 * static_cast<double>(d));
        const double period = rng.uniform(8.0, 30.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double offset = 0.5 * amp * rng.normal();
        for (Eigen::Index t = 0; t < frames; ++t) {
            u.mcc(t, d) = offset + amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase) +
                          0.05 * amp * rng.normal();
        }
    }
    u.f0_hz.resize(frames);
    for (Eigen::Index t = 0; t < frames; ++t) {
        const bool voiced = (t % 10) >= 2;
        u.f0_hz[t] = voiced ? std::exp(std::log(120.0) + 0.15 * std::sin(0.3 * static_cast<double>(t)) +
                                       0.05 * rng.normal())
                            : 0.0;
    }
    return u;
}

struct SyntheticVoicePair {
    Matrix map_weight;  // 24 x 24
    Vector map_bias;
    double f0_slope = 0.8;
    double f0_target_mean = std::log(220.0);
};

/// Smooth nonlinear spectral map applied frame-wise: y = 0.6 tanh(W x + b) + 0.7 x.
inline SyntheticVoicePair make_voice_map(Rng& rng) {
    SyntheticVoicePair p;
    p.map_weight = random_matrix(rng, vc::kMccOrder, vc::kMccOrder, 0.6 / std::sqrt(double(vc::kMccOrder)));
    p.map_bias = random_vector(rng, vc::kMccOrder, 0.2);
    return p;
}

inline RowVector apply_voice_map(const SyntheticVoicePair& p, const RowVector& x) {
    const Vector pre = p.map_weight * x.transpose() + p.map_bias;
    return (0.6 * pre.array().tanh() + 0.7 * x.transpose().array()).matrix().transpose();
}

/// Target utterance: mapped spectrum, time-stretched by `stretch`, with log-F0
/// mapped as slope * (log f0 - log 120) + target mean.
inline vc::Utterance make_target(const SyntheticVoicePair& p, const vc::Utterance& src, double stretch) {
    const Eigen::Index n = src.frames();
    const auto m = static_cast<Eigen::Index>(std::lround(static_cast<double>(n) * stretch));
    vc::Utterance t = src;
    t.mcc.resize(m, vc::kMccWidth);
    t.f0_hz.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto i = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(static_cast<double>(j) / stretch));
        t.mcc(j, 0) = src.mcc(i, 0);
        t.mcc.row(j).tail(vc::kMccOrder) = apply_voice_map(p, src.mcc.row(i).tail(vc::kMccOrder));
        t.f0_hz[j] = src.f0_hz[i] > 0.0
                         ? std::exp(p.f0_slope * (std::log(src.f0_hz[i]) - std::log(120.0)) + p.f0_target_mean)
                         : 0.0;
    }
    return t;
}

inline std::vector<vc::UtterancePair> voice_corpus(Rng& rng, const SyntheticVoicePair& p, int count) {
    std::vector<vc::UtterancePair> pairs;
    for (int k = 0; k < count; ++k) {
        const auto frames = static_cast<Eigen::Index>(30 + rng.below(20));
        vc::Utterance src = random_utterance(rng, frames);
        pairs.push_back({"utt" + std::to_string(k), src, make_target(p, src, rng.uniform(0.8, 1.25))});
    }
    return pairs;
}

}  // namespace svdkl::testing

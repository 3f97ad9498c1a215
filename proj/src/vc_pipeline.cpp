#include "svdkl/vc_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "svdkl/errors.hpp"
#include "svdkl/svgp.hpp"

namespace svdkl::vc {

namespace {

double frame_sq_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    double acc = 0.0;
    for (Eigen::Index d = 0; d < a.cols(); ++d) {
        const double diff = a(i, d) - b(j, d);
        acc += diff * diff;
    }
    return acc;
}

const double kDbScale = 10.0 / std::numbers::ln10;

}  // namespace

void Utterance::validate() const {
    if (mcc.cols() != kMccWidth) {
        throw InputError("utterance MCC matrix has " + std::to_string(mcc.cols()) + " columns, expected " +
                         std::to_string(kMccWidth));
    }
    if (f0_hz.size() != mcc.rows()) throw InputError("F0 track length differs from MCC frame count");
    if (!mcc.allFinite()) throw InputError("utterance has non-finite MCC values");
    for (Eigen::Index i = 0; i < f0_hz.size(); ++i) {
        if (!(f0_hz[i] >= 0.0) || !std::isfinite(f0_hz[i])) {
            throw InputError("F0 frame " + std::to_string(i) + " is negative or non-finite");
        }
    }
}

DtwResult dtw_align(const Matrix& source, const Matrix& target) {
    const Eigen::Index ns = source.rows();
    const Eigen::Index nt = target.rows();
    if (ns == 0 || nt == 0) throw InputError("dtw_align: empty sequence");
    if (source.cols() != target.cols()) throw InputError("dtw_align: frame widths differ");

    constexpr double kInf = std::numeric_limits<double>::infinity();
    Matrix acc = Matrix::Constant(ns, nt, kInf);
    // 0 diagonal, 1 from (i-1, j), 2 from (i, j-1)
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> from(ns, nt);
    for (Eigen::Index i = 0; i < ns; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
            const double local = frame_sq_distance(source, i, target, j);
            if (i == 0 && j == 0) {
                acc(i, j) = local;
                from(i, j) = 0;
                continue;
            }
            double best = kInf;
            std::uint8_t step = 0;
            if (i > 0 && j > 0) best = acc(i - 1, j - 1);
            if (i > 0 && acc(i - 1, j) < best) {
                best = acc(i - 1, j);
                step = 1;
            }
            if (j > 0 && acc(i, j - 1) < best) {
                best = acc(i, j - 1);
                step = 2;
            }
            acc(i, j) = best + local;
            from(i, j) = step;
        }
    }

    DtwResult out;
    out.cost = acc(ns - 1, nt - 1);
    Eigen::Index i = ns - 1;
    Eigen::Index j = nt - 1;
    out.path.emplace_back(i, j);
    while (i > 0 || j > 0) {
        switch (from(i, j)) {
            case 0: --i; --j; break;
            case 1: --i; break;
            default: --j; break;
        }
        out.path.emplace_back(i, j);
    }
    std::reverse(out.path.begin(), out.path.end());
    return out;
}

AlignedCorpus build_training_set(std::span<const UtterancePair> pairs) {
    if (pairs.empty()) throw InputError("no utterance pairs to align");
    std::vector<DtwResult> alignments;
    Eigen::Index rows = 0;
    for (const auto& p : pairs) {
        p.source.validate();
        p.target.validate();
        if (p.source.frames() < 2 || p.target.frames() < 2) {
            throw InputError("utterance pair '" + p.id + "' has fewer than two frames");
        }
        alignments.push_back(dtw_align(p.source.spectral(), p.target.spectral()));
        rows += static_cast<Eigen::Index>(alignments.back().path.size());
    }

    AlignedCorpus corpus;
    corpus.x.resize(rows, kMccOrder);
    corpus.y.resize(rows, kMccOrder);
    corpus.provenance.reserve(static_cast<std::size_t>(rows));
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        for (const auto& [i, j] : alignments[k].path) {
            corpus.x.row(r) = pairs[k].source.mcc.row(i).tail(kMccOrder);
            corpus.y.row(r) = pairs[k].target.mcc.row(j).tail(kMccOrder);
            corpus.provenance.push_back({pairs[k].id, i, j});
            ++r;
        }
    }

    std::vector<Utterance> sources;
    std::vector<Utterance> targets;
    for (const auto& p : pairs) {
        sources.push_back(p.source);
        targets.push_back(p.target);
    }
    try {
        corpus.f0_source = f0_stats(sources);
        corpus.f0_target = f0_stats(targets);
    } catch (const InputError&) {
        corpus.f0_source.reset();
        corpus.f0_target.reset();
    }
    return corpus;
}

F0Stats f0_stats(std::span<const Utterance> utterances) {
    std::vector<double> logs;
    for (const auto& u : utterances) {
        for (Eigen::Index i = 0; i < u.f0_hz.size(); ++i) {
            if (u.f0_hz[i] > 0.0) logs.push_back(std::log(u.f0_hz[i]));
        }
    }
    if (logs.size() < 2) throw InputError("F0 statistics need at least two voiced frames");
    double sum = 0.0;
    for (double v : logs) sum += v;
    const double mean = sum / static_cast<double>(logs.size());
    double ss = 0.0;
    for (double v : logs) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(logs.size())),
            static_cast<std::int64_t>(logs.size())};
}

F0Stats f0_stats_of_track(const Vector& f0_hz) {
    Utterance u;
    u.f0_hz = f0_hz;
    return f0_stats(std::span<const Utterance>(&u, 1));
}

Vector convert_f0(const Vector& track, const F0Stats& source, const F0Stats& target) {
    if (!(source.std_log_f0 > 0.0)) {
        throw NumericalError("source log-F0 standard deviation is zero; cannot convert pitch");
    }
    const double ratio = target.std_log_f0 / source.std_log_f0;
    Vector out(track.size());
    for (Eigen::Index i = 0; i < track.size(); ++i) {
        out[i] = track[i] > 0.0
                     ? std::exp(ratio * (std::log(track[i]) - source.mean_log_f0) + target.mean_log_f0)
                     : 0.0;
    }
    return out;
}

Utterance convert_utterance(const SvdklModel& model, const Utterance& source) {
    source.validate();
    if (model.input_dim() != kMccOrder || model.output_dim() != kMccOrder) {
        throw ConfigError("model maps " + std::to_string(model.input_dim()) + " -> " +
                          std::to_string(model.output_dim()) + " dimensions; conversion needs 24 -> 24");
    }
    if (!model.f0_source || !model.f0_target) {
        throw ConfigError("model carries no F0 statistics; cannot convert pitch");
    }
    Utterance out = source;
    if (source.frames() > 0) {
        out.mcc.rightCols(kMccOrder) = predict_mean(model, source.spectral());
    }
    out.f0_hz = convert_f0(source.f0_hz, *model.f0_source, *model.f0_target);
    return out;
}

double mcd_frames(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0 || b.rows() == 0) throw InputError("mcd: empty sequence");
    const DtwResult align = dtw_align(a, b);
    double total = 0.0;
    for (const auto& [i, j] : align.path) {
        total += kDbScale * std::sqrt(2.0 * frame_sq_distance(a, i, b, j));
    }
    return total / static_cast<double>(align.path.size());
}

double mcd(const Utterance& a, const Utterance& b) {
    if (a.frames() == 0 || b.frames() == 0) throw InputError("mcd: empty utterance");
    a.validate();
    b.validate();
    return mcd_frames(a.spectral(), b.spectral());
}

double warp_phase(double omega, double alpha) {
    if (!(std::abs(alpha) < 1.0)) throw InputError("warp_phase: |alpha| must be < 1");
    // Two-argument arctangent keeps beta on the branch with beta(pi) = pi.
    const double a2 = alpha * alpha;
    return std::atan2((1.0 - a2) * std::sin(omega), (1.0 + a2) * std::cos(omega) - 2.0 * alpha);
}

void WarpingConfig::validate() const {
    if (!(std::abs(alpha) < 1.0)) throw InputError("warping alpha must satisfy |alpha| < 1");
    if (gamma != 0.0) throw InputError("only the cepstral case gamma = 0 is supported");
    if (num_bins < 2) throw InputError("spectrum needs at least two bins");
}

Vector spectrum_frequencies(Eigen::Index num_bins) {
    Vector w(num_bins);
    for (Eigen::Index k = 0; k < num_bins; ++k) {
        w[k] = std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_bins - 1);
    }
    return w;
}

Vector mcc_to_log_spectrum(const Vector& coeffs, const WarpingConfig& cfg) {
    cfg.validate();
    const Vector omega = spectrum_frequencies(cfg.num_bins);
    Vector out(cfg.num_bins);
    for (Eigen::Index k = 0; k < cfg.num_bins; ++k) {
        const double beta = warp_phase(omega[k], cfg.alpha);
        double acc = 0.0;
        for (Eigen::Index m = 0; m < coeffs.size(); ++m) {
            acc += coeffs[m] * std::cos(static_cast<double>(m) * beta);
        }
        out[k] = acc;
    }
    return out;
}

TrainResult train_voice_conversion(std::span<const UtterancePair> pairs, const TrainConfig& cfg,
                                   const EpochCallback& on_epoch) {
    const AlignedCorpus corpus = build_training_set(pairs);
    return train(corpus, cfg, on_epoch);
}

}  // namespace svdkl::vc

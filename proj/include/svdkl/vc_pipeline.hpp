#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "svdkl/corpus.hpp"
#include "svdkl/model.hpp"
#include "svdkl/trainer.hpp"

namespace svdkl::vc {

inline constexpr Eigen::Index kMccOrder = 24;               // coefficients used for mapping
inline constexpr Eigen::Index kMccWidth = kMccOrder + 1;    // including the energy term C(0)

/// Per-frame vocoder features of one utterance.
struct Utterance {
    int sample_rate_hz = 16000;
    double frame_period_ms = 5.0;
    Vector f0_hz;                     // 0 marks unvoiced frames
    Matrix mcc;                       // frames x 25
    nlohmann::json aperiodicity;      // opaque; null when absent

    Eigen::Index frames() const { return mcc.rows(); }
    /// Columns 1..24.
    Matrix spectral() const { return mcc.rightCols(kMccOrder); }
    void validate() const;

    bool operator==(const Utterance&) const = default;
};

struct UtterancePair {
    std::string id;
    Utterance source;
    Utterance target;
};

struct DtwResult {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> path;
    double cost = 0.0;
};

/// Minimal squared-Euclidean alignment with steps (1,0), (0,1), (1,1); ties prefer the diagonal.
DtwResult dtw_align(const Matrix& source, const Matrix& target);

/// Drops C(0), aligns each pair and stacks the aligned frames in input order.
/// F0 statistics are attached when each side has at least two voiced frames.
AlignedCorpus build_training_set(std::span<const UtterancePair> pairs);

/// Natural-log mean and population standard deviation over voiced frames.
F0Stats f0_stats(std::span<const Utterance> utterances);
F0Stats f0_stats_of_track(const Vector& f0_hz);

/// log f0' = (sd_t / sd_s)(log f0 - mu_s) + mu_t on voiced frames; unvoiced stay 0.
Vector convert_f0(const Vector& track, const F0Stats& source, const F0Stats& target);

/// Predictive-mean spectral mapping with C(0), metadata and aperiodicity copied from `source`.
Utterance convert_utterance(const SvdklModel& model, const Utterance& source);

/// Mean mel-cepstral distortion in dB over the DTW path of two 24-column sequences.
double mcd_frames(const Matrix& a, const Matrix& b);
double mcd(const Utterance& a, const Utterance& b);

/// All-pass warped frequency for omega in [0, pi].
double warp_phase(double omega, double alpha);

struct WarpingConfig {
    double alpha = 0.41;
    double gamma = 0.0;
    Eigen::Index num_bins = 513;

    void validate() const;
};

/// Natural-log magnitude sum_m c_m cos(m beta(omega_k)) at omega_k = pi k / (bins - 1).
Vector mcc_to_log_spectrum(const Vector& coeffs, const WarpingConfig& cfg);

/// Frequency grid used by mcc_to_log_spectrum.
Vector spectrum_frequencies(Eigen::Index num_bins);

/// build_training_set followed by train().
TrainResult train_voice_conversion(std::span<const UtterancePair> pairs, const TrainConfig& cfg,
                                   const EpochCallback& on_epoch = {});

}  // namespace svdkl::vc

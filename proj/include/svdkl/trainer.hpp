#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svdkl/adam.hpp"
#include "svdkl/corpus.hpp"
#include "svdkl/model.hpp"

namespace svdkl {

struct TrainConfig {
    int epochs = 100;
    Eigen::Index batch_size = 256;
    double step_size = 1e-2;      // variational, kernel and noise parameters
    double net_step_size = 1e-3;  // pretrained net weights
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    Eigen::Index inducing_count = 200;
    std::vector<Eigen::Index> layer_sizes{1000, 500, 50, 20};  // hidden + output; input size comes from data
    int pretrain_epochs = 50;
    double pretrain_step_size = 1e-3;
    double jitter_base = 1e-6;
    std::uint64_t seed = 0;
    bool shared_inducing = false;
    bool deep_kernel = true;  // false: identity feature map, plain SVGP on normalized inputs
    bool log_full_elbo = false;
    double warping_alpha = 0.41;

    AdamSettings adam() const { return {adam_beta1, adam_beta2, adam_epsilon}; }
    /// Throws InputError on violated invariants.
    void validate() const;
};

enum class ParamGroup { kNet = 0, kArd, kMean, kCholCov, kInducing, kNoise };
inline constexpr std::array<ParamGroup, 6> kAllGroups{ParamGroup::kNet,     ParamGroup::kArd,
                                                      ParamGroup::kMean,    ParamGroup::kCholCov,
                                                      ParamGroup::kInducing, ParamGroup::kNoise};
const char* group_name(ParamGroup g);

struct ParamRange {
    ParamGroup group;
    std::size_t head;  // meaningless for the shared groups
    Eigen::Index offset;
    Eigen::Index length;
};

/// Flat layout of every trainable parameter: net, ARD (log sf2 then log l_q),
/// then per head m, chol_S (lower triangle row-major, log diagonal), Z (row-major), log noise.
class ParameterLayout {
public:
    explicit ParameterLayout(const SvdklModel& model);

    Eigen::Index size() const { return total_; }
    const std::vector<ParamRange>& ranges() const { return ranges_; }

    Vector pack(const SvdklModel& model) const;
    void unpack(const Vector& params, SvdklModel& model) const;
    /// Per-entry value for the group of that entry.
    Vector per_entry(const std::function<double(ParamGroup)>& value) const;

private:
    std::vector<ParamRange> ranges_;
    Eigen::Index total_ = 0;
};

/// Gradient of the negative minibatch ELBO over the full layout.
struct GradientRecord {
    double objective = 0.0;  // negative ELBO estimate
    Vector gradient;
    int jitter_escalations = 0;
};

/// One K_ZZ factorization per head. X/Y in raw units; throws NumericalError
/// naming the group when a gradient is non-finite.
GradientRecord compute_gradients(const SvdklModel& model, const Matrix& x_batch,
                                 const Matrix& y_batch, Eigen::Index total_n);

/// Negative minibatch ELBO, evaluated through the svgp path.
double negative_elbo(const SvdklModel& model, const Matrix& x_batch, const Matrix& y_batch,
                     Eigen::Index total_n);

struct GradCheckGroup {
    ParamGroup group;
    double worst_relative_error = 0.0;
    Eigen::Index worst_index = -1;
    Eigen::Index checked = 0;
    bool passed = true;
};

struct GradCheckReport {
    double tolerance = 0.0;
    std::vector<GradCheckGroup> groups;
    bool passed = true;
};

using GradientFunction =
    std::function<GradientRecord(const SvdklModel&, const Matrix&, const Matrix&, Eigen::Index)>;

/// Compares `gradient` (compute_gradients by default) with central differences of
/// negative_elbo on the full corpus. Relative error is |a - f| / max(|a|, |f|, floor)
/// with floor = 1e-6 * max(1, |objective|). A positive `max_per_group` checks an
/// evenly strided subset of at most that many entries in each group.
GradCheckReport grad_check(const SvdklModel& model, const Matrix& x, const Matrix& y,
                           double tolerance, double step = 1e-5,
                           const GradientFunction& gradient = compute_gradients,
                           Eigen::Index max_per_group = 0);

struct TrainingLogRow {
    int epoch = 0;
    double mean_objective = 0.0;  // mean negative minibatch ELBO
    std::optional<double> full_elbo;
    int jitter_escalations = 0;
};

struct TrainingLog {
    std::vector<TrainingLogRow> rows;
    std::vector<std::string> warnings;
};

struct TrainResult {
    SvdklModel model;
    TrainingLog log;
};

/// Normalizer, centers, pretrained net, kernel and heads for `corpus` before any ELBO step.
SvdklModel initialize_model(const AlignedCorpus& corpus, const TrainConfig& cfg, TrainingLog* log);

/// Which parameter groups the optimizer may move.
struct GroupMask {
    bool net = true, ard = true, mean = true, chol_cov = true, inducing = true, noise = true;
    bool allows(ParamGroup g) const;
};

using EpochCallback = std::function<void(const TrainingLogRow&)>;

/// Epoch loop of seeded-shuffled minibatch Adam steps on the negative ELBO.
void optimize(SvdklModel& model, const Matrix& x, const Matrix& y, const TrainConfig& cfg,
              const GroupMask& mask, TrainingLog& log, const EpochCallback& on_epoch = {});

/// Full pipeline: initialize_model then optimize; F0 statistics are attached from the corpus.
TrainResult train(const AlignedCorpus& corpus, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace svdkl

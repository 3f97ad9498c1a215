#pragma once

#include <cstdint>

#include "svdkl/types.hpp"

namespace svdkl {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators for a flat parameter vector.
struct AdamState {
    Vector first_moment;
    Vector second_moment;
    std::int64_t step = 0;

    AdamState() = default;
    explicit AdamState(Eigen::Index size)
        : first_moment(Vector::Zero(size)), second_moment(Vector::Zero(size)) {}
};

/// One bias-corrected Adam descent step on `params` with per-entry step sizes.
void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamSettings& settings,
               const Vector& step_sizes);

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamSettings& settings,
               double step_size);

}  // namespace svdkl

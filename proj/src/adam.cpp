#include "svdkl/adam.hpp"

#include <cmath>

#include "svdkl/errors.hpp"

namespace svdkl {

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamSettings& settings,
               const Vector& step_sizes) {
    const Eigen::Index n = params.size();
    if (grads.size() != n || step_sizes.size() != n || state.first_moment.size() != n ||
        state.second_moment.size() != n) {
        throw InputError("adam_step: parameter, gradient, step-size and state sizes differ");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(settings.beta1, t);
    const double c2 = 1.0 - std::pow(settings.beta2, t);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double g = grads[i];
        state.first_moment[i] = settings.beta1 * state.first_moment[i] + (1.0 - settings.beta1) * g;
        state.second_moment[i] =
            settings.beta2 * state.second_moment[i] + (1.0 - settings.beta2) * g * g;
        const double m_hat = state.first_moment[i] / c1;
        const double v_hat = state.second_moment[i] / c2;
        params[i] -= step_sizes[i] * m_hat / (std::sqrt(v_hat) + settings.epsilon);
    }
}

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamSettings& settings,
               double step_size) {
    adam_step(params, grads, state, settings, Vector::Constant(params.size(), step_size));
}

}  // namespace svdkl

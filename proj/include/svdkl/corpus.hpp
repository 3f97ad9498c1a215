#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svdkl/model.hpp"
#include "svdkl/types.hpp"

namespace svdkl {

struct FramePair {
    std::string utterance_id;
    Eigen::Index source_frame = 0;
    Eigen::Index target_frame = 0;

    bool operator==(const FramePair&) const = default;
};

/// Time-aligned training pairs: row i of x maps to row i of y.
struct AlignedCorpus {
    Matrix x;
    Matrix y;
    std::vector<FramePair> provenance;
    // Filled by the voice-conversion front end; attached to trained models.
    std::optional<F0Stats> f0_source;
    std::optional<F0Stats> f0_target;

    Eigen::Index size() const { return x.rows(); }
};

}  // namespace svdkl

#pragma once

#include <cstddef>
#include <cstdint>

namespace dalign {

struct GradCheckConfig {
    std::size_t instances = 100;
    double step = 1e-5;
    std::uint64_t seed = 0;
    std::size_t ways = 3;
    std::size_t shots = 2;
    std::size_t max_cells = 8;
    std::size_t max_dim = 8;
    /// Instances where any query descriptor's best and runner-up cosine in some
    /// pool differ by less than this are redrawn: a central difference across
    /// a nearest-neighbour switch measures a different branch.
    double tie_margin = 1e-3;
    /// Components are compared relative to max(|analytic|, |numeric|, floor).
    double relative_floor = 1e-6;
};

struct GradCheckResult {
    std::size_t instances = 0;
    std::size_t components = 0;
    std::size_t redrawn_ties = 0;
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
};

/// Compares loss_gradient_wrt_query against central finite differences of
/// episode_loss on random Gaussian episodes.
GradCheckResult run_gradient_check(const GradCheckConfig& config);

} // namespace dalign

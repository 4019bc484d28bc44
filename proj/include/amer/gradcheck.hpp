#pragma once

#include <functional>
#include <span>
#include <vector>

#include "amer/rng.hpp"
#include "amer/vec.hpp"

namespace amer {

struct GradCheckResult {
    f64 max_rel_err = 0.0;
    size_t worst_coord = 0;
    f64 worst_analytic = 0.0;
    f64 worst_fd = 0.0;
};

// Central finite differences on `samples` randomly chosen coordinates.
// Relative error per coordinate: |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
// Throws NonFiniteLoss if the loss is not finite at params.
GradCheckResult grad_check(const std::function<f64(std::span<const f64>)>& loss,
                           std::span<const f64> params, std::span<const f64> analytic_grad,
                           f64 epsilon, int samples, RngStream rng);

}  // namespace amer

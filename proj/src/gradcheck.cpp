#include "amer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace amer {

GradCheckResult grad_check(const std::function<f64(std::span<const f64>)>& loss,
                           std::span<const f64> params, std::span<const f64> analytic_grad,
                           f64 epsilon, int samples, RngStream rng) {
    require(params.size() == analytic_grad.size(), Errc::CountMismatch,
            "gradient length must match parameter length");
    require(epsilon >= 1e-5 && epsilon <= 1e-3, Errc::InvalidConfig,
            "epsilon must lie in [1e-5, 1e-3]");
    std::vector<f64> theta(params.begin(), params.end());
    f64 base = loss(theta);
    require(std::isfinite(base), Errc::NonFiniteLoss, "loss is not finite at params");

    size_t n = theta.size();
    std::vector<size_t> coords;
    if (size_t(samples) >= n) {
        coords.resize(n);
        for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        // partial Fisher-Yates: first `samples` of a shuffled index range
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = 0; i < size_t(samples); ++i) {
            size_t j = i + size_t(rng.below(n - i));
            std::swap(idx[i], idx[j]);
            coords.push_back(idx[i]);
        }
    }

    GradCheckResult res;
    for (size_t c : coords) {
        f64 saved = theta[c];
        theta[c] = saved + epsilon;
        f64 up = loss(theta);
        theta[c] = saved - epsilon;
        f64 down = loss(theta);
        theta[c] = saved;
        require(std::isfinite(up) && std::isfinite(down), Errc::NonFiniteLoss,
                "loss is not finite at a perturbed point");
        f64 fd = (up - down) / (2.0 * epsilon);
        f64 ga = analytic_grad[c];
        f64 rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = c;
            res.worst_analytic = ga;
            res.worst_fd = fd;
        }
    }
    return res;
}

}  // namespace amer

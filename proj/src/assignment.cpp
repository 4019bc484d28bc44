#include "amer/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace amer {

namespace {

void check_square_finite(const CostMatrix& c) {
    require(c.n >= 1, Errc::ShapeMismatch, "cost matrix must be at least 1x1");
    require(c.cost.size() == size_t(c.n) * size_t(c.n), Errc::ShapeMismatch,
            "cost storage does not match declared size");
    for (f64 x : c.cost)
        require(std::isfinite(x), Errc::NonFinite, "cost matrix has a non-finite entry");
}

f64 total_for(const CostMatrix& c, std::span<const int> target_of) {
    f64 t = 0.0;
    for (int i = 0; i < c.n; ++i) t += c.at(i, target_of[size_t(i)]);
    return t;
}

}  // namespace

Matching hungarian(const CostMatrix& cost) {
    check_square_finite(cost);
    int n = cost.n;
    constexpr f64 kInf = std::numeric_limits<f64>::infinity();

    // 1-based potentials; p[j] = row matched to column j
    std::vector<f64> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
    std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<f64> minv(size_t(n) + 1, kInf);
        std::vector<char> used(size_t(n) + 1, 0);
        do {
            used[size_t(j0)] = 1;
            int i0 = p[size_t(j0)], j1 = 0;
            f64 delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[size_t(j)]) continue;
                f64 cur = cost.at(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
                if (cur < minv[size_t(j)]) {
                    minv[size_t(j)] = cur;
                    way[size_t(j)] = j0;
                }
                if (minv[size_t(j)] < delta) {
                    delta = minv[size_t(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[size_t(j)]) {
                    u[size_t(p[size_t(j)])] += delta;
                    v[size_t(j)] -= delta;
                } else {
                    minv[size_t(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[size_t(j0)] != 0);
        do {
            int j1 = way[size_t(j0)];
            p[size_t(j0)] = p[size_t(j1)];
            j0 = j1;
        } while (j0);
    }

    Matching m;
    m.target_of.assign(size_t(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[size_t(j)]) m.target_of[size_t(p[size_t(j)] - 1)] = j - 1;
    m.total = total_for(cost, m.target_of);
    return m;
}

Matching brute_force_match(const CostMatrix& cost) {
    check_square_finite(cost);
    require(cost.n <= 9, Errc::TooLarge, "brute force limited to n <= 9");
    std::vector<int> perm(size_t(cost.n));
    std::iota(perm.begin(), perm.end(), 0);
    Matching best;
    best.total = std::numeric_limits<f64>::infinity();
    do {
        f64 t = total_for(cost, perm);
        if (t < best.total) {
            best.total = t;
            best.target_of = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

Matching match_predictions(std::span<const Vec> preds, std::span<const Vec> targets) {
    require(preds.size() == targets.size(), Errc::CountMismatch,
            "prediction and target counts differ");
    require(!preds.empty(), Errc::CountMismatch, "empty prediction set");
    int n = int(preds.size());
    CostMatrix c(n);
    for (int i = 0; i < n; ++i) {
        require(preds[size_t(i)].size() == targets[0].size(), Errc::DimMismatch,
                "prediction/target dimension mismatch");
        for (int j = 0; j < n; ++j) c.at(i, j) = -cosine_sim(preds[size_t(i)], targets[size_t(j)]);
    }
    return hungarian(c);
}

}  // namespace amer

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "amer/assignment.hpp"
#include "amer/error.hpp"
#include "amer/rng.hpp"
#include "amer/vec.hpp"
#include "doctest.h"

using namespace amer;

namespace {

CostMatrix random_cost(int n, RngStream& rng) {
    CostMatrix c(n);
    for (auto& v : c.cost) v = 2.0 * rng.uniform() - 1.0;
    return c;
}

Vec random_unit(int d, RngStream& rng) {
    Vec v(static_cast<size_t>(d));
    for (auto& x : v) x = f32(rng.gaussian());
    return normalize(v);
}

}  // namespace

TEST_CASE("hungarian picks the cheap diagonal") {
    CostMatrix c(2);
    c.at(0, 0) = 0.0; c.at(0, 1) = 1.0;
    c.at(1, 0) = 1.0; c.at(1, 1) = 0.0;
    Matching m = hungarian(c);
    CHECK(m.target_of == std::vector<int>{0, 1});
    CHECK(m.total == 0.0);
}

TEST_CASE("hungarian picks the cheap anti-diagonal") {
    CostMatrix c(2);
    c.at(0, 0) = 1.0; c.at(0, 1) = 0.0;
    c.at(1, 0) = 0.0; c.at(1, 1) = 1.0;
    Matching m = hungarian(c);
    CHECK(m.target_of == std::vector<int>{1, 0});
    CHECK(m.total == 0.0);
}

TEST_CASE("hungarian rejects non-finite costs") {
    CostMatrix c(2);
    c.at(0, 0) = std::numeric_limits<f64>::quiet_NaN();
    CHECK_THROWS_AS((void)hungarian(c), Error);
}

TEST_CASE("hungarian equals the brute-force oracle on random instances") {
    RngStream rng(1234, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        CostMatrix c = random_cost(6, rng);
        Matching fast = hungarian(c);
        Matching slow = brute_force_match(c);
        CHECK(fast.total == slow.total);

        // The returned permutation is a bijection achieving the total.
        std::vector<int> seen(6, 0);
        f64 sum = 0.0;
        for (int i = 0; i < 6; ++i) {
            seen[size_t(fast.target_of[size_t(i)])]++;
            sum += c.at(i, fast.target_of[size_t(i)]);
        }
        for (int s : seen) CHECK(s == 1);
        CHECK(sum == doctest::Approx(fast.total).epsilon(1e-12));
    }
}

TEST_CASE("row and column shifts move the total by the shift") {
    RngStream rng(77, 0);
    for (int trial = 0; trial < 50; ++trial) {
        CostMatrix c = random_cost(5, rng);
        const f64 base = hungarian(c).total;
        const f64 shift = 2.0 * rng.uniform() - 1.0;

        CostMatrix row_shifted = c;
        for (int j = 0; j < 5; ++j) row_shifted.at(2, j) += shift;
        CHECK(hungarian(row_shifted).total == doctest::Approx(base + shift).epsilon(1e-12));

        CostMatrix col_shifted = c;
        for (int i = 0; i < 5; ++i) col_shifted.at(i, 3) += shift;
        CHECK(hungarian(col_shifted).total == doctest::Approx(base + shift).epsilon(1e-12));
    }
}

TEST_CASE("positive scaling preserves the optimal matching") {
    RngStream rng(78, 0);
    for (int trial = 0; trial < 50; ++trial) {
        CostMatrix c = random_cost(5, rng);
        const f64 scale = 0.1 + 5.0 * rng.uniform();
        CostMatrix scaled = c;
        for (auto& v : scaled.cost) v *= scale;
        Matching a = hungarian(c);
        Matching b = hungarian(scaled);
        CHECK(b.total == doctest::Approx(a.total * scale).epsilon(1e-10));
        // The scaled instance's optimum evaluates the unscaled costs optimally.
        f64 unscaled_total = 0.0;
        for (int i = 0; i < 5; ++i) unscaled_total += c.at(i, b.target_of[size_t(i)]);
        CHECK(unscaled_total == doctest::Approx(a.total).epsilon(1e-10));
    }
}

TEST_CASE("brute force handles degenerate and small cases") {
    CostMatrix zeros(3);
    Matching z = brute_force_match(zeros);
    CHECK(z.total == 0.0);

    RngStream rng(5, 5);
    CostMatrix c = random_cost(2, rng);
    CHECK(brute_force_match(c).total == hungarian(c).total);

    CostMatrix big(10);
    CHECK_THROWS_AS((void)brute_force_match(big), Error);
    try {
        (void)brute_force_match(big);
    } catch (const Error& err) {
        CHECK(err.code() == Errc::TooLarge);
    }
}

TEST_CASE("match_predictions recovers a shuffled basis") {
    const int d = 3;
    std::vector<Vec> targets(3, Vec(size_t(d), 0.0f));
    targets[0][0] = 1.0f;
    targets[1][1] = 1.0f;
    targets[2][2] = 1.0f;
    // preds are the targets in a shuffled order: pred i equals target shuffle[i].
    const std::vector<int> shuffle{2, 0, 1};
    std::vector<Vec> preds;
    for (int s : shuffle) preds.push_back(targets[size_t(s)]);

    Matching m = match_predictions(preds, targets);
    CHECK(m.target_of == shuffle);
    CHECK(m.total == doctest::Approx(-3.0).epsilon(1e-12));
}

TEST_CASE("match_predictions with one pair is the identity") {
    RngStream rng(9, 9);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Vec> preds{random_unit(8, rng)};
        std::vector<Vec> targets{random_unit(8, rng)};
        Matching m = match_predictions(preds, targets);
        CHECK(m.target_of == std::vector<int>{0});
    }
}

TEST_CASE("match_predictions validates shapes") {
    RngStream rng(10, 0);
    std::vector<Vec> two{random_unit(4, rng), random_unit(4, rng)};
    std::vector<Vec> one{random_unit(4, rng)};
    CHECK_THROWS_AS((void)match_predictions(two, one), Error);
    std::vector<Vec> wrong_d{random_unit(5, rng), random_unit(5, rng)};
    CHECK_THROWS_AS((void)match_predictions(two, wrong_d), Error);
}

TEST_CASE("negated-similarity matching minimizes the full contrastive objective") {
    // With per-prediction denominators fixed, the permutation minimizing the
    // summed contrastive loss must also minimize the summed -sim costs; check
    // match_predictions against exhaustive enumeration of the full objective.
    const int m = 5, d = 8;
    const f64 tau = 0.05;
    RngStream rng(2024, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Vec> preds, targets;
        for (int i = 0; i < m; ++i) {
            preds.push_back(random_unit(d, rng));
            targets.push_back(random_unit(d, rng));
        }

        // loss_part[i][j]: contrastive loss of prediction i when target j is
        // its positive; the denominator runs over all m targets.
        std::vector<std::vector<f64>> loss_part(m, std::vector<f64>(m));
        for (int i = 0; i < m; ++i) {
            std::vector<f64> scaled(m);
            f64 mx = -1e300;
            for (int j = 0; j < m; ++j) {
                scaled[size_t(j)] = cosine_sim(preds[size_t(i)], targets[size_t(j)]) / tau;
                mx = std::max(mx, scaled[size_t(j)]);
            }
            f64 z = 0.0;
            for (int j = 0; j < m; ++j) z += std::exp(scaled[size_t(j)] - mx);
            const f64 lse = mx + std::log(z);
            for (int j = 0; j < m; ++j) loss_part[size_t(i)][size_t(j)] = lse - scaled[size_t(j)];
        }

        std::vector<int> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        f64 best = 1e300;
        do {
            f64 total = 0.0;
            for (int i = 0; i < m; ++i) total += loss_part[size_t(i)][size_t(perm[size_t(i)])];
            best = std::min(best, total);
        } while (std::next_permutation(perm.begin(), perm.end()));

        Matching got = match_predictions(preds, targets);
        f64 got_loss = 0.0;
        for (int i = 0; i < m; ++i)
            got_loss += loss_part[size_t(i)][size_t(got.target_of[size_t(i)])];
        CHECK(got_loss == doctest::Approx(best).epsilon(1e-10));
    }
}

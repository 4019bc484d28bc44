#pragma once

#include <span>
#include <vector>

#include "amer/vec.hpp"

namespace amer {

// Square cost matrix; for prediction/target matching, cost[i][j] = -sim(q_i, d_j).
struct CostMatrix {
    int n = 0;
    std::vector<f64> cost;  // row-major n x n

    CostMatrix() = default;
    explicit CostMatrix(int n_) : n(n_), cost(size_t(n_) * size_t(n_), 0.0) {}

    f64& at(int i, int j) { return cost[size_t(i) * n + j]; }
    f64 at(int i, int j) const { return cost[size_t(i) * n + j]; }
};

struct Matching {
    std::vector<int> target_of;  // target_of[i] = j: prediction i paired with target j
    f64 total = 0.0;
};

// Kuhn-Munkres with row/column potentials, O(n^3). Among cost-equal optima
// any permutation may be returned; totals are always minimal.
Matching hungarian(const CostMatrix& cost);

// Exhaustive minimum over all n! permutations; test oracle, n <= 9.
Matching brute_force_match(const CostMatrix& cost);

// cost[i][j] = -cosine_sim(pred_i, target_j); the 1/tau scale is dropped
// since a positive rescale cannot change the argmin matching.
Matching match_predictions(std::span<const Vec> preds, std::span<const Vec> targets);

}  // namespace amer

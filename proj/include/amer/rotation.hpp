#pragma once

#include "amer/rng.hpp"
#include "amer/vec.hpp"

namespace amer {

// Haar-distributed rotation: QR of a standard-Gaussian matrix with the R
// diagonal sign fixed, then one column negated if det would be -1.
// Result satisfies R^T R = I within 1e-5 per entry and det(R) = +1.
Mat sample_rotation(int d, RngStream rng);

// Lower-triangular L with L L^T = a; requires symmetric positive definite.
Mat64 cholesky(const Mat64& a);

// Sign of det(a) via LU with partial pivoting: -1, 0 or +1.
int det_sign(Mat64 a);

}  // namespace amer

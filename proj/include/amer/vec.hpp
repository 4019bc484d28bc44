#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amer/error.hpp"

namespace amer {

using f32 = float;
using f64 = double;

// Stored vectors are f32; dot products and loss sums accumulate in f64.
using Vec = std::vector<f32>;

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<f32> data;  // row-major

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0f) {}

    f32& at(int r, int c) { return data[size_t(r) * cols + c]; }
    f32 at(int r, int c) const { return data[size_t(r) * cols + c]; }
    std::span<const f32> row(int r) const { return {data.data() + size_t(r) * cols, size_t(cols)}; }
};

// f64 working matrix for decompositions (QR, Cholesky, LU sign).
struct Mat64 {
    int rows = 0;
    int cols = 0;
    std::vector<f64> data;

    Mat64() = default;
    Mat64(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0) {}

    f64& at(int r, int c) { return data[size_t(r) * cols + c]; }
    f64 at(int r, int c) const { return data[size_t(r) * cols + c]; }
    f64* row(int r) { return data.data() + size_t(r) * cols; }
    const f64* row(int r) const { return data.data() + size_t(r) * cols; }
};

f64 dot64(std::span<const f32> a, std::span<const f32> b);
f64 norm2(std::span<const f32> v);

// v / ||v||; ZeroVector if the norm is below 1e-12.
Vec normalize(std::span<const f32> v);
void normalize_inplace(std::span<f32> v);

// Dot of two unit vectors, f64 accumulation, clamped to [-1, 1].
f64 cosine_sim(std::span<const f32> a, std::span<const f32> b);

// Exact-erf GeLU: x * Phi(x).
f64 gelu(f64 x);
f64 gelu_grad(f64 x);
Vec gelu(std::span<const f32> x);

// y = M x with f64 accumulation.
Vec matvec(const Mat& m, std::span<const f32> x);

Mat negated(const Mat& m);
Mat identity(int d);

// Frobenius inner product <a, b> = sum a_ij b_ij, f64 accumulation.
f64 frobenius_inner(const Mat& a, const Mat& b);

bool all_finite(std::span<const f32> v);

}  // namespace amer

#include "amer/vec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace amer {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::ZeroVector: return "ZeroVector";
        case Errc::DimMismatch: return "DimMismatch";
        case Errc::CountMismatch: return "CountMismatch";
        case Errc::NonFinite: return "NonFinite";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
        case Errc::TooLarge: return "TooLarge";
        case Errc::TooLong: return "TooLong";
        case Errc::OrthogonalizationFailed: return "OrthogonalizationFailed";
        case Errc::CorpusTooSmall: return "CorpusTooSmall";
        case Errc::EmptyCorpus: return "EmptyCorpus";
        case Errc::NonUnitEntry: return "NonUnitEntry";
        case Errc::EmptyTargets: return "EmptyTargets";
        case Errc::SingleTarget: return "SingleTarget";
        case Errc::SinglePrediction: return "SinglePrediction";
        case Errc::PositiveNotInBatch: return "PositiveNotInBatch";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::MissingCorpusIds: return "MissingCorpusIds";
        case Errc::DivergedLoss: return "DivergedLoss";
        case Errc::NoRecordedForward: return "NoRecordedForward";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

f64 dot64(std::span<const f32> a, std::span<const f32> b) {
    require(a.size() == b.size(), Errc::DimMismatch, "dot64 operand lengths differ");
    f64 acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += f64(a[i]) * f64(b[i]);
    return acc;
}

f64 norm2(std::span<const f32> v) {
    f64 acc = 0.0;
    for (f32 x : v) acc += f64(x) * f64(x);
    return std::sqrt(acc);
}

Vec normalize(std::span<const f32> v) {
    Vec out(v.begin(), v.end());
    normalize_inplace(out);
    return out;
}

void normalize_inplace(std::span<f32> v) {
    f64 n = norm2(v);
    require(n >= 1e-12, Errc::ZeroVector, "cannot normalize a (near-)zero vector");
    f64 inv = 1.0 / n;
    for (f32& x : v) x = f32(f64(x) * inv);
}

f64 cosine_sim(std::span<const f32> a, std::span<const f32> b) {
    f64 s = dot64(a, b);
    return std::clamp(s, -1.0, 1.0);
}

f64 gelu(f64 x) { return x * 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

f64 gelu_grad(f64 x) {
    f64 phi = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    f64 pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return phi + x * pdf;
}

Vec gelu(std::span<const f32> x) {
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = f32(gelu(f64(x[i])));
    return out;
}

Vec matvec(const Mat& m, std::span<const f32> x) {
    require(size_t(m.cols) == x.size(), Errc::DimMismatch, "matvec shape mismatch");
    Vec out(size_t(m.rows));
    for (int r = 0; r < m.rows; ++r) {
        f64 acc = 0.0;
        const f32* row = m.data.data() + size_t(r) * m.cols;
        for (int c = 0; c < m.cols; ++c) acc += f64(row[c]) * f64(x[c]);
        out[size_t(r)] = f32(acc);
    }
    return out;
}

Mat negated(const Mat& m) {
    Mat out = m;
    for (f32& x : out.data) x = -x;
    return out;
}

Mat identity(int d) {
    Mat out(d, d);
    for (int i = 0; i < d; ++i) out.at(i, i) = 1.0f;
    return out;
}

f64 frobenius_inner(const Mat& a, const Mat& b) {
    require(a.rows == b.rows && a.cols == b.cols, Errc::DimMismatch, "frobenius shape mismatch");
    f64 acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += f64(a.data[i]) * f64(b.data[i]);
    return acc;
}

bool all_finite(std::span<const f32> v) {
    for (f32 x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace amer

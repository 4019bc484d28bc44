#include "amer/rotation.hpp"

#include <cmath>

namespace amer {

Mat sample_rotation(int d, RngStream rng) {
    require(d >= 2, Errc::InvalidConfig, "rotation needs d >= 2");
    Mat64 a(d, d);
    for (auto& x : a.data) x = rng.gaussian();

    // Householder QR; reflectors kept to form Q afterwards.
    std::vector<std::vector<f64>> reflectors(d);
    for (int k = 0; k < d; ++k) {
        f64 nrm = 0.0;
        for (int i = k; i < d; ++i) nrm += a.at(i, k) * a.at(i, k);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-300) continue;
        f64 alpha = a.at(k, k) >= 0.0 ? -nrm : nrm;
        std::vector<f64> v(d - k);
        for (int i = k; i < d; ++i) v[i - k] = a.at(i, k);
        v[0] -= alpha;
        f64 vn = 0.0;
        for (f64 x : v) vn += x * x;
        vn = std::sqrt(vn);
        if (vn < 1e-300) continue;
        for (f64& x : v) x /= vn;
        for (int c = k; c < d; ++c) {
            f64 dotv = 0.0;
            for (int i = k; i < d; ++i) dotv += v[i - k] * a.at(i, c);
            for (int i = k; i < d; ++i) a.at(i, c) -= 2.0 * v[i - k] * dotv;
        }
        reflectors[k] = std::move(v);
    }

    Mat64 q(d, d);
    for (int i = 0; i < d; ++i) q.at(i, i) = 1.0;
    for (int k = d - 1; k >= 0; --k) {
        if (reflectors[k].empty()) continue;
        const auto& v = reflectors[k];
        for (int c = 0; c < d; ++c) {
            f64 dotv = 0.0;
            for (int i = k; i < d; ++i) dotv += v[i - k] * q.at(i, c);
            for (int i = k; i < d; ++i) q.at(i, c) -= 2.0 * v[i - k] * dotv;
        }
    }

    // diag(sign(R_jj)) fix gives the Haar distribution
    for (int j = 0; j < d; ++j) {
        if (a.at(j, j) < 0.0)
            for (int i = 0; i < d; ++i) q.at(i, j) = -q.at(i, j);
    }
    if (det_sign(q) < 0) {
        for (int i = 0; i < d; ++i) q.at(i, d - 1) = -q.at(i, d - 1);
    }

    Mat out(d, d);
    for (size_t i = 0; i < q.data.size(); ++i) out.data[i] = f32(q.data[i]);
    return out;
}

Mat64 cholesky(const Mat64& a) {
    require(a.rows == a.cols, Errc::DimMismatch, "cholesky needs a square matrix");
    int n = a.rows;
    Mat64 l(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            f64 s = a.at(i, j);
            for (int k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                require(s > 0.0, Errc::NonFinite, "matrix is not positive definite");
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return l;
}

int det_sign(Mat64 a) {
    require(a.rows == a.cols, Errc::DimMismatch, "det_sign needs a square matrix");
    int n = a.rows;
    int sign = 1;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        f64 best = std::abs(a.at(k, k));
        for (int i = k + 1; i < n; ++i) {
            f64 v = std::abs(a.at(i, k));
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (best == 0.0) return 0;
        if (piv != k) {
            for (int c = 0; c < n; ++c) std::swap(a.at(k, c), a.at(piv, c));
            sign = -sign;
        }
        if (a.at(k, k) < 0.0) sign = -sign;
        for (int i = k + 1; i < n; ++i) {
            f64 f = a.at(i, k) / a.at(k, k);
            for (int c = k; c < n; ++c) a.at(i, c) -= f * a.at(k, c);
        }
    }
    return sign;
}

}  // namespace amer

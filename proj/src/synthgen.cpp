#include "amer/synthgen.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "amer/error.hpp"
#include "amer/rotation.hpp"

namespace amer {
namespace {

Mat64 correlated_covariance(int d, RngStream rng) {
    Mat64 a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a.at(i, j) = rng.gaussian();
    Mat64 cov(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            f64 s = 0.0;
            for (int k = 0; k < d; ++k) s += a.at(i, k) * a.at(j, k);
            f64 v = 0.5 * s + (i == j ? 0.1 : 0.0);
            cov.at(i, j) = v;
            cov.at(j, i) = v;
        }
    }
    return cov;
}

Vec sample_one(const DistSpec& dist, int d, RngStream& rng) {
    Vec x(static_cast<size_t>(d));
    switch (dist.kind) {
        case DistKind::StandardGaussian:
            for (auto& v : x) v = f32(rng.gaussian());
            break;
        case DistKind::HighVarGaussian:
            for (auto& v : x) v = f32(2.0 * rng.gaussian());
            break;
        case DistKind::CorrelatedGaussian: {
            std::vector<f64> z(static_cast<size_t>(d));
            for (auto& v : z) v = rng.gaussian();
            // x = L z with L lower triangular
            for (int i = 0; i < d; ++i) {
                f64 s = 0.0;
                for (int j = 0; j <= i; ++j) s += dist.chol.at(i, j) * z[size_t(j)];
                x[size_t(i)] = f32(s);
            }
            break;
        }
        case DistKind::UniformCube:
            for (auto& v : x) v = f32(4.0 * rng.uniform() - 2.0);
            break;
        case DistKind::LaplacePlusGaussian: {
            const f64 noise_std = std::sqrt(0.1);
            for (auto& v : x) v = f32(rng.laplace(1.0) + noise_std * rng.gaussian());
            break;
        }
    }
    return x;
}

bool frobenius_separated(const Mat& cand, const std::vector<Mat>& accepted, int d) {
    for (const auto& m : accepted)
        if (std::abs(frobenius_inner(cand, m)) / f64(d) >= 0.05) return false;
    return true;
}

// Distribution index per record, by setting and split.
int dist_index(Setting setting, Split split, size_t record) {
    switch (setting) {
        case Setting::SingleInDist:
            return 0;
        case Setting::MultiInDist:
            return int(record % 5);
        case Setting::OOD:
            return split == Split::Test ? 4 : int(record % 4);
    }
    return 0;
}

}  // namespace

std::vector<DistSpec> make_distributions(int d, RngStream rng) {
    require(d >= 1, Errc::InvalidConfig, "make_distributions: d must be positive");
    std::vector<DistSpec> out(5);
    for (int i = 0; i < 5; ++i) out[size_t(i)].kind = DistKind(i);
    out[size_t(DistKind::CorrelatedGaussian)].chol =
        cholesky(correlated_covariance(d, rng.derive("corr_a")));
    return out;
}

std::vector<Vec> sample_inputs(const DistSpec& dist, int n, int d, RngStream rng) {
    if (dist.kind == DistKind::CorrelatedGaussian)
        require(dist.chol.rows == d && dist.chol.cols == d, Errc::DimMismatch,
                "sample_inputs: Cholesky factor does not match d");
    std::vector<Vec> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        RngStream one = rng.derive(uint64_t(i));
        out.push_back(sample_one(dist, d, one));
    }
    return out;
}

std::vector<TransformSpec> make_transforms(TransformKind kind, int d, RngStream rng) {
    require(d >= 2, Errc::InvalidConfig, "make_transforms: d must be at least 2");
    RngStream rot = rng.derive("rotations");
    uint64_t draw = 0;
    std::vector<TransformSpec> out;
    if (kind == TransformKind::Linear) {
        Mat ma = sample_rotation(d, rot.derive(draw++));
        Mat mb = sample_rotation(d, rot.derive(draw++));
        std::vector<Mat> mats = {identity(d), ma, mb, negated(ma), negated(mb)};
        for (int i = 0; i < 5; ++i)
            out.push_back({TransformKind::Linear, i + 1, std::move(mats[size_t(i)]), Mat{}});
        return out;
    }
    // Mlp: rejection-sample Ma, Mb, Mc nearly Frobenius-orthogonal to each other.
    std::vector<Mat> accepted;
    for (int need = 0; need < 3; ++need) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            Mat cand = sample_rotation(d, rot.derive(draw++));
            if (frobenius_separated(cand, accepted, d)) {
                accepted.push_back(std::move(cand));
                ok = true;
                break;
            }
        }
        require(ok, Errc::OrthogonalizationFailed,
                "make_transforms: no nearly orthogonal rotation found in 1000 attempts");
    }
    std::vector<Mat> mats = {accepted[0], accepted[1], accepted[2], negated(accepted[1]),
                             negated(accepted[2])};
    for (int i = 0; i < 5; ++i) {
        Mat w = std::move(mats[size_t(i)]);
        out.push_back({TransformKind::Mlp, i + 1, w, w});
    }
    return out;
}

Vec apply_transform(const TransformSpec& spec, std::span<const f32> x) {
    require(spec.w1.cols == int(x.size()), Errc::DimMismatch,
            "apply_transform: input dimension mismatch");
    Vec h = matvec(spec.w1, x);
    if (spec.kind == TransformKind::Linear) return h;
    for (auto& v : h) v = f32(gelu(f64(v)));
    return matvec(spec.w2, h);
}

GenOutput build_dataset(Setting setting, TransformKind kind, int n_train, int n_test, int d,
                        int m, uint64_t seed, bool normalize_inputs) {
    require(n_train >= 1 && n_test >= 0, Errc::InvalidConfig,
            "build_dataset: need at least one training record");
    require(m >= 2 && m <= 5, Errc::InvalidConfig,
            "build_dataset: m must lie in [2, 5] (five-transform families)");
    RngStream root(seed, 0);
    auto dists = make_distributions(d, root.derive("distributions"));
    auto transforms = make_transforms(kind, d, root.derive("transforms"));

    GenOutput out;
    out.transforms = transforms;
    auto& ds = out.dataset;
    ds.setting = setting;
    ds.tkind = kind;
    ds.d = d;
    ds.m = m;
    ds.seed = seed;
    ds.normalized_inputs = normalize_inputs;

    uint64_t global = 0;
    auto emit = [&](std::vector<Record>& dest, Split split, int n, RngStream inputs) {
        for (int i = 0; i < n; ++i, ++global) {
            const DistSpec& dist = dists[size_t(dist_index(setting, split, size_t(i)))];
            RngStream one = inputs.derive(uint64_t(i));
            Record rec;
            rec.dist_kind = uint8_t(dist.kind);
            rec.input = sample_one(dist, d, one);
            if (normalize_inputs) normalize_inplace(rec.input);
            for (int j = 0; j < m; ++j) {
                Vec t = apply_transform(transforms[size_t(j)], rec.input);
                uint64_t id = global * uint64_t(m) + uint64_t(j);
                out.target_pool.push_back({normalize(t), global, uint8_t(j)});
                rec.targets_raw.push_back(std::move(t));
                rec.target_ids.push_back(id);
            }
            dest.push_back(std::move(rec));
        }
    };

    std::vector<Record> all_train;
    emit(all_train, Split::Train, n_train, root.derive("train_inputs"));
    emit(ds.test, Split::Test, n_test, root.derive("test_inputs"));

    size_t n_val = size_t(n_train) / 10;
    size_t n_fit = size_t(n_train) - n_val;
    ds.train.assign(std::make_move_iterator(all_train.begin()),
                    std::make_move_iterator(all_train.begin() + ptrdiff_t(n_fit)));
    ds.val.assign(std::make_move_iterator(all_train.begin() + ptrdiff_t(n_fit)),
                  std::make_move_iterator(all_train.end()));
    return out;
}

Corpus build_corpus(std::span<const PoolEntry> pool, size_t n_total, int d, RngStream rng) {
    require(!pool.empty(), Errc::EmptyCorpus, "build_corpus: empty target pool");
    require(n_total >= pool.size(), Errc::CorpusTooSmall,
            "build_corpus: requested size smaller than the target pool");
    Corpus c;
    c.d = d;
    c.data.reserve(n_total * size_t(d));
    c.prov.reserve(n_total);
    for (const auto& e : pool) {
        require(int(e.v.size()) == d, Errc::DimMismatch, "build_corpus: pool entry dimension");
        c.data.insert(c.data.end(), e.v.begin(), e.v.end());
        c.prov.push_back({0, e.query, e.slot});
    }
    size_t n_distract = n_total - pool.size();
    for (size_t i = 0; i < n_distract; ++i) {
        RngStream one = rng.derive(uint64_t(i));
        Vec v(static_cast<size_t>(d));
        for (auto& x : v) x = f32(one.gaussian());
        normalize_inplace(v);
        c.data.insert(c.data.end(), v.begin(), v.end());
        c.prov.push_back({1, 0, 0});
    }
    return c;
}

}  // namespace amer

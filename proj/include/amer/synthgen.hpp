#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amer/rng.hpp"
#include "amer/vec.hpp"

namespace amer {

enum class Setting : uint8_t { SingleInDist = 0, MultiInDist = 1, OOD = 2 };
enum class TransformKind : uint8_t { Linear = 0, Mlp = 1 };
enum class Split : uint8_t { Train = 0, Val = 1, Test = 2 };

enum class DistKind : uint8_t {
    StandardGaussian = 0,
    HighVarGaussian = 1,     // N(0, 4I)
    CorrelatedGaussian = 2,  // N(0, 0.5 A A^T + 0.1 I), A seeded Gaussian
    UniformCube = 3,         // [-2, 2]^d
    LaplacePlusGaussian = 4  // Laplace(0, 1) + N(0, 0.1)
};

struct DistSpec {
    DistKind kind = DistKind::StandardGaussian;
    Mat64 chol;  // Cholesky factor of the covariance; CorrelatedGaussian only
};

// The five input distributions; the correlated covariance is fixed per call
// so train and test share it.
std::vector<DistSpec> make_distributions(int d, RngStream rng);

// n i.i.d. raw (unnormalized) vectors; vector i draws from rng.derive(i).
std::vector<Vec> sample_inputs(const DistSpec& dist, int n, int d, RngStream rng);

struct TransformSpec {
    TransformKind kind = TransformKind::Linear;
    int index = 0;  // 1-based position within the family
    Mat w1;         // Linear: the matrix; Mlp: first layer
    Mat w2;         // Mlp only: second layer
};

// Linear family: [I, Ma, Mb, -Ma, -Mb] with Ma, Mb random rotations.
// Mlp family: five 2-layer GeLU MLPs, both layers initialized from
// [Ma, Mb, Mc, -Mb, -Mc] where Ma, Mb, Mc are rotations accepted under
// pairwise |<.,.>_F| / d < 0.05 (rejection sampling, 1000 attempts max).
std::vector<TransformSpec> make_transforms(TransformKind kind, int d, RngStream rng);

// Linear: w1 x.  Mlp: w2 gelu(w1 x).
Vec apply_transform(const TransformSpec& spec, std::span<const f32> x);

struct Record {
    Vec input;                       // as consumed by the model
    std::vector<Vec> targets_raw;    // m raw transform outputs
    std::vector<uint64_t> target_ids;  // corpus ids, pairwise distinct
    uint8_t dist_kind = 0;
};

struct SyntheticDataset {
    Setting setting = Setting::SingleInDist;
    TransformKind tkind = TransformKind::Linear;
    int d = 0;
    int m = 0;
    uint64_t seed = 0;
    bool normalized_inputs = false;
    std::vector<Record> train, val, test;

    const std::vector<Record>& split(Split s) const {
        return s == Split::Train ? train : (s == Split::Val ? val : test);
    }
};

struct PoolEntry {
    Vec v;  // normalized target
    uint64_t query = 0;
    uint8_t slot = 0;
};

struct GenOutput {
    SyntheticDataset dataset;
    std::vector<TransformSpec> transforms;
    std::vector<PoolEntry> target_pool;  // pool index == corpus id
};

// Inputs per setting: SingleInDist draws everything from distribution 1;
// MultiInDist spreads train and test evenly over all five; OOD trains on
// 1-4 and tests only on 5. Each input runs through the first m transforms.
// The last 10% of train records become the validation split.
GenOutput build_dataset(Setting setting, TransformKind kind, int n_train, int n_test, int d,
                        int m, uint64_t seed, bool normalize_inputs = false);

struct Corpus {
    struct Prov {
        uint8_t tag = 0;  // 0 = target, 1 = random distractor
        uint64_t query = 0;
        uint8_t slot = 0;
    };

    int d = 0;
    std::vector<f32> data;  // n x d, unit rows
    std::vector<Prov> prov;

    size_t size() const { return prov.size(); }
    std::span<const f32> entry(size_t i) const { return {data.data() + i * size_t(d), size_t(d)}; }
};

// All pool targets (ids 0..|pool|-1) followed by unit-normalized Gaussian
// distractors up to n_total entries.
Corpus build_corpus(std::span<const PoolEntry> pool, size_t n_total, int d, RngStream rng);

}  // namespace amer

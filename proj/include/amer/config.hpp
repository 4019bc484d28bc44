#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "amer/synthgen.hpp"
#include "amer/vec.hpp"

namespace amer {

enum class TrainMode : uint8_t { Amer = 0, SingleQuery = 1 };
enum class SamplingPolicy : uint8_t { TeacherForced = 0, Scheduled = 1, AlwaysPredicted = 2 };

struct DataCfg {
    Setting setting = Setting::MultiInDist;
    TransformKind transform = TransformKind::Mlp;
    int d = 64;
    int m = 5;
    int n_train = 2000;
    int n_test = 200;
    uint64_t corpus_size = 20000;
    uint64_t seed = 1;
    bool normalize_inputs = false;
};

struct ModelCfg {
    int hidden = 128;
    int layers = 2;
    int heads = 4;
    int mlp_hidden = 512;
    bool use_bias = true;
    bool detach_feedback = false;
};

struct TrainCfg {
    TrainMode mode = TrainMode::Amer;
    int steps = 8000;
    int batch_size = 128;
    f64 lr = 1e-3;
    f64 tau = 0.05;
    f64 warmup_frac = 0.05;
    f64 weight_decay = 0.01;
    f64 beta1 = 0.9;
    f64 beta2 = 0.98;
    f64 eps = 1e-8;
    uint64_t seed = 0;
    int checkpoint_interval = 500;
    int negatives_per_positive = 1;
    SamplingPolicy sampling = SamplingPolicy::Scheduled;
};

enum class DivMetric : uint8_t { Euclidean = 0, Cosine = 1 };

struct EvalCfg {
    std::vector<int> ks = {10, 100};
    std::vector<f64> mmr_lambdas = {0.5, 0.75, 0.9};
    int mmr_pool = 500;
    int n_bins = 4;
    DivMetric div_metric = DivMetric::Euclidean;
    int threads = 1;  // search worker count; set by the CLI, not the file
};

struct FullConfig {
    DataCfg data;
    ModelCfg model;
    TrainCfg train;
    EvalCfg eval;
};

// INI-style text: [section] headers, key = value lines, # or ; comments.
// Unknown sections or keys are errors; omitted keys keep their defaults.
FullConfig parse_config(std::string_view text);
FullConfig load_config(const std::string& path);

// Fixed section and key order, shortest round-trip numbers; equal configs
// serialize to identical bytes.
std::string serialize_config(const FullConfig& cfg);

// dotted = "section.key", value in the same syntax as a config file.
void apply_override(FullConfig& cfg, std::string_view dotted, std::string_view value);

// Cross-field checks (divisibility, ranges); throws InvalidConfig.
void validate_config(const FullConfig& cfg);

}  // namespace amer

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amer/index.hpp"
#include "amer/seqmodel.hpp"
#include "amer/synthgen.hpp"
#include "amer/trainer.hpp"
#include "amer/vec.hpp"

namespace amer {

// All writers below go through a temp file in the same directory followed by
// an atomic rename, so readers never observe partial artifacts.
void atomic_write(const std::string& path, std::string_view bytes);

uint64_t fnv1a64(std::string_view bytes);
std::string hex64(uint64_t v);
uint64_t digest_file(const std::string& path);

// --- datasets ("AMER") -----------------------------------------------------

void write_dataset_split(const std::string& path, const SyntheticDataset& ds, Split split);
// Fills one split; metadata must agree with whatever is already loaded.
void read_dataset_split(const std::string& path, SyntheticDataset& ds, Split split);
// Expects train.bin, val.bin, test.bin under dir.
SyntheticDataset read_dataset_dir(const std::string& dir);
std::string dataset_filename(Split split);

// --- corpus ("AMERCORP") ---------------------------------------------------

void write_corpus(const std::string& path, const Corpus& corpus);
Corpus read_corpus(const std::string& path);

// --- transforms ("AMERXFRM") -----------------------------------------------

void write_transforms(const std::string& path, std::span<const TransformSpec> transforms);
std::vector<TransformSpec> read_transforms(const std::string& path);

// --- checkpoints ("AMERCKPT") ----------------------------------------------

// Flat named-tensor table: parameters under their own names, Adam moments
// under adam_m/ and adam_v/, best-validation parameters under best/.
struct Checkpoint {
    ModelConfig cfg;
    int64_t step = 0;
    int64_t best_step = -1;
    f64 best_val = 0.0;
    std::string config_text;  // canonical config archived at save time
    std::vector<std::pair<std::string, Mat>> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint checkpoint_of(const TrainResult& result, const ModelConfig& mcfg,
                         const std::string& config_text, int64_t step);
// best = true loads the best/ parameter set (falls back to final when absent).
Model<f32> model_from_checkpoint(const Checkpoint& ckpt, bool best);

// --- text artifacts --------------------------------------------------------

void write_train_log(const std::string& path, std::span<const LogRow> log);

// One line per hit: query_id corpus_id rank score, rank 1-based, score %.6f.
void write_run(const std::string& path, std::span<const uint64_t> query_ids,
               const std::vector<std::vector<SearchHit>>& hits);

// Inverse of write_run: per-query ranked lists in first-appearance order.
// Ranks must be 1-based and consecutive within a query.
struct RunFile {
    std::vector<uint64_t> query_ids;
    std::vector<std::vector<SearchHit>> hits;
};
RunFile read_run(const std::string& path);

// Lines of `query_id m target_id...`; target count must match m.
struct TargetsFile {
    std::vector<uint64_t> query_ids;
    std::vector<std::vector<uint64_t>> targets;
};
TargetsFile read_targets(const std::string& path);

// name = fnv1a64(content) for each file, plus byte sizes.
void write_manifest(const std::string& path,
                    std::span<const std::pair<std::string, std::string>> files);

std::string read_text_file(const std::string& path);

}  // namespace amer

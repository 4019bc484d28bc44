#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amer/config.hpp"
#include "amer/index.hpp"
#include "amer/seqmodel.hpp"
#include "amer/synthgen.hpp"

namespace amer {

// Multi-target recall: a query scores 1 when its top-k holds at least
// min(m, k) of its m relevant ids, with m = relevant.size().
bool mrecall_hit(std::span<const uint64_t> retrieved, std::span<const uint64_t> relevant, int k);

// Interleaves the ranked lists in order, skipping ids already emitted, until
// k results (or exhaustion). Emitted scores are 1 / (1 + position).
std::vector<SearchHit> round_robin_merge(const std::vector<std::vector<SearchHit>>& lists, int k);

// Greedy maximal marginal relevance over a candidate pool: repeatedly pick
// argmax lambda * sim(q, c) - (1 - lambda) * max_{s selected} sim(c, s),
// ties resolved by original pool order. Scores are the selection objective.
std::vector<SearchHit> mmr_rerank(std::span<const f32> query, const FlatIndex& index,
                                  std::span<const SearchHit> pool, f64 lambda, int k);

// Mean pairwise Euclidean distance between rows. Zero for fewer than 2 rows.
f64 mean_pairwise_distance(const std::vector<Vec>& rows);
// Mean pairwise cosine similarity between rows.
f64 mean_pairwise_cosine(const std::vector<Vec>& rows);

// Binning statistic for one query: mean pairwise distance between the
// normalized targets, Euclidean or cosine (1 - similarity).
f64 target_diversity(const Record& rec, DivMetric metric);

// Mean pairwise cosine similarity of one query's predicted embeddings.
f64 output_diversity(const std::vector<Vec>& preds);

// Quantile partition: queries sort by (stat, index) and split into n_bins
// contiguous groups; when n % n_bins != 0 the earlier bins take the extra
// queries. Returns the bin index per query.
std::vector<int> diversity_bins(std::span<const f64> stat, int n_bins);

enum class EvalMode { Amer, SingleQuery, SingleQueryMmr };

struct EvalCell {
    int k = 0;
    int bin = -1;  // -1 aggregates all queries
    size_t n_queries = 0;
    f64 mrecall = 0.0;
};

struct EvalReport {
    std::string mode;
    size_t n_queries = 0;
    int n_bins = 0;
    std::vector<std::pair<std::string, std::string>> info;  // metric, lambdas, diversity means
    std::vector<EvalCell> cells;
};

// Nested key-value text with the flat table appended.
std::string serialize_report(const EvalReport& report);
// Just the flat table: k,bin,metric,n_queries,mrecall rows.
std::string serialize_report_csv(const EvalReport& report);

struct QueryRecord {
    uint64_t query_id = 0;
    int bin = 0;
    f64 stat = 0.0;
    std::vector<uint8_t> hits;  // parallel to the ks used in the report
};

struct EvalOutput {
    EvalReport report;
    std::vector<uint64_t> query_ids;
    std::vector<std::vector<SearchHit>> ranking;  // final fused/reranked lists
    std::vector<QueryRecord> per_query;
};

// Decodes the test split, retrieves, fuses or reranks per mode, and scores
// MRecall at each k overall and per diversity bin. SingleQueryMmr tunes
// lambda per k on the validation split (first grid entry when val is empty).
EvalOutput evaluate_model(Model<f32>& model, const SyntheticDataset& ds, const FlatIndex& index,
                          EvalMode mode, const EvalCfg& cfg);

}  // namespace amer

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amer/vec.hpp"

namespace amer {

struct SearchHit {
    uint64_t id = 0;
    f32 score = 0.0f;  // cosine similarity, rounded from the f64 accumulator
};

// Exact cosine top-k over unit vectors, f32 storage, f64 dot accumulation.
// The corpus is scanned in fixed shards of 8192 rows with a bounded heap per
// shard; shard results merge by (score desc, id asc). Results are identical
// for any thread count because parallelism only splits whole queries.
class FlatIndex {
  public:
    static constexpr size_t kShardRows = 8192;

    FlatIndex() = default;
    // Takes n x d unit rows; row index becomes the hit id.
    FlatIndex(std::vector<f32> data, int d);

    int dim() const { return d_; }
    size_t size() const { return n_; }
    std::span<const f32> entry(size_t i) const { return {data_.data() + i * size_t(d_), size_t(d_)}; }

    std::vector<SearchHit> search(std::span<const f32> query, int k) const;
    // queries laid out n_q x d; n_threads <= 1 runs serially.
    std::vector<std::vector<SearchHit>> batch_search(std::span<const f32> queries, int k,
                                                     int n_threads = 1) const;

  private:
    std::vector<f32> data_;
    int d_ = 0;
    size_t n_ = 0;
};

}  // namespace amer

#include "amer/index.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include "amer/error.hpp"

namespace amer {
namespace {

struct Cand {
    f64 score = 0.0;
    uint64_t id = 0;
};

// Strict ordering used everywhere: higher score first, then lower id.
bool better(const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

}  // namespace

FlatIndex::FlatIndex(std::vector<f32> data, int d) {
    require(d >= 1, Errc::InvalidConfig, "FlatIndex: d must be positive");
    require(data.size() % size_t(d) == 0, Errc::ShapeMismatch,
            "FlatIndex: data size is not a multiple of d");
    require(!data.empty(), Errc::EmptyCorpus, "FlatIndex: empty corpus");
    require(all_finite(data), Errc::NonFinite, "FlatIndex: corpus has non-finite entries");
    for (size_t row = 0; row * size_t(d) < data.size(); ++row) {
        f64 s = 0.0;
        for (int j = 0; j < d; ++j) {
            const f64 x = f64(data[row * size_t(d) + size_t(j)]);
            s += x * x;
        }
        require(std::abs(std::sqrt(s) - 1.0) <= 1e-3, Errc::NonUnitEntry,
                "FlatIndex: entry " + std::to_string(row) + " is not unit norm");
    }
    data_ = std::move(data);
    d_ = d;
    n_ = data_.size() / size_t(d);
}

std::vector<SearchHit> FlatIndex::search(std::span<const f32> query, int k) const {
    require(n_ > 0, Errc::EmptyCorpus, "search: index not built");
    require(int(query.size()) == d_, Errc::DimMismatch, "search: query dimension mismatch");
    require(k >= 1, Errc::InvalidConfig, "search: k must be positive");

    const size_t keep = std::min(size_t(k), n_);
    std::vector<Cand> merged;
    std::vector<Cand> heap;
    heap.reserve(keep);
    // Heap top is the worst kept candidate (max element under better-as-less).
    for (size_t shard = 0; shard < n_; shard += kShardRows) {
        const size_t end = std::min(shard + kShardRows, n_);
        heap.clear();
        for (size_t row = shard; row < end; ++row) {
            const f32* v = data_.data() + row * size_t(d_);
            f64 s = 0.0;
            for (int j = 0; j < d_; ++j) s += f64(query[size_t(j)]) * f64(v[j]);
            Cand c{s, row};
            if (heap.size() < keep) {
                heap.push_back(c);
                std::push_heap(heap.begin(), heap.end(), better);
            } else if (better(c, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), better);
                heap.back() = c;
                std::push_heap(heap.begin(), heap.end(), better);
            }
        }
        merged.insert(merged.end(), heap.begin(), heap.end());
    }
    std::sort(merged.begin(), merged.end(), better);
    merged.resize(std::min(keep, merged.size()));

    std::vector<SearchHit> out;
    out.reserve(merged.size());
    for (const auto& c : merged) out.push_back({c.id, f32(c.score)});
    return out;
}

std::vector<std::vector<SearchHit>> FlatIndex::batch_search(std::span<const f32> queries, int k,
                                                            int n_threads) const {
    require(queries.size() % size_t(d_) == 0, Errc::ShapeMismatch,
            "batch_search: queries size is not a multiple of d");
    const size_t n_q = queries.size() / size_t(d_);
    std::vector<std::vector<SearchHit>> out(n_q);
    if (n_q == 0) return out;

    auto run = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i)
            out[i] = search(queries.subspan(i * size_t(d_), size_t(d_)), k);
    };

    const size_t workers = std::min<size_t>(std::max(n_threads, 1), n_q);
    if (workers <= 1) {
        run(0, n_q);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const size_t chunk = (n_q + workers - 1) / workers;
    for (size_t t = 0; t < workers; ++t) {
        const size_t begin = t * chunk;
        const size_t end = std::min(begin + chunk, n_q);
        pool.emplace_back([&, t, begin, end] {
            try {
                if (begin < end) run(begin, end);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace amer

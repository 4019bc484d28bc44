#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "amer/error.hpp"
#include "amer/evaluate.hpp"
#include "amer/index.hpp"
#include "amer/rng.hpp"
#include "amer/seqmodel.hpp"
#include "amer/synthgen.hpp"
#include "amer/vec.hpp"
#include "doctest.h"

using namespace amer;

namespace {

std::vector<f32> random_unit_rows(size_t n, int d, RngStream rng) {
    std::vector<f32> rows(n * size_t(d));
    for (size_t i = 0; i < n; ++i) {
        RngStream r = rng.derive(i);
        Vec v(static_cast<size_t>(d));
        for (auto& x : v) x = f32(r.gaussian());
        Vec u = normalize(v);
        std::memcpy(rows.data() + i * size_t(d), u.data(), size_t(d) * sizeof(f32));
    }
    return rows;
}

std::vector<SearchHit> hits_of(std::initializer_list<uint64_t> ids) {
    std::vector<SearchHit> out;
    f32 s = 1.0f;
    for (uint64_t id : ids) {
        out.push_back({id, s});
        s *= 0.9f;
    }
    return out;
}

std::vector<uint64_t> ids_of(const std::vector<SearchHit>& hits) {
    std::vector<uint64_t> out;
    for (const auto& h : hits) out.push_back(h.id);
    return out;
}

// Constant-output model: zero input weights plus a shared position row make
// every emission identical across positions and queries.
Model<f32> const_model(const ModelConfig& cfg, uint64_t seed) {
    Model<f32> model(cfg);
    model.init(RngStream(seed, 0));
    auto& in_w = model.tensor("in_proj.w");
    std::fill(in_w.data.begin(), in_w.data.end(), 0.0f);
    auto& pos = model.tensor("pos");
    for (int r = 1; r < pos.rows; ++r)
        std::copy(pos.row(0), pos.row(0) + pos.cols, pos.row(r));
    return model;
}

struct EvalFixture {
    GenOutput gen;
    Corpus corpus;
    FlatIndex index;
    EvalCfg cfg;

    EvalFixture(int n_train, int n_test, int d, int m, uint64_t seed, size_t corpus_n)
        : gen(build_dataset(Setting::MultiInDist, TransformKind::Linear, n_train, n_test, d, m,
                            seed)),
          corpus(build_corpus(gen.target_pool, corpus_n, d, RngStream(seed, 9))),
          index(corpus.data, d) {
        cfg.ks = {5, 50};
        cfg.n_bins = 4;
    }
};

ModelConfig eval_model_config(int d, int m) {
    ModelConfig mc;
    mc.d = d;
    mc.m = m;
    mc.hidden = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.mlp_hidden = 32;
    return mc;
}

}  // namespace

TEST_CASE("mrecall matches the definitional cases") {
    // m=5, k=10: all five targets inside the top 10.
    std::vector<uint64_t> retrieved{3, 11, 7, 20, 9, 4, 30, 41, 2, 17};
    std::vector<uint64_t> all_five{7, 9, 4, 2, 17};
    CHECK(mrecall_hit(retrieved, all_five, 10));

    // Only four of five present.
    std::vector<uint64_t> four_of_five{7, 9, 4, 2, 99};
    CHECK_FALSE(mrecall_hit(retrieved, four_of_five, 10));

    // k=3 < m=5: three targets filling the top 3 suffice.
    std::vector<uint64_t> top3{7, 9, 4};
    std::vector<uint64_t> five{7, 9, 4, 88, 99};
    CHECK(mrecall_hit(top3, five, 3));
    std::vector<uint64_t> two_in_top3{7, 9, 55};
    CHECK_FALSE(mrecall_hit(two_in_top3, five, 3));

    CHECK_THROWS_AS((void)mrecall_hit(retrieved, std::vector<uint64_t>{}, 10), Error);
}

TEST_CASE("mrecall is monotone in k") {
    RngStream rng(70, 0);
    for (int trial = 0; trial < 20; ++trial) {
        RngStream t = rng.derive(size_t(trial));
        std::vector<uint64_t> retrieved(100);
        std::iota(retrieved.begin(), retrieved.end(), 0);
        for (size_t i = retrieved.size(); i > 1; --i)
            std::swap(retrieved[i - 1], retrieved[size_t(t.below(uint64_t(i)))]);
        std::vector<uint64_t> relevant(retrieved.begin(), retrieved.begin() + 5);
        for (size_t i = relevant.size(); i > 1; --i)
            std::swap(relevant[i - 1], relevant[size_t(t.below(uint64_t(i)))]);

        bool prev = false;
        for (int k = 5; k <= 100; ++k) {
            const bool hit = mrecall_hit(retrieved, relevant, k);
            if (prev) CHECK(hit);
            prev = hit;
        }
        CHECK(prev);  // all ids present at k = corpus size
    }
}

TEST_CASE("round robin interleaves and dedups") {
    auto merged = round_robin_merge({hits_of({0, 1, 2}), hits_of({10, 11, 12})}, 4);
    CHECK(ids_of(merged) == std::vector<uint64_t>{0, 10, 1, 11});
    for (size_t i = 0; i < merged.size(); ++i)
        CHECK(merged[i].score == doctest::Approx(1.0 / f64(1 + i)).epsilon(1e-6));

    auto dedup = round_robin_merge({hits_of({0, 1}), hits_of({0, 2})}, 3);
    CHECK(ids_of(dedup) == std::vector<uint64_t>{0, 1, 2});

    auto single = round_robin_merge({hits_of({5, 6, 7, 8})}, 3);
    CHECK(ids_of(single) == std::vector<uint64_t>{5, 6, 7});

    // Exhaustion: only 3 distinct ids across lists.
    auto short_lists = round_robin_merge({hits_of({1, 2}), hits_of({2, 3})}, 10);
    CHECK(ids_of(short_lists) == std::vector<uint64_t>{1, 2, 3});
}

TEST_CASE("round robin output ids are pairwise distinct") {
    RngStream rng(71, 0);
    for (int trial = 0; trial < 50; ++trial) {
        RngStream t = rng.derive(size_t(trial));
        std::vector<std::vector<SearchHit>> lists(3);
        for (auto& l : lists) {
            for (int i = 0; i < 8; ++i) l.push_back({t.below(12), 1.0f / f32(i + 1)});
            // lists themselves must have distinct ids
            std::sort(l.begin(), l.end(), [](auto a, auto b) { return a.id < b.id; });
            l.erase(std::unique(l.begin(), l.end(), [](auto a, auto b) { return a.id == b.id; }),
                    l.end());
        }
        auto merged = round_robin_merge(lists, 9);
        auto ids = ids_of(merged);
        auto sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
        CHECK(ids.size() <= 9);
    }
}

TEST_CASE("mmr with lambda one preserves the retrieval order") {
    const int d = 10;
    auto rows = random_unit_rows(60, d, RngStream(72, 0));
    FlatIndex idx(rows, d);
    RngStream rng(73, 0);
    for (int trial = 0; trial < 100; ++trial) {
        auto q = random_unit_rows(1, d, rng.derive(size_t(trial)));
        auto pool = idx.search(q, 20);
        auto ranked = mmr_rerank(q, idx, pool, 1.0, 20);
        CHECK(ids_of(ranked) == ids_of(pool));
    }
}

TEST_CASE("mmr hand case trades relevance for novelty") {
    // Unit vectors in R^4 with sims q:{A .9, B .85, C .6}, A-B .9, A-C .3,
    // B-C .3. Greedy at lambda = .5: A (.45), then C (.3 - .15 = .15) beats
    // B (.425 - .45 = -.025), then B.
    const f64 r19 = std::sqrt(0.19);
    const f64 c2 = 0.03 / r19;
    const f64 c3 = std::sqrt(1.0 - 0.09 - c2 * c2);
    const f64 q2 = 0.04 / r19;
    const f64 q3 = (0.6 - 0.27 - c2 * q2) / c3;
    const f64 q4 = std::sqrt(1.0 - 0.81 - q2 * q2 - q3 * q3);

    std::vector<f32> rows{
        1.0f, 0.0f, 0.0f, 0.0f,                    // A
        0.9f, f32(r19), 0.0f, 0.0f,                // B
        0.3f, f32(c2), f32(c3), 0.0f,              // C
    };
    for (size_t r = 0; r < 3; ++r) normalize_inplace({rows.data() + r * 4, 4});
    FlatIndex idx(rows, 4);
    Vec q{0.9f, f32(q2), f32(q3), f32(q4)};
    q = normalize(q);

    auto pool = idx.search(q, 3);
    CHECK(ids_of(pool) == std::vector<uint64_t>{0, 1, 2});

    auto ranked = mmr_rerank(q, idx, pool, 0.5, 3);
    CHECK(ids_of(ranked) == std::vector<uint64_t>{0, 2, 1});
    CHECK(ranked[0].score == doctest::Approx(0.45).epsilon(1e-4));
    CHECK(ranked[1].score == doctest::Approx(0.15).epsilon(1e-4));
    CHECK(ranked[2].score == doctest::Approx(-0.025).epsilon(1e-3));

    // k=1 picks the most similar candidate for any lambda.
    for (f64 lambda : {0.0, 0.17, 0.5, 1.0}) {
        auto top = mmr_rerank(q, idx, pool, lambda, 1);
        REQUIRE(top.size() == 1);
        CHECK(top[0].id == 0);
    }
}

TEST_CASE("diversity statistics match their formulas") {
    Vec a{1.0f, 0.0f};
    Vec b{0.0f, 1.0f};
    Vec c{-1.0f, 0.0f};
    // Euclidean: |a-b| = sqrt(2), |a-c| = 2, |b-c| = sqrt(2).
    const f64 expect = (std::sqrt(2.0) + 2.0 + std::sqrt(2.0)) / 3.0;
    CHECK(mean_pairwise_distance({a, b, c}) == doctest::Approx(expect).epsilon(1e-6));
    // Cosine sims: 0, -1, 0.
    CHECK(mean_pairwise_cosine({a, b, c}) == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));

    Record rec;
    rec.targets_raw = {Vec{2.0f, 0.0f}, Vec{0.0f, 3.0f}, Vec{-5.0f, 0.0f}};
    CHECK(target_diversity(rec, DivMetric::Euclidean) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(target_diversity(rec, DivMetric::Cosine) ==
          doctest::Approx(1.0 + 1.0 / 3.0).epsilon(1e-6));

    Record one;
    one.targets_raw = {Vec{1.0f, 0.0f}};
    CHECK_THROWS_AS((void)target_diversity(one, DivMetric::Euclidean), Error);
}

TEST_CASE("output diversity covers the degenerate poles") {
    Vec v{0.6f, 0.8f};
    CHECK(output_diversity({v, v, v}) == doctest::Approx(1.0).epsilon(1e-6));
    Vec w{-0.6f, -0.8f};
    CHECK(output_diversity({v, w}) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK_THROWS_AS((void)output_diversity({v}), Error);

    // Predictions equal to a record's normalized targets reproduce the
    // between-targets statistic.
    auto gen = build_dataset(Setting::MultiInDist, TransformKind::Linear, 20, 5, 8, 5, 77);
    const Record& rec = gen.dataset.test[0];
    std::vector<Vec> preds;
    for (const auto& t : rec.targets_raw) preds.push_back(normalize(t));
    CHECK(output_diversity(preds) ==
          doctest::Approx(1.0 - target_diversity(rec, DivMetric::Cosine)).epsilon(1e-9));
}

TEST_CASE("diversity bins form ordered near-equal quantiles") {
    SUBCASE("two queries, two bins") {
        std::vector<f64> stat{0.5, 1.5};
        CHECK(diversity_bins(stat, 2) == std::vector<int>{0, 1});
        std::vector<f64> rev{1.5, 0.5};
        CHECK(diversity_bins(rev, 2) == std::vector<int>{1, 0});
    }
    SUBCASE("remainder goes to earlier bins") {
        RngStream rng(74, 0);
        std::vector<f64> stat(23);
        for (auto& s : stat) s = rng.uniform();
        auto bins = diversity_bins(stat, 4);
        std::vector<int> count(4, 0);
        for (int b : bins) count[size_t(b)]++;
        CHECK(count == std::vector<int>{6, 6, 6, 5});

        // Ordered: every stat in bin b is <= every stat in bin b+1.
        for (int b = 0; b + 1 < 4; ++b) {
            f64 hi = -1e300, lo = 1e300;
            for (size_t i = 0; i < stat.size(); ++i) {
                if (bins[i] == b) hi = std::max(hi, stat[i]);
                if (bins[i] == b + 1) lo = std::min(lo, stat[i]);
            }
            CHECK(hi <= lo);
        }
    }
    SUBCASE("identical targets sink to the lowest bin") {
        std::vector<f64> stat{0.7, 0.0, 1.1, 0.4};
        auto bins = diversity_bins(stat, 2);
        CHECK(bins[1] == 0);
        CHECK(bins[2] == 1);
    }
    SUBCASE("bins must be at least two") {
        std::vector<f64> stat{0.1, 0.2};
        CHECK_THROWS_AS((void)diversity_bins(stat, 1), Error);
    }
}

TEST_CASE("searching exact targets then fusing yields a perfect mrecall") {
    EvalFixture fx(30, 8, 8, 3, 5, 200);
    const auto& test = fx.gen.dataset.test;
    for (const Record& rec : test) {
        std::vector<std::vector<SearchHit>> lists;
        for (const Vec& raw : rec.targets_raw) lists.push_back(fx.index.search(normalize(raw), 10));
        for (int k : {3, 10}) {
            auto fused = round_robin_merge(lists, k);
            CHECK(mrecall_hit(ids_of(fused), rec.target_ids, k));
        }
    }
}

TEST_CASE("a constant model fuses to its single top-k list") {
    EvalFixture fx(30, 12, 8, 3, 6, 250);
    Model<f32> model = const_model(eval_model_config(8, 3), 41);

    auto out = evaluate_model(model, fx.gen.dataset, fx.index, EvalMode::Amer, fx.cfg);
    REQUIRE(out.ranking.size() == 12);

    // All queries share one fused ranking, equal to the constant emission's
    // own top-k list.
    auto dec = decode(model, [&] {
        TMat<f32> inputs(1, 8);
        const Record& r = fx.gen.dataset.test[0];
        std::copy(r.input.begin(), r.input.end(), inputs.row(0));
        return inputs;
    }());
    Vec c(dec[0].row(0), dec[0].row(0) + 8);
    auto expect = fx.index.search(c, 50);
    for (const auto& ranking : out.ranking) CHECK(ids_of(ranking) == ids_of(expect));

    // Identical emissions pin the output-diversity statistic at one.
    for (const auto& [key, value] : out.report.info)
        if (key == "output_diversity_sim") CHECK(value == "1.000000");
}

TEST_CASE("per-bin mrecall averages exactly to the overall value") {
    EvalFixture fx(40, 23, 8, 2, 7, 220);
    fx.cfg.ks = {10, 60};
    Model<f32> model(eval_model_config(8, 2));
    model.init(RngStream(42, 0));

    auto out = evaluate_model(model, fx.gen.dataset, fx.index, EvalMode::Amer, fx.cfg);
    const auto& cells = out.report.cells;
    REQUIRE(cells.size() == fx.cfg.ks.size() * (1 + size_t(fx.cfg.n_bins)));

    for (int k : fx.cfg.ks) {
        f64 overall = -1.0;
        size_t overall_n = 0;
        f64 weighted = 0.0;
        size_t bin_n = 0;
        for (const auto& cell : cells) {
            if (cell.k != k) continue;
            if (cell.bin < 0) {
                overall = cell.mrecall;
                overall_n = cell.n_queries;
            } else {
                weighted += cell.mrecall * f64(cell.n_queries);
                bin_n += cell.n_queries;
            }
        }
        REQUIRE(overall >= 0.0);
        CHECK(bin_n == overall_n);
        CHECK(weighted == doctest::Approx(overall * f64(overall_n)).epsilon(1e-12));
    }

    // Per-query hit records regenerate the overall cell, and hits are
    // monotone across the sorted ks.
    REQUIRE(out.per_query.size() == 23);
    for (size_t ki = 0; ki < fx.cfg.ks.size(); ++ki) {
        f64 total = 0.0;
        for (const auto& q : out.per_query) total += q.hits[ki];
        for (const auto& cell : cells)
            if (cell.k == fx.cfg.ks[ki] && cell.bin < 0)
                CHECK(cell.mrecall == doctest::Approx(total / 23.0).epsilon(1e-12));
    }
    for (const auto& q : out.per_query) CHECK(q.hits[0] <= q.hits[1]);

    // Determinism of the whole evaluation.
    auto again = evaluate_model(model, fx.gen.dataset, fx.index, EvalMode::Amer, fx.cfg);
    REQUIRE(again.ranking.size() == out.ranking.size());
    for (size_t i = 0; i < out.ranking.size(); ++i)
        CHECK(ids_of(again.ranking[i]) == ids_of(out.ranking[i]));
    for (size_t i = 0; i < cells.size(); ++i) {
        CHECK(again.report.cells[i].mrecall == cells[i].mrecall);
        CHECK(again.report.cells[i].n_queries == cells[i].n_queries);
    }
}

TEST_CASE("single-query evaluation modes agree when mmr keeps relevance only") {
    EvalFixture fx(40, 10, 8, 2, 8, 150);
    fx.cfg.ks = {5, 20};
    fx.cfg.mmr_lambdas = {1.0};
    fx.cfg.mmr_pool = 60;
    Model<f32> model(eval_model_config(8, 1));
    model.init(RngStream(43, 0));

    auto plain = evaluate_model(model, fx.gen.dataset, fx.index, EvalMode::SingleQuery, fx.cfg);
    auto mmr = evaluate_model(model, fx.gen.dataset, fx.index, EvalMode::SingleQueryMmr, fx.cfg);
    CHECK(plain.report.mode == "single_query");
    CHECK(mmr.report.mode == "single_query_mmr");

    REQUIRE(plain.ranking.size() == mmr.ranking.size());
    for (size_t q = 0; q < plain.ranking.size(); ++q)
        CHECK(ids_of(mmr.ranking[q]) == ids_of(plain.ranking[q]));
    for (size_t c = 0; c < plain.report.cells.size(); ++c)
        CHECK(mmr.report.cells[c].mrecall == plain.report.cells[c].mrecall);

    bool saw_lambda = false;
    for (const auto& [key, value] : mmr.report.info)
        if (key.rfind("lambda.k", 0) == 0) {
            saw_lambda = true;
            CHECK(value == "1.000000");
        }
    CHECK(saw_lambda);

    // Mode/model shape mismatches are rejected.
    Model<f32> wide(eval_model_config(8, 2));
    wide.init(RngStream(44, 0));
    CHECK_THROWS_AS((void)evaluate_model(wide, fx.gen.dataset, fx.index, EvalMode::SingleQuery,
                                         fx.cfg),
                    Error);
    Model<f32> narrow(eval_model_config(8, 1));
    narrow.init(RngStream(45, 0));
    CHECK_THROWS_AS((void)evaluate_model(narrow, fx.gen.dataset, fx.index, EvalMode::Amer, fx.cfg),
                    Error);
}

TEST_CASE("reports serialize to the documented shapes") {
    EvalReport rep;
    rep.mode = "amer";
    rep.n_queries = 4;
    rep.n_bins = 2;
    rep.info.emplace_back("div_metric", "euclidean");
    rep.cells.push_back({10, -1, 4, 0.75});
    rep.cells.push_back({10, 0, 2, 0.5});
    rep.cells.push_back({10, 1, 2, 1.0});

    const std::string csv = serialize_report_csv(rep);
    CHECK(csv ==
          "k,bin,metric,n_queries,mrecall\n"
          "10,all,mrecall,4,0.750000\n"
          "10,0,mrecall,2,0.500000\n"
          "10,1,mrecall,2,1.000000\n");

    const std::string text = serialize_report(rep);
    CHECK(text.find("[report]") == 0);
    CHECK(text.find("mode = amer\n") != std::string::npos);
    CHECK(text.find("n_queries = 4\n") != std::string::npos);
    CHECK(text.find("div_metric = euclidean\n") != std::string::npos);
    CHECK(text.find("[table]\n") != std::string::npos);
    CHECK(text.find(csv) != std::string::npos);
}

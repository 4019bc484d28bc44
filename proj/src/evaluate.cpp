#include "amer/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "amer/error.hpp"

namespace amer {

bool mrecall_hit(std::span<const uint64_t> retrieved, std::span<const uint64_t> relevant,
                 int k) {
    require(k >= 1, Errc::InvalidConfig, "mrecall_hit: k must be positive");
    require(!relevant.empty(), Errc::EmptyTargets, "mrecall_hit: no relevant ids");
    const size_t need = std::min(size_t(k), relevant.size());
    const size_t depth = std::min(size_t(k), retrieved.size());
    size_t found = 0;
    for (size_t i = 0; i < depth && found < need; ++i) {
        for (uint64_t id : relevant) {
            if (retrieved[i] == id) {
                ++found;
                break;
            }
        }
    }
    return found >= need;
}

std::vector<SearchHit> round_robin_merge(const std::vector<std::vector<SearchHit>>& lists,
                                         int k) {
    require(k >= 1, Errc::InvalidConfig, "round_robin_merge: k must be positive");
    require(!lists.empty(), Errc::CountMismatch, "round_robin_merge: no lists");
    std::vector<SearchHit> out;
    auto seen = [&](uint64_t id) {
        for (const SearchHit& h : out)
            if (h.id == id) return true;
        return false;
    };
    size_t max_len = 0;
    for (const auto& l : lists) max_len = std::max(max_len, l.size());
    // Position p of every list in turn; a duplicate id yields nothing from
    // that list this round.
    for (size_t p = 0; p < max_len && int(out.size()) < k; ++p) {
        for (size_t l = 0; l < lists.size() && int(out.size()) < k; ++l) {
            if (p >= lists[l].size()) continue;
            const uint64_t id = lists[l][p].id;
            if (seen(id)) continue;
            out.push_back({id, f32(1.0 / (1.0 + f64(out.size())))});
        }
    }
    return out;
}

std::vector<SearchHit> mmr_rerank(std::span<const f32> query, const FlatIndex& index,
                                  std::span<const SearchHit> pool, f64 lambda, int k) {
    require(k >= 1, Errc::InvalidConfig, "mmr_rerank: k must be positive");
    require(lambda >= 0.0 && lambda <= 1.0, Errc::InvalidConfig,
            "mmr_rerank: lambda must lie in [0, 1]");
    require(int(query.size()) == index.dim(), Errc::DimMismatch, "mmr_rerank: query dimension");
    const size_t n = pool.size();
    std::vector<SearchHit> out;
    if (n == 0) return out;

    auto dot = [&](std::span<const f32> a, std::span<const f32> b) {
        f64 s = 0.0;
        for (size_t j = 0; j < a.size(); ++j) s += f64(a[j]) * f64(b[j]);
        return s;
    };
    std::vector<f64> simq(n);
    for (size_t i = 0; i < n; ++i) simq[i] = dot(query, index.entry(pool[i].id));

    std::vector<f64> best(n, -std::numeric_limits<f64>::infinity());
    std::vector<char> used(n, 0);
    const size_t take = std::min(size_t(k), n);
    for (size_t sel = 0; sel < take; ++sel) {
        size_t pick = n;
        f64 pick_score = -std::numeric_limits<f64>::infinity();
        for (size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            const f64 penalty = sel == 0 ? 0.0 : best[i];
            const f64 score = lambda * simq[i] - (1.0 - lambda) * penalty;
            if (score > pick_score) {  // strict: ties keep the earlier pool rank
                pick_score = score;
                pick = i;
            }
        }
        used[pick] = 1;
        out.push_back({pool[pick].id, f32(pick_score)});
        const auto picked = index.entry(pool[pick].id);
        for (size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            best[i] = std::max(best[i], dot(index.entry(pool[i].id), picked));
        }
    }
    return out;
}

f64 mean_pairwise_distance(const std::vector<Vec>& rows) {
    const size_t n = rows.size();
    if (n < 2) return 0.0;
    f64 total = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            f64 s = 0.0;
            for (size_t c = 0; c < rows[i].size(); ++c) {
                const f64 diff = f64(rows[i][c]) - f64(rows[j][c]);
                s += diff * diff;
            }
            total += std::sqrt(s);
            ++pairs;
        }
    }
    return total / f64(pairs);
}

f64 mean_pairwise_cosine(const std::vector<Vec>& rows) {
    const size_t n = rows.size();
    if (n < 2) return 0.0;
    f64 total = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            total += cosine_sim(rows[i], rows[j]);
            ++pairs;
        }
    }
    return total / f64(pairs);
}

f64 target_diversity(const Record& rec, DivMetric metric) {
    require(rec.targets_raw.size() >= 2, Errc::SingleTarget,
            "target_diversity: need at least two targets");
    std::vector<Vec> unit;
    unit.reserve(rec.targets_raw.size());
    for (const Vec& t : rec.targets_raw) unit.push_back(normalize(t));
    if (metric == DivMetric::Euclidean) return mean_pairwise_distance(unit);
    return 1.0 - mean_pairwise_cosine(unit);
}

f64 output_diversity(const std::vector<Vec>& preds) {
    require(preds.size() >= 2, Errc::SinglePrediction,
            "output_diversity: need at least two predictions");
    return mean_pairwise_cosine(preds);
}

std::vector<int> diversity_bins(std::span<const f64> stat, int n_bins) {
    require(n_bins >= 2, Errc::InvalidConfig, "diversity_bins: n_bins must be at least 2");
    const size_t n = stat.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (stat[a] != stat[b]) return stat[a] < stat[b];
        return a < b;
    });
    std::vector<int> bin(n, 0);
    const size_t base = n / size_t(n_bins);
    const size_t rem = n % size_t(n_bins);
    size_t at = 0;
    for (int b = 0; b < n_bins; ++b) {
        const size_t take = base + (size_t(b) < rem ? 1 : 0);
        for (size_t i = 0; i < take; ++i) bin[order[at++]] = b;
    }
    return bin;
}

namespace {

std::vector<TMat<f32>> decode_records(Model<f32>& model, const std::vector<Record>& recs) {
    TMat<f32> inputs(int(recs.size()), model.cfg.d);
    for (size_t i = 0; i < recs.size(); ++i)
        std::copy(recs[i].input.begin(), recs[i].input.end(), inputs.row(int(i)));
    return decode(model, inputs);
}

// Per-embedding top-k over the whole split; result[t][q] is the list for
// embedding t of query q.
std::vector<std::vector<std::vector<SearchHit>>> search_embeddings(
    const std::vector<TMat<f32>>& embs, const FlatIndex& index, int depth, int threads) {
    std::vector<std::vector<std::vector<SearchHit>>> out;
    out.reserve(embs.size());
    for (const auto& e : embs)
        out.push_back(index.batch_search({e.data.data(), e.data.size()}, depth, threads));
    return out;
}

f64 mean_mrecall(const std::vector<std::vector<SearchHit>>& ranking,
                 const std::vector<Record>& recs, int k, const std::vector<int>& bins,
                 int want_bin, size_t* n_out) {
    std::vector<uint64_t> ids;
    f64 hits = 0.0;
    size_t n = 0;
    for (size_t q = 0; q < ranking.size(); ++q) {
        if (want_bin >= 0 && bins[q] != want_bin) continue;
        ids.clear();
        for (const SearchHit& h : ranking[q]) ids.push_back(h.id);
        hits += mrecall_hit(ids, recs[q].target_ids, k) ? 1.0 : 0.0;
        ++n;
    }
    if (n_out) *n_out = n;
    return n ? hits / f64(n) : 0.0;
}

std::string fmt6(f64 v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string serialize_report_csv(const EvalReport& report) {
    std::string out = "k,bin,metric,n_queries,mrecall\n";
    for (const EvalCell& c : report.cells) {
        out += std::to_string(c.k) + ",";
        out += c.bin < 0 ? std::string("all") : std::to_string(c.bin);
        out += ",mrecall," + std::to_string(c.n_queries) + "," + fmt6(c.mrecall) + "\n";
    }
    return out;
}

std::string serialize_report(const EvalReport& report) {
    std::string out = "[report]\n";
    out += "mode = " + report.mode + "\n";
    out += "n_queries = " + std::to_string(report.n_queries) + "\n";
    out += "n_bins = " + std::to_string(report.n_bins) + "\n";
    for (const auto& [k, v] : report.info) out += k + " = " + v + "\n";
    out += "\n[table]\n";
    out += serialize_report_csv(report);
    return out;
}

EvalOutput evaluate_model(Model<f32>& model, const SyntheticDataset& ds, const FlatIndex& index,
                          EvalMode mode, const EvalCfg& cfg) {
    require(model.cfg.d == ds.d, Errc::DimMismatch, "evaluate_model: model vs dataset d");
    require(index.dim() == ds.d, Errc::DimMismatch, "evaluate_model: index vs dataset d");
    require(!ds.test.empty(), Errc::InvalidConfig, "evaluate_model: empty test split");
    require(!cfg.ks.empty(), Errc::InvalidConfig, "evaluate_model: no ks");
    if (mode == EvalMode::Amer)
        require(model.cfg.m == ds.m, Errc::CountMismatch, "evaluate_model: model emits m");
    else
        require(model.cfg.m == 1, Errc::CountMismatch,
                "evaluate_model: single-query model must emit one embedding");

    const int max_k = *std::max_element(cfg.ks.begin(), cfg.ks.end());
    const auto& test = ds.test;
    const size_t n_q = test.size();

    EvalOutput out;
    out.query_ids.reserve(n_q);
    for (const Record& r : test) out.query_ids.push_back(r.target_ids[0] / uint64_t(ds.m));

    std::vector<f64> stat(n_q);
    for (size_t q = 0; q < n_q; ++q) stat[q] = target_diversity(test[q], cfg.div_metric);
    const std::vector<int> bins = diversity_bins(stat, cfg.n_bins);

    EvalReport& rep = out.report;
    rep.n_queries = n_q;
    rep.n_bins = cfg.n_bins;
    rep.info.emplace_back("div_metric",
                          cfg.div_metric == DivMetric::Euclidean ? "euclidean" : "cosine");
    {
        f64 tsim = 0.0;
        for (const Record& r : test) {
            std::vector<Vec> unit;
            unit.reserve(r.targets_raw.size());
            for (const Vec& t : r.targets_raw) unit.push_back(normalize(t));
            tsim += mean_pairwise_cosine(unit);
        }
        rep.info.emplace_back("target_diversity_sim", fmt6(tsim / f64(n_q)));
    }

    auto embs = decode_records(model, test);

    if (mode == EvalMode::Amer) {
        f64 osim = 0.0;
        for (size_t q = 0; q < n_q; ++q) {
            std::vector<Vec> preds;
            preds.reserve(embs.size());
            for (const auto& e : embs) {
                const f32* r = e.row(int(q));
                preds.emplace_back(r, r + ds.d);
            }
            osim += output_diversity(preds);
        }
        rep.info.emplace_back("output_diversity_sim", fmt6(osim / f64(n_q)));
    }

    // One final ranking per k; Amer and SingleQuery share a single list.
    std::vector<std::vector<std::vector<SearchHit>>> per_k;

    if (mode == EvalMode::Amer) {
        rep.mode = "amer";
        auto per_emb = search_embeddings(embs, index, max_k, cfg.threads);
        out.ranking.resize(n_q);
        std::vector<std::vector<SearchHit>> lists(embs.size());
        for (size_t q = 0; q < n_q; ++q) {
            for (size_t t = 0; t < embs.size(); ++t) lists[t] = per_emb[t][q];
            out.ranking[q] = round_robin_merge(lists, max_k);
        }
        per_k.assign(cfg.ks.size(), out.ranking);
    } else if (mode == EvalMode::SingleQuery) {
        rep.mode = "single_query";
        out.ranking =
            index.batch_search({embs[0].data.data(), embs[0].data.size()}, max_k, cfg.threads);
        per_k.assign(cfg.ks.size(), out.ranking);
    } else {
        rep.mode = "single_query_mmr";
        const int depth = std::min<int>(cfg.mmr_pool, int(index.size()));
        auto pools =
            index.batch_search({embs[0].data.data(), embs[0].data.size()}, depth, cfg.threads);

        auto rerank_all = [&](const std::vector<TMat<f32>>& qemb,
                              const std::vector<std::vector<SearchHit>>& qpools, f64 lambda) {
            std::vector<std::vector<SearchHit>> ranked(qpools.size());
            for (size_t q = 0; q < qpools.size(); ++q) {
                std::span<const f32> query{qemb[0].row(int(q)), size_t(ds.d)};
                ranked[q] = mmr_rerank(query, index, qpools[q], lambda, max_k);
            }
            return ranked;
        };

        // Tune lambda per k on validation queries.
        std::vector<f64> chosen(cfg.ks.size(), cfg.mmr_lambdas.front());
        if (!ds.val.empty()) {
            auto val_embs = decode_records(model, ds.val);
            auto val_pools = index.batch_search(
                {val_embs[0].data.data(), val_embs[0].data.size()}, depth, cfg.threads);
            const std::vector<int> val_bins(ds.val.size(), 0);
            std::vector<f64> best_score(cfg.ks.size(),
                                        -std::numeric_limits<f64>::infinity());
            for (f64 lambda : cfg.mmr_lambdas) {
                auto ranked = rerank_all(val_embs, val_pools, lambda);
                for (size_t ki = 0; ki < cfg.ks.size(); ++ki) {
                    const f64 score =
                        mean_mrecall(ranked, ds.val, cfg.ks[ki], val_bins, -1, nullptr);
                    if (score > best_score[ki]) {  // strict: ties keep the earlier lambda
                        best_score[ki] = score;
                        chosen[ki] = lambda;
                    }
                }
            }
        }
        for (size_t ki = 0; ki < cfg.ks.size(); ++ki)
            rep.info.emplace_back("lambda.k" + std::to_string(cfg.ks[ki]),
                                  fmt6(chosen[ki]));

        // The run artifact keeps the ranking for the largest k's lambda; the
        // per-k cells use each k's own choice.
        per_k.resize(cfg.ks.size());
        for (size_t ki = 0; ki < cfg.ks.size(); ++ki) {
            bool reused = false;
            for (size_t prev = 0; prev < ki; ++prev) {
                if (chosen[prev] == chosen[ki]) {
                    per_k[ki] = per_k[prev];
                    reused = true;
                    break;
                }
            }
            if (!reused) per_k[ki] = rerank_all(embs, pools, chosen[ki]);
        }
        size_t run_ki = 0;
        for (size_t ki = 0; ki < cfg.ks.size(); ++ki)
            if (cfg.ks[ki] > cfg.ks[run_ki]) run_ki = ki;
        out.ranking = per_k[run_ki];
        rep.info.emplace_back("run_lambda", fmt6(chosen[run_ki]));
    }

    for (size_t ki = 0; ki < cfg.ks.size(); ++ki) {
        const int k = cfg.ks[ki];
        EvalCell all{k, -1, 0, 0.0};
        all.mrecall = mean_mrecall(per_k[ki], test, k, bins, -1, &all.n_queries);
        rep.cells.push_back(all);
        for (int b = 0; b < cfg.n_bins; ++b) {
            EvalCell cell{k, b, 0, 0.0};
            cell.mrecall = mean_mrecall(per_k[ki], test, k, bins, b, &cell.n_queries);
            rep.cells.push_back(cell);
        }
    }

    out.per_query.resize(n_q);
    std::vector<uint64_t> ids;
    for (size_t q = 0; q < n_q; ++q) {
        QueryRecord& r = out.per_query[q];
        r.query_id = out.query_ids[q];
        r.bin = bins[q];
        r.stat = stat[q];
        for (size_t ki = 0; ki < cfg.ks.size(); ++ki) {
            ids.clear();
            for (const SearchHit& h : per_k[ki][q]) ids.push_back(h.id);
            r.hits.push_back(mrecall_hit(ids, test[q].target_ids, cfg.ks[ki]) ? 1 : 0);
        }
    }
    return out;
}

}  // namespace amer

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amer/config.hpp"
#include "amer/error.hpp"
#include "amer/evaluate.hpp"
#include "amer/io.hpp"
#include "amer/trainer.hpp"

namespace fs = std::filesystem;
using namespace amer;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config file (INI-style)");
    cmd->add_option("--set", opts.sets, "override section.key=value")->type_name("KEY=VALUE");
}

FullConfig effective_config(const CommonOpts& opts) {
    FullConfig cfg = opts.config_path.empty() ? FullConfig{} : load_config(opts.config_path);
    for (const std::string& s : opts.sets) {
        const size_t eq = s.find('=');
        require(eq != std::string::npos, Errc::InvalidConfig,
                "--set expects section.key=value, got '" + s + "'");
        apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    validate_config(cfg);
    return cfg;
}

void write_out_manifest(const std::string& out_dir, const std::vector<std::string>& names) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const std::string& n : names) files.emplace_back(n, out_dir + "/" + n);
    write_manifest(out_dir + "/manifest.txt", files);
}

void check_dataset_matches(const FullConfig& cfg, const SyntheticDataset& ds) {
    require(ds.d == cfg.data.d && ds.m == cfg.data.m, Errc::InvalidConfig,
            "dataset on disk does not match config (d or m differs)");
    require(ds.setting == cfg.data.setting && ds.tkind == cfg.data.transform, Errc::InvalidConfig,
            "dataset on disk does not match config (setting or transform differs)");
}

int cmd_gen_data(const CommonOpts& opts, const std::string& out_dir) {
    const FullConfig cfg = effective_config(opts);
    fs::create_directories(out_dir);

    GenOutput gen = build_dataset(cfg.data.setting, cfg.data.transform, cfg.data.n_train,
                                  cfg.data.n_test, cfg.data.d, cfg.data.m, cfg.data.seed,
                                  cfg.data.normalize_inputs);
    Corpus corpus = build_corpus(gen.target_pool, cfg.data.corpus_size, cfg.data.d,
                                 RngStream(cfg.data.seed, 0).derive("corpus"));

    for (Split s : {Split::Train, Split::Val, Split::Test})
        write_dataset_split(out_dir + "/" + dataset_filename(s), gen.dataset, s);
    write_corpus(out_dir + "/corpus.bin", corpus);
    write_transforms(out_dir + "/transforms.bin", gen.transforms);
    atomic_write(out_dir + "/config.cfg", serialize_config(cfg));
    write_out_manifest(out_dir, {"train.bin", "val.bin", "test.bin", "corpus.bin",
                                 "transforms.bin", "config.cfg"});

    std::printf("wrote %s: train=%zu val=%zu test=%zu corpus=%zu (targets=%zu)\n",
                out_dir.c_str(), gen.dataset.train.size(), gen.dataset.val.size(),
                gen.dataset.test.size(), corpus.size(), gen.target_pool.size());
    return 0;
}

int cmd_build_index(const std::string& corpus_path) {
    Corpus corpus = read_corpus(corpus_path);
    size_t targets = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto row = corpus.entry(i);
        const f64 n = norm2(row);
        require(std::abs(n - 1.0) < 1e-3, Errc::NonUnitEntry,
                "corpus row " + std::to_string(i) + " is not unit length");
        targets += corpus.prov[i].tag == 0 ? 1 : 0;
    }
    FlatIndex index(std::move(corpus.data), corpus.d);
    std::printf("index ok: %zu rows (%zu targets, %zu distractors), d=%d, %zu shard(s)\n",
                index.size(), targets, index.size() - targets, index.dim(),
                (index.size() + FlatIndex::kShardRows - 1) / FlatIndex::kShardRows);
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir, const std::string& out_dir,
              uint64_t seed, bool seed_given) {
    FullConfig cfg = effective_config(opts);
    if (seed_given) cfg.train.seed = seed;
    SyntheticDataset ds = read_dataset_dir(data_dir);
    check_dataset_matches(cfg, ds);
    fs::create_directories(out_dir);

    const int64_t interval = cfg.train.checkpoint_interval;
    TrainResult result = train(cfg, ds, [&](const LogRow& row) {
        if (row.step % interval == 0 || row.step == cfg.train.steps) {
            std::printf("step %lld/%d loss %.4f val %.4f lr %.2e p %.2f\n",
                        static_cast<long long>(row.step), cfg.train.steps, row.loss,
                        row.val_loss, row.lr, row.p);
            std::fflush(stdout);
        }
    });

    const std::string config_text = serialize_config(cfg);
    Checkpoint ckpt =
        checkpoint_of(result, model_config_of(cfg), config_text, cfg.train.steps);
    write_checkpoint(out_dir + "/checkpoint.bin", ckpt);
    write_train_log(out_dir + "/train_log.csv", result.log);
    atomic_write(out_dir + "/config.cfg", config_text);
    write_out_manifest(out_dir, {"checkpoint.bin", "train_log.csv", "config.cfg"});

    std::printf("wrote %s: best_step=%lld best_val=%.6f\n", out_dir.c_str(),
                static_cast<long long>(result.best_step), result.best_val);
    return 0;
}

EvalMode parse_mode(const std::string& s) {
    if (s == "amer") return EvalMode::Amer;
    if (s == "single_query") return EvalMode::SingleQuery;
    if (s == "single_query_mmr") return EvalMode::SingleQueryMmr;
    fail(Errc::InvalidConfig, "unknown eval mode: " + s);
}

std::string per_query_csv(const std::vector<int>& ks, const std::vector<QueryRecord>& rows) {
    std::string out = "query_id,bin,stat";
    for (int k : ks) out += ",hit@" + std::to_string(k);
    out += '\n';
    char buf[64];
    for (const QueryRecord& r : rows) {
        std::snprintf(buf, sizeof(buf), "%llu,%d,%.6f",
                      static_cast<unsigned long long>(r.query_id), r.bin, r.stat);
        out += buf;
        for (uint8_t h : r.hits) out += h ? ",1" : ",0";
        out += '\n';
    }
    return out;
}

int cmd_eval(const CommonOpts& opts, const std::string& data_dir, const std::string& corpus_path,
             const std::string& ckpt_path, const std::string& out_dir, std::string mode_str,
             bool use_final, int threads) {
    FullConfig cfg = effective_config(opts);
    cfg.eval.threads = threads;
    SyntheticDataset ds = read_dataset_dir(data_dir);
    check_dataset_matches(cfg, ds);
    Corpus corpus = read_corpus(corpus_path);
    require(corpus.d == ds.d, Errc::DimMismatch, "corpus dimension does not match dataset");
    FlatIndex index(std::move(corpus.data), corpus.d);

    Checkpoint ckpt = read_checkpoint(ckpt_path);
    Model<f32> model = model_from_checkpoint(ckpt, !use_final);
    if (mode_str.empty()) mode_str = ckpt.cfg.m > 1 ? "amer" : "single_query";
    const EvalMode mode = parse_mode(mode_str);

    fs::create_directories(out_dir);
    EvalOutput ev = evaluate_model(model, ds, index, mode, cfg.eval);
    ev.report.info.emplace_back("checkpoint_step", std::to_string(ckpt.step));
    ev.report.info.emplace_back("params", use_final ? "final" : "best");

    const std::string report = serialize_report(ev.report);
    atomic_write(out_dir + "/report.txt", report);
    atomic_write(out_dir + "/report.csv", serialize_report_csv(ev.report));
    atomic_write(out_dir + "/perquery.csv", per_query_csv(cfg.eval.ks, ev.per_query));
    write_run(out_dir + "/run.txt", ev.query_ids, ev.ranking);
    atomic_write(out_dir + "/config.cfg", serialize_config(cfg));
    write_out_manifest(out_dir,
                       {"report.txt", "report.csv", "perquery.csv", "run.txt", "config.cfg"});

    std::fputs(report.c_str(), stdout);
    return 0;
}

DivMetric parse_metric(const std::string& s) {
    if (s == "euclidean") return DivMetric::Euclidean;
    if (s == "cosine") return DivMetric::Cosine;
    fail(Errc::InvalidConfig, "unknown diversity metric: " + s);
}

// Binned MRecall for an externally produced run over this corpus.
int cmd_ingest(const std::string& run_path, const std::string& targets_path,
               const std::string& corpus_path, int n_bins, const std::string& metric_str,
               std::vector<int> ks, const std::string& out_dir) {
    const DivMetric metric = parse_metric(metric_str);
    if (ks.empty()) ks = {10, 100};
    Corpus corpus = read_corpus(corpus_path);
    RunFile run = read_run(run_path);
    TargetsFile tf = read_targets(targets_path);
    require(!tf.query_ids.empty(), Errc::EmptyTargets, "targets file has no queries");

    std::vector<f64> stat(tf.query_ids.size());
    for (size_t q = 0; q < tf.query_ids.size(); ++q) {
        std::vector<Vec> vecs;
        for (uint64_t id : tf.targets[q]) {
            require(id < corpus.size(), Errc::MissingCorpusIds,
                    "target id " + std::to_string(id) + " is not in the corpus");
            const auto row = corpus.entry(id);
            vecs.emplace_back(row.begin(), row.end());
        }
        require(vecs.size() >= 2, Errc::SingleTarget, "ingest: need at least two targets");
        stat[q] = metric == DivMetric::Euclidean ? mean_pairwise_distance(vecs)
                                                 : 1.0 - mean_pairwise_cosine(vecs);
    }
    const std::vector<int> bins = diversity_bins(stat, n_bins);

    std::vector<std::vector<uint64_t>> retrieved(tf.query_ids.size());
    size_t missing = 0;
    for (size_t q = 0; q < tf.query_ids.size(); ++q) {
        bool found = false;
        for (size_t r = 0; r < run.query_ids.size(); ++r) {
            if (run.query_ids[r] != tf.query_ids[q]) continue;
            for (const SearchHit& h : run.hits[r]) retrieved[q].push_back(h.id);
            found = true;
            break;
        }
        missing += found ? 0 : 1;
    }

    EvalReport rep;
    rep.mode = "external";
    rep.n_queries = tf.query_ids.size();
    rep.n_bins = n_bins;
    rep.info.emplace_back("div_metric", metric_str);
    rep.info.emplace_back("run_file", run_path);
    if (missing)
        rep.info.emplace_back("queries_missing_from_run", std::to_string(missing));
    for (int k : ks) {
        EvalCell all{k, -1, 0, 0.0};
        f64 hits = 0.0;
        for (size_t q = 0; q < retrieved.size(); ++q)
            hits += mrecall_hit(retrieved[q], tf.targets[q], k) ? 1.0 : 0.0;
        all.n_queries = retrieved.size();
        all.mrecall = hits / f64(retrieved.size());
        rep.cells.push_back(all);
        for (int b = 0; b < n_bins; ++b) {
            EvalCell cell{k, b, 0, 0.0};
            f64 bh = 0.0;
            for (size_t q = 0; q < retrieved.size(); ++q) {
                if (bins[q] != b) continue;
                bh += mrecall_hit(retrieved[q], tf.targets[q], k) ? 1.0 : 0.0;
                ++cell.n_queries;
            }
            cell.mrecall = cell.n_queries ? bh / f64(cell.n_queries) : 0.0;
            rep.cells.push_back(cell);
        }
    }

    const std::string report = serialize_report(rep);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        atomic_write(out_dir + "/report.txt", report);
        atomic_write(out_dir + "/report.csv", serialize_report_csv(rep));
        write_out_manifest(out_dir, {"report.txt", "report.csv"});
    }
    std::fputs(report.c_str(), stdout);
    return 0;
}

int cmd_analyze(const std::string& data_dir, const std::string& ckpt_path, int n_bins,
                const std::string& metric_str) {
    const DivMetric metric = parse_metric(metric_str);
    SyntheticDataset ds = read_dataset_dir(data_dir);
    std::printf("dataset: d=%d m=%d seed=%llu train=%zu val=%zu test=%zu\n", ds.d, ds.m,
                static_cast<unsigned long long>(ds.seed), ds.train.size(), ds.val.size(),
                ds.test.size());

    std::vector<f64> stat(ds.test.size());
    for (size_t i = 0; i < ds.test.size(); ++i) stat[i] = target_diversity(ds.test[i], metric);
    if (!stat.empty()) {
        std::vector<f64> sorted = stat;
        std::sort(sorted.begin(), sorted.end());
        std::printf("test target diversity: min=%.4f median=%.4f max=%.4f\n", sorted.front(),
                    sorted[sorted.size() / 2], sorted.back());
        const std::vector<int> bins = diversity_bins(stat, n_bins);
        for (int b = 0; b < n_bins; ++b) {
            f64 lo = 1e300, hi = -1e300;
            size_t n = 0;
            for (size_t i = 0; i < stat.size(); ++i) {
                if (bins[i] != b) continue;
                lo = std::min(lo, stat[i]);
                hi = std::max(hi, stat[i]);
                ++n;
            }
            if (n)
                std::printf("bin %d: n=%zu range [%.4f, %.4f]\n", b, n, lo, hi);
            else
                std::printf("bin %d: n=0\n", b);
        }
    }

    if (!ckpt_path.empty()) {
        Checkpoint ckpt = read_checkpoint(ckpt_path);
        Model<f32> model = model_from_checkpoint(ckpt, true);
        std::printf("checkpoint: step=%lld best_step=%lld best_val=%.6f m=%d\n",
                    static_cast<long long>(ckpt.step), static_cast<long long>(ckpt.best_step),
                    ckpt.best_val, ckpt.cfg.m);
        if (!ds.test.empty() && model.cfg.d == ds.d && model.cfg.m >= 2) {
            TMat<f32> inputs(int(ds.test.size()), ds.d);
            for (size_t i = 0; i < ds.test.size(); ++i)
                std::copy(ds.test[i].input.begin(), ds.test[i].input.end(), inputs.row(int(i)));
            auto embs = decode(model, inputs);
            f64 total = 0.0;
            for (size_t q = 0; q < ds.test.size(); ++q) {
                std::vector<Vec> rows;
                for (const auto& e : embs) {
                    Vec r(size_t(ds.d));
                    for (int j = 0; j < ds.d; ++j) r[size_t(j)] = e.at(int(q), j);
                    rows.push_back(std::move(r));
                }
                total += output_diversity(rows);
            }
            std::printf("mean output pairwise similarity on test: %.4f\n",
                        total / f64(ds.test.size()));
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic multi-target retrieval laboratory"};
    app.require_subcommand(1);
    std::function<int()> run;

    CommonOpts gen_opts;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate dataset, corpus, and transforms");
    add_common(gen, gen_opts);
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->callback([&] { run = [&] { return cmd_gen_data(gen_opts, gen_out); }; });

    std::string bi_corpus;
    auto* bi = app.add_subcommand("build-index", "validate a corpus for exact search");
    bi->add_option("--corpus", bi_corpus, "corpus file")->required();
    bi->callback([&] { run = [&] { return cmd_build_index(bi_corpus); }; });

    CommonOpts tr_opts;
    std::string tr_data, tr_out;
    uint64_t tr_seed = 0;
    auto* tr = app.add_subcommand("train", "train a retriever on a generated dataset");
    add_common(tr, tr_opts);
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    auto* seed_opt = tr->add_option("--seed", tr_seed, "override train.seed");
    tr->callback([&] {
        run = [&, seed_opt] {
            return cmd_train(tr_opts, tr_data, tr_out, tr_seed, seed_opt->count() > 0);
        };
    });

    CommonOpts ev_opts;
    std::string ev_data, ev_corpus, ev_ckpt, ev_out, ev_mode;
    bool ev_final = false;
    int ev_threads = 1;
    auto* ev = app.add_subcommand("eval", "retrieve and score MRecall@k");
    add_common(ev, ev_opts);
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--corpus", ev_corpus, "corpus file")->required();
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--mode", ev_mode, "amer | single_query | single_query_mmr")
        ->check(CLI::IsMember({"amer", "single_query", "single_query_mmr"}));
    ev->add_flag("--final", ev_final, "use final params instead of best-validation");
    ev->add_option("--threads", ev_threads, "search worker threads");
    ev->callback([&] {
        run = [&] {
            return cmd_eval(ev_opts, ev_data, ev_corpus, ev_ckpt, ev_out, ev_mode, ev_final,
                            ev_threads);
        };
    });

    CommonOpts rr_opts;
    std::string rr_data, rr_corpus, rr_ckpt, rr_out;
    f64 rr_lambda = -1.0;
    int rr_threads = 1;
    auto* rr = app.add_subcommand("rerank", "MMR-rerank single-query retrieval");
    add_common(rr, rr_opts);
    rr->add_option("--data", rr_data, "dataset directory")->required();
    rr->add_option("--corpus", rr_corpus, "corpus file")->required();
    rr->add_option("--checkpoint", rr_ckpt, "checkpoint file")->required();
    rr->add_option("--out", rr_out, "output directory")->required();
    auto* lam_opt = rr->add_option("--lambda", rr_lambda, "fixed lambda (skips tuning)");
    rr->add_option("--threads", rr_threads, "search worker threads");
    rr->callback([&] {
        run = [&, lam_opt] {
            CommonOpts opts = rr_opts;
            if (lam_opt->count() > 0)
                opts.sets.push_back("eval.mmr_lambdas=" + std::to_string(rr_lambda));
            return cmd_eval(opts, rr_data, rr_corpus, rr_ckpt, rr_out, "single_query_mmr",
                            false, rr_threads);
        };
    });

    std::string an_data, an_ckpt, an_run, an_targets, an_corpus, an_out;
    std::string an_metric = "euclidean";
    std::vector<int> an_ks;
    int an_bins = 4;
    auto* an = app.add_subcommand(
        "analyze", "diversity-bin a dataset, or score an external run against targets");
    an->add_option("--data", an_data, "dataset directory");
    an->add_option("--checkpoint", an_ckpt, "checkpoint file (with --data)");
    an->add_option("--run", an_run, "external run file (query_id doc_id rank score)");
    an->add_option("--targets", an_targets, "targets file (query_id m target_id...)");
    an->add_option("--corpus", an_corpus, "corpus file (with --run)");
    an->add_option("--out", an_out, "report output directory (with --run)");
    an->add_option("--bins", an_bins, "diversity bin count");
    an->add_option("--metric", an_metric, "euclidean | cosine")
        ->check(CLI::IsMember({"euclidean", "cosine"}));
    an->add_option("--ks", an_ks, "k values for the ingested run");
    an->callback([&] {
        run = [&] {
            if (!an_run.empty() || !an_targets.empty()) {
                require(!an_run.empty() && !an_targets.empty() && !an_corpus.empty(),
                        Errc::InvalidConfig,
                        "analyze: run ingestion needs --run, --targets, and --corpus");
                return cmd_ingest(an_run, an_targets, an_corpus, an_bins, an_metric, an_ks,
                                  an_out);
            }
            require(!an_data.empty(), Errc::InvalidConfig,
                    "analyze: pass --data or --run/--targets/--corpus");
            return cmd_analyze(an_data, an_ckpt, an_bins, an_metric);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        return run ? run() : 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", errc_name(e.code()), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

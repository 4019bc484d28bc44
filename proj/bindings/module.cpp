#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "amer/assignment.hpp"
#include "amer/config.hpp"
#include "amer/error.hpp"
#include "amer/evaluate.hpp"
#include "amer/io.hpp"
#include "amer/rng.hpp"
#include "amer/trainer.hpp"

namespace py = pybind11;
using namespace amer;

namespace {

FullConfig config_from_text(const std::string& text) {
    FullConfig cfg = parse_config(text);
    validate_config(cfg);
    return cfg;
}

py::dict gen_data_py(const std::string& config_text, const std::string& out_dir) {
    const FullConfig cfg = config_from_text(config_text);
    std::filesystem::create_directories(out_dir);
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

    py::dict out;
    out["train"] = gen.dataset.train.size();
    out["val"] = gen.dataset.val.size();
    out["test"] = gen.dataset.test.size();
    out["corpus"] = corpus.size();
    out["targets"] = gen.target_pool.size();
    return out;
}

py::dict train_py(const std::string& config_text, const std::string& data_dir,
                  const std::string& out_dir) {
    const FullConfig cfg = config_from_text(config_text);
    SyntheticDataset ds = read_dataset_dir(data_dir);
    std::filesystem::create_directories(out_dir);
    TrainResult result = train(cfg, ds, {});
    const std::string canon = serialize_config(cfg);
    Checkpoint ckpt = checkpoint_of(result, model_config_of(cfg), canon, cfg.train.steps);
    write_checkpoint(out_dir + "/checkpoint.bin", ckpt);
    write_train_log(out_dir + "/train_log.csv", result.log);
    atomic_write(out_dir + "/config.cfg", canon);

    py::dict out;
    out["steps"] = cfg.train.steps;
    out["best_step"] = result.best_step;
    out["best_val"] = result.best_val;
    if (!result.log.empty()) out["final_loss"] = result.log.back().loss;
    return out;
}

EvalMode mode_from_string(const std::string& s) {
    if (s == "amer") return EvalMode::Amer;
    if (s == "single_query") return EvalMode::SingleQuery;
    if (s == "single_query_mmr") return EvalMode::SingleQueryMmr;
    fail(Errc::InvalidConfig, "unknown eval mode: " + s);
}

py::dict evaluate_py(const std::string& config_text, const std::string& data_dir,
                     const std::string& corpus_path, const std::string& checkpoint_path,
                     const std::string& mode, bool best) {
    const FullConfig cfg = config_from_text(config_text);
    SyntheticDataset ds = read_dataset_dir(data_dir);
    Corpus corpus = read_corpus(corpus_path);
    FlatIndex index(std::move(corpus.data), corpus.d);
    Checkpoint ckpt = read_checkpoint(checkpoint_path);
    Model<f32> model = model_from_checkpoint(ckpt, best);
    EvalOutput ev = evaluate_model(model, ds, index, mode_from_string(mode), cfg.eval);

    py::dict out;
    out["mode"] = ev.report.mode;
    out["n_queries"] = ev.report.n_queries;
    py::dict info;
    for (const auto& [k, v] : ev.report.info) info[py::str(k)] = v;
    out["info"] = info;
    py::list cells;
    for (const EvalCell& c : ev.report.cells) {
        py::dict cell;
        cell["k"] = c.k;
        cell["bin"] = c.bin;
        cell["n_queries"] = c.n_queries;
        cell["mrecall"] = c.mrecall;
        cells.append(cell);
    }
    out["cells"] = cells;
    return out;
}

std::vector<std::vector<std::pair<uint64_t, f64>>> search_py(
    const std::string& corpus_path, const std::vector<std::vector<f64>>& queries, int k) {
    Corpus corpus = read_corpus(corpus_path);
    const int d = corpus.d;
    FlatIndex index(std::move(corpus.data), d);
    std::vector<std::vector<std::pair<uint64_t, f64>>> out;
    std::vector<f32> q(static_cast<size_t>(d));
    for (const auto& query : queries) {
        require(int(query.size()) == d, Errc::DimMismatch, "search: query dimension");
        for (int j = 0; j < d; ++j) q[size_t(j)] = f32(query[size_t(j)]);
        auto hits = index.search(q, k);
        std::vector<std::pair<uint64_t, f64>> row;
        for (const SearchHit& h : hits) row.emplace_back(h.id, f64(h.score));
        out.push_back(std::move(row));
    }
    return out;
}

std::pair<std::vector<int>, f64> hungarian_py(const std::vector<std::vector<f64>>& cost) {
    const int m = int(cost.size());
    CostMatrix c(m);
    for (int i = 0; i < m; ++i) {
        require(int(cost[size_t(i)].size()) == m, Errc::ShapeMismatch,
                "hungarian: cost matrix must be square");
        for (int j = 0; j < m; ++j) c.at(i, j) = cost[size_t(i)][size_t(j)];
    }
    Matching match = hungarian(c);
    return {match.target_of, match.total};
}

bool mrecall_py(const std::vector<uint64_t>& retrieved, const std::vector<uint64_t>& relevant,
                int k) {
    return mrecall_hit(retrieved, relevant, k);
}

std::vector<uint64_t> round_robin_py(const std::vector<std::vector<uint64_t>>& lists, int k) {
    std::vector<std::vector<SearchHit>> ranked;
    for (const auto& l : lists) {
        std::vector<SearchHit> hits;
        for (size_t i = 0; i < l.size(); ++i) hits.push_back({l[i], f32(1.0 / f64(i + 1))});
        ranked.push_back(std::move(hits));
    }
    std::vector<uint64_t> out;
    for (const SearchHit& h : round_robin_merge(ranked, k)) out.push_back(h.id);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "synthetic multi-target retrieval laboratory";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        }
    });

    mod.def("gen_data", &gen_data_py, py::arg("config_text"), py::arg("out_dir"),
            "Generate dataset, corpus, and transform artifacts into a directory.");
    mod.def("train", &train_py, py::arg("config_text"), py::arg("data_dir"), py::arg("out_dir"),
            "Train per the config over a generated dataset; writes checkpoint and log.");
    mod.def("evaluate", &evaluate_py, py::arg("config_text"), py::arg("data_dir"),
            py::arg("corpus_path"), py::arg("checkpoint_path"), py::arg("mode"),
            py::arg("best") = true, "Score MRecall@k for a trained checkpoint.");
    mod.def("search", &search_py, py::arg("corpus_path"), py::arg("queries"), py::arg("k"),
            "Exact cosine top-k over a corpus file; returns (id, score) lists.");
    mod.def("hungarian", &hungarian_py, py::arg("cost"),
            "Minimum-cost assignment; returns (column per row, total cost).");
    mod.def("mrecall", &mrecall_py, py::arg("retrieved"), py::arg("relevant"), py::arg("k"),
            "Multi-target recall indicator at k.");
    mod.def("round_robin", &round_robin_py, py::arg("lists"), py::arg("k"),
            "Round-robin fusion of ranked id lists with dedup.");
    mod.def("normalize", [](const Vec& v) { return normalize(v); }, py::arg("v"),
            "Scale a vector to unit L2 norm.");
    mod.def("lr_at", &lr_at, py::arg("step"), py::arg("total"), py::arg("peak"),
            py::arg("warmup_frac"), "Warmup then linear-decay learning rate.");
    mod.def("sampling_p", &sampling_p, py::arg("step"), py::arg("total"),
            "Scheduled-sampling feedback probability, clipped at 0.8.");
    mod.def("default_config", [] { return serialize_config(FullConfig{}); },
            "Canonical serialized defaults.");
}

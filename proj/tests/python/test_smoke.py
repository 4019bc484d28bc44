"""End-to-end smoke test for the amerlab python module.

Run directly (no pytest): python test_smoke.py with PYTHONPATH pointing at
the built package. Exercises the bound pipeline on a seconds-long recipe and
pins exact values for the pure utility functions.
"""

import filecmp
import math
import os
import tempfile

import amerlab

SMOKE_CFG = """
[data]
setting = multi
transform = linear
d = 8
m = 2
n_train = 30
n_test = 10
corpus_size = 120
seed = 5

[model]
hidden = 16
layers = 1
heads = 2
mlp_hidden = 32

[train]
steps = 4
batch_size = 4
seed = 9
checkpoint_interval = 2

[eval]
ks = 3,10
mmr_lambdas = 0.5,1.0
mmr_pool = 20
n_bins = 2
"""


def expect_value_error(fn, label):
    try:
        fn()
    except ValueError:
        return
    raise AssertionError(f"{label}: expected ValueError")


def test_default_config():
    text = amerlab.default_config()
    assert isinstance(text, str)
    for section in ("[data]", "[model]", "[train]", "[eval]"):
        assert section in text, f"missing {section}"
    assert "steps = " in text


def test_utilities():
    cols, total = amerlab.hungarian([[0.0, 1.0], [1.0, 0.0]])
    assert cols == [0, 1] and total == 0.0
    cols, total = amerlab.hungarian([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert sorted(cols) == [0, 1, 2], f"not a permutation: {cols}"
    assert total == 5.0, f"expected optimum 5, got {total}"

    # k >= m: every target must appear in the top k.
    assert amerlab.mrecall([1, 2, 3, 4], [1, 2], 2)
    assert not amerlab.mrecall([1, 2, 3, 4], [1, 5], 4)
    # k < m: at least k of the targets must appear.
    assert amerlab.mrecall([7, 8, 9], [7, 8, 9, 10], 2)
    assert not amerlab.mrecall([7, 11, 9], [7, 8, 9, 10], 2)

    assert amerlab.round_robin([[0, 1, 2], [10, 11, 12]], 4) == [0, 10, 1, 11]
    # A duplicate yields nothing from its list that round.
    assert amerlab.round_robin([[0, 1], [0, 2]], 3) == [0, 1, 2]

    unit = amerlab.normalize([3.0, 4.0])
    assert abs(unit[0] - 0.6) < 1e-6 and abs(unit[1] - 0.8) < 1e-6
    assert abs(sum(x * x for x in unit) - 1.0) < 1e-6

    assert amerlab.lr_at(0, 100, 0.1, 0.1) == 0.0
    assert amerlab.lr_at(10, 100, 0.1, 0.1) == 0.1
    assert abs(amerlab.lr_at(55, 100, 0.1, 0.1) - 0.05) < 1e-15
    assert amerlab.lr_at(100, 100, 0.1, 0.1) == 0.0

    assert amerlab.sampling_p(0, 5000) == 0.0
    assert amerlab.sampling_p(2000, 5000) == 0.4
    assert amerlab.sampling_p(5000, 5000) == 0.8
    assert amerlab.sampling_p(4000, 5000) == 0.8


def check_report(rep, mode, n_queries):
    assert rep["mode"] == mode, f"mode {rep['mode']} != {mode}"
    assert rep["n_queries"] == n_queries
    cells = rep["cells"]
    # One overall row (bin -1) plus one row per diversity bin, for each k.
    assert len(cells) == 2 * 3, f"expected 6 cells, got {len(cells)}"
    for k in (3, 10):
        rows = [c for c in cells if c["k"] == k]
        assert sorted(c["bin"] for c in rows) == [-1, 0, 1]
        for c in rows:
            assert 0.0 <= c["mrecall"] <= 1.0
        overall = next(c for c in rows if c["bin"] == -1)
        assert overall["n_queries"] == n_queries
        assert sum(c["n_queries"] for c in rows if c["bin"] >= 0) == n_queries
    assert "div_metric" in rep["info"]


def test_pipeline(tmp):
    data = os.path.join(tmp, "data")
    info = amerlab.gen_data(SMOKE_CFG, data)
    assert info["train"] == 27 and info["val"] == 3 and info["test"] == 10
    assert info["corpus"] == 120 and info["targets"] == 80
    for name in ("train.bin", "val.bin", "test.bin", "corpus.bin", "transforms.bin"):
        assert os.path.exists(os.path.join(data, name)), f"missing {name}"

    data2 = os.path.join(tmp, "data2")
    amerlab.gen_data(SMOKE_CFG, data2)
    assert filecmp.cmp(os.path.join(data, "corpus.bin"),
                       os.path.join(data2, "corpus.bin"), shallow=False)

    run = os.path.join(tmp, "run")
    out = amerlab.train(SMOKE_CFG, data, run)
    assert out["steps"] == 4
    assert 0 <= out["best_step"] <= 4
    assert math.isfinite(out["best_val"])
    # The terminal log row records only val loss, so final_loss may be NaN.
    assert "final_loss" in out
    ckpt = os.path.join(run, "checkpoint.bin")
    assert os.path.exists(ckpt)
    log_lines = open(os.path.join(run, "train_log.csv")).read().splitlines()
    assert len(log_lines) == 6 and log_lines[0] == "step,loss,val_loss,lr,p"

    run2 = os.path.join(tmp, "run2")
    amerlab.train(SMOKE_CFG, data, run2)
    assert filecmp.cmp(ckpt, os.path.join(run2, "checkpoint.bin"), shallow=False)

    corpus = os.path.join(data, "corpus.bin")
    rep = amerlab.evaluate(SMOKE_CFG, data, corpus, ckpt, "amer")
    check_report(rep, "amer", 10)
    assert "output_diversity_sim" in rep["info"]

    # Single-query eval modes need a checkpoint that emits one embedding.
    sq_cfg = SMOKE_CFG.replace("[train]", "[train]\nmode = single_query")
    sq_run = os.path.join(tmp, "sq_run")
    amerlab.train(sq_cfg, data, sq_run)
    sq_ckpt = os.path.join(sq_run, "checkpoint.bin")
    rep = amerlab.evaluate(sq_cfg, data, corpus, sq_ckpt, "single_query", best=False)
    check_report(rep, "single_query", 10)
    rep = amerlab.evaluate(sq_cfg, data, corpus, sq_ckpt, "single_query_mmr")
    check_report(rep, "single_query_mmr", 10)
    assert "run_lambda" in rep["info"]
    expect_value_error(lambda: amerlab.evaluate(SMOKE_CFG, data, corpus, ckpt, "single_query"),
                       "multi-embedding checkpoint under single-query mode")

    q = amerlab.normalize([float(i + 1) for i in range(8)])
    hits = amerlab.search(corpus, [q], 5)
    assert len(hits) == 1 and len(hits[0]) == 5
    ids = [h[0] for h in hits[0]]
    scores = [h[1] for h in hits[0]]
    assert len(set(ids)) == 5 and all(0 <= i < 120 for i in ids)
    assert scores == sorted(scores, reverse=True)
    assert all(abs(s) <= 1.0 + 1e-5 for s in scores)
    assert amerlab.search(corpus, [q], 5) == hits
    full = amerlab.search(corpus, [q], 120)[0]
    assert sorted(h[0] for h in full) == list(range(120))

    expect_value_error(lambda: amerlab.gen_data("[data]\nm = 0\n", os.path.join(tmp, "x")),
                       "invalid config")
    expect_value_error(lambda: amerlab.train(SMOKE_CFG, os.path.join(tmp, "nodata"),
                                             os.path.join(tmp, "y")),
                       "missing data dir")
    expect_value_error(lambda: amerlab.evaluate(SMOKE_CFG, data, corpus, ckpt, "bogus"),
                       "unknown mode")
    expect_value_error(lambda: amerlab.search(corpus, [[1.0, 2.0]], 5),
                       "query dim mismatch")


def main():
    test_default_config()
    print("default_config: ok")
    test_utilities()
    print("utilities: ok")
    with tempfile.TemporaryDirectory(prefix="amerlab_smoke_") as tmp:
        test_pipeline(tmp)
    print("pipeline: ok")
    print("smoke: all checks passed")


if __name__ == "__main__":
    main()

#include <cmath>
#include <numeric>
#include <vector>

#include "amer/config.hpp"
#include "amer/error.hpp"
#include "amer/rng.hpp"
#include "amer/synthgen.hpp"
#include "amer/trainer.hpp"
#include "amer/vec.hpp"
#include "doctest.h"

using namespace amer;

namespace {

Mat64 random_unit_rows64(int n, int d, RngStream rng) {
    Mat64 out(n, d);
    for (int i = 0; i < n; ++i) {
        RngStream r = rng.derive(size_t(i));
        f64 s = 0.0;
        for (int j = 0; j < d; ++j) {
            out.at(i, j) = r.gaussian();
            s += out.at(i, j) * out.at(i, j);
        }
        const f64 norm = std::sqrt(s);
        for (int j = 0; j < d; ++j) out.at(i, j) /= norm;
    }
    return out;
}

f64 hand_infonce(const Mat64& pool, const f64* pred, int d, int positive, f64 tau) {
    std::vector<f64> sims(size_t(pool.rows));
    for (int c = 0; c < pool.rows; ++c) {
        f64 s = 0.0;
        for (int j = 0; j < d; ++j) s += pred[j] * pool.at(c, j);
        sims[size_t(c)] = s;
    }
    return infonce(sims, size_t(positive), tau);
}

FullConfig tiny_train_config() {
    FullConfig cfg;
    cfg.data.setting = Setting::MultiInDist;
    cfg.data.transform = TransformKind::Linear;
    cfg.data.d = 8;
    cfg.data.m = 2;
    cfg.data.n_train = 40;
    cfg.data.n_test = 10;
    cfg.data.seed = 3;
    cfg.model.hidden = 16;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.mlp_hidden = 32;
    cfg.train.steps = 6;
    cfg.train.batch_size = 4;
    cfg.train.checkpoint_interval = 3;
    cfg.train.lr = 1e-3;
    cfg.train.tau = 0.05;
    cfg.train.seed = 11;
    return cfg;
}

SyntheticDataset tiny_dataset(const FullConfig& cfg) {
    return build_dataset(cfg.data.setting, cfg.data.transform, cfg.data.n_train, cfg.data.n_test,
                         cfg.data.d, cfg.data.m, cfg.data.seed)
        .dataset;
}

}  // namespace

TEST_CASE("infonce matches hand values") {
    std::vector<f64> two{1.0, 0.0};
    CHECK(infonce(two, 0, 1.0) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

    std::vector<f64> one{0.37};
    CHECK(infonce(one, 0, 0.05) == 0.0);

    std::vector<f64> uniform(7, 0.25);
    CHECK(infonce(uniform, 3, 0.05) == doctest::Approx(std::log(7.0)).epsilon(1e-12));

    CHECK_THROWS_AS((void)infonce(two, 2, 1.0), Error);
    CHECK_THROWS_AS((void)infonce(two, 0, 0.0), Error);
}

TEST_CASE("batch loss vanishes for a single-document pool") {
    const int d = 4;
    Mat64 preds(1, d), targets(1, d);
    preds.at(0, 0) = 1.0;
    targets.at(0, 0) = 1.0;
    Mat64 negatives(0, d);
    auto res = batch_loss(preds, 1, 1, targets, negatives, 0.05, false);
    CHECK(res.loss == 0.0);
    CHECK(res.pool_size == 1);
    REQUIRE(res.matching.size() == 1);
    CHECK(res.matching[0] == std::vector<int>{0});
}

TEST_CASE("optimal matching beats every forced permutation") {
    const int b = 2, m = 2, d = 8;
    const f64 tau = 0.05;
    Mat64 targets = random_unit_rows64(b * m, d, RngStream(81, 0));
    Mat64 preds = targets;  // perfect predictions, slot order intact
    Mat64 negatives(0, d);

    auto res = batch_loss(preds, b, m, targets, negatives, tau, false);
    for (const auto& match : res.matching) CHECK(match == std::vector<int>{0, 1});

    // Evaluate every per-example permutation combination by hand.
    f64 best = 1e300;
    f64 worst = -1e300;
    for (int pa = 0; pa < 2; ++pa) {
        for (int pb = 0; pb < 2; ++pb) {
            const int perm_of[2][2] = {{0, 1}, {1, 0}};
            f64 total = 0.0;
            for (int i = 0; i < b; ++i) {
                const int* perm = perm_of[i == 0 ? pa : pb];
                for (int p = 0; p < m; ++p) {
                    const int slot = perm[p];
                    total += hand_infonce(targets, preds.row(i * m + p), d, i * m + slot, tau);
                }
            }
            total /= f64(b * m);
            best = std::min(best, total);
            worst = std::max(worst, total);
        }
    }
    CHECK(res.loss == doctest::Approx(best).epsilon(1e-10));
    CHECK(res.loss + 1e-6 < worst);
}

TEST_CASE("pool counts positives plus paired negatives") {
    const int b = 128, m = 5, d = 8;
    Mat64 preds = random_unit_rows64(b * m, d, RngStream(82, 0));
    Mat64 targets = random_unit_rows64(b * m, d, RngStream(83, 0));
    Mat64 negatives = random_unit_rows64(b * m, d, RngStream(84, 0));
    auto res = batch_loss(preds, b, m, targets, negatives, 0.05, false);
    CHECK(res.pool_size == 1280);
    CHECK(res.loss >= 0.0);
}

TEST_CASE("batch loss is invariant to per-example slot shuffles") {
    const int b = 4, m = 3, d = 8;
    const f64 tau = 0.05;
    RngStream rng(85, 0);
    for (int trial = 0; trial < 100; ++trial) {
        RngStream t = rng.derive(size_t(trial));
        Mat64 preds = random_unit_rows64(b * m, d, t.derive("p"));
        Mat64 targets = random_unit_rows64(b * m, d, t.derive("t"));
        Mat64 negatives = random_unit_rows64(b * m, d, t.derive("n"));

        Mat64 shuffled = targets;
        RngStream s = t.derive("shuffle");
        for (int i = 0; i < b; ++i) {
            std::vector<int> perm(static_cast<size_t>(m));
            std::iota(perm.begin(), perm.end(), 0);
            for (int j = m; j > 1; --j)
                std::swap(perm[size_t(j - 1)], perm[size_t(s.below(uint64_t(j)))]);
            for (int p = 0; p < m; ++p)
                for (int j = 0; j < d; ++j)
                    shuffled.at(i * m + p, j) = targets.at(i * m + perm[size_t(p)], j);
        }

        const f64 a = batch_loss(preds, b, m, targets, negatives, tau, false).loss;
        const f64 c = batch_loss(preds, b, m, shuffled, negatives, tau, false).loss;
        CHECK(std::abs(a - c) < 1e-5);
    }
}

TEST_CASE("batch loss gradients match finite differences") {
    const int b = 2, m = 2, d = 4;
    const f64 tau = 0.1;
    Mat64 preds = random_unit_rows64(b * m, d, RngStream(86, 0));
    Mat64 targets = random_unit_rows64(b * m, d, RngStream(87, 0));
    Mat64 negatives = random_unit_rows64(b * m, d, RngStream(88, 0));

    auto res = batch_loss(preds, b, m, targets, negatives, tau, true);
    REQUIRE(res.dpreds.rows == b * m);
    REQUIRE(res.dpreds.cols == d);

    const f64 eps = 1e-6;
    for (int r = 0; r < b * m; ++r) {
        for (int c = 0; c < d; ++c) {
            Mat64 up = preds, dn = preds;
            up.at(r, c) += eps;
            dn.at(r, c) -= eps;
            const f64 fd = (batch_loss(up, b, m, targets, negatives, tau, false).loss -
                            batch_loss(dn, b, m, targets, negatives, tau, false).loss) /
                           (2.0 * eps);
            const f64 g = res.dpreds.at(r, c);
            CHECK(std::abs(g - fd) / std::max(1e-8, std::abs(g) + std::abs(fd)) < 1e-5);
        }
    }
}

TEST_CASE("single query loss gradients match finite differences") {
    const int b = 3, d = 4;
    const f64 tau = 0.1;
    Mat64 preds = random_unit_rows64(b, d, RngStream(89, 0));
    Mat64 positives = random_unit_rows64(b, d, RngStream(90, 0));
    Mat64 negatives = random_unit_rows64(b, d, RngStream(91, 0));

    auto res = single_query_loss(preds, positives, negatives, tau, true);
    CHECK(res.pool_size == 6);
    const f64 eps = 1e-6;
    for (int r = 0; r < b; ++r) {
        for (int c = 0; c < d; ++c) {
            Mat64 up = preds, dn = preds;
            up.at(r, c) += eps;
            dn.at(r, c) -= eps;
            const f64 fd = (single_query_loss(up, positives, negatives, tau, false).loss -
                            single_query_loss(dn, positives, negatives, tau, false).loss) /
                           (2.0 * eps);
            const f64 g = res.dpreds.at(r, c);
            CHECK(std::abs(g - fd) / std::max(1e-8, std::abs(g) + std::abs(fd)) < 1e-5);
        }
    }
}

TEST_CASE("sampled-positive loss dominates matched loss on antipodal targets") {
    const int d = 6;
    const f64 tau = 0.05;
    Vec y(static_cast<size_t>(d), 0.0f);
    y[0] = 1.0f;

    Mat64 matched_preds(2, d), matched_targets(2, d);
    for (int j = 0; j < d; ++j) {
        matched_preds.at(0, j) = f64(y[size_t(j)]);
        matched_preds.at(1, j) = -f64(y[size_t(j)]);
        matched_targets.at(0, j) = f64(y[size_t(j)]);
        matched_targets.at(1, j) = -f64(y[size_t(j)]);
    }
    Mat64 no_negs(0, d);
    const f64 matched = batch_loss(matched_preds, 1, 2, matched_targets, no_negs, tau, false).loss;
    CHECK(matched < 1e-6);

    // Single-query baseline: prediction fixed at y, positive drawn uniformly
    // from the antipodal pair, the other target acting as the negative.
    RngStream rng(92, 0);
    f64 total = 0.0;
    const int draws = 2000;
    for (int i = 0; i < draws; ++i) {
        const bool flip = rng.below(2) == 1;
        Mat64 pred(1, d), pos(1, d), neg(1, d);
        for (int j = 0; j < d; ++j) {
            pred.at(0, j) = f64(y[size_t(j)]);
            pos.at(0, j) = (flip ? -1.0 : 1.0) * f64(y[size_t(j)]);
            neg.at(0, j) = (flip ? 1.0 : -1.0) * f64(y[size_t(j)]);
        }
        total += single_query_loss(pred, pos, neg, tau, false).loss;
    }
    const f64 mc_mean = total / f64(draws);
    CHECK(mc_mean > matched + 1.0);
}

TEST_CASE("learning rate schedule hits the pinned points") {
    const int64_t total = 1000;
    const f64 peak = 3e-3;
    const f64 wf = 0.05;  // warmup ends at step 50
    CHECK(lr_at(0, total, peak, wf) == 0.0);
    CHECK(lr_at(50, total, peak, wf) == doctest::Approx(peak).epsilon(1e-12));
    CHECK(lr_at(1000, total, peak, wf) == doctest::Approx(0.0).scale(1e-12));
    CHECK(lr_at(25, total, peak, wf) == doctest::Approx(peak / 2).epsilon(1e-12));
    CHECK(lr_at(525, total, peak, wf) == doctest::Approx(peak / 2).epsilon(1e-12));

    f64 prev = -1.0;
    for (int64_t s = 0; s <= 50; ++s) {
        const f64 lr = lr_at(s, total, peak, wf);
        CHECK(lr >= prev);
        prev = lr;
    }
    for (int64_t s = 50; s <= 1000; ++s) {
        const f64 lr = lr_at(s, total, peak, wf);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
}

TEST_CASE("sampling probability is the capped linear ramp") {
    CHECK(sampling_p(0, 1000) == 0.0);
    CHECK(sampling_p(400, 1000) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(sampling_p(1000, 1000) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(sampling_p(800, 1000) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(sampling_p(2000, 1000) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(sampling_p(799, 1000) < 0.8);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    FullConfig cfg = tiny_train_config();
    ModelConfig mc = model_config_of(cfg);
    Model<f32> model(mc);
    model.init(RngStream(13, 0));
    RngStream g(14, 0);
    for (auto& grad : model.grads)
        for (auto& v : grad.data) v = f32(g.gaussian());

    AdamState state;
    for (const auto& p : model.params) {
        state.m.emplace_back(p.rows, p.cols);
        state.v.emplace_back(p.rows, p.cols);
    }
    const auto before = model.flat();
    adamw_step(model, state, cfg.train, 0.0);
    CHECK(model.flat() == before);
    CHECK(state.t == 1);
}

TEST_CASE("training is deterministic and logs the schedules") {
    FullConfig cfg = tiny_train_config();
    SyntheticDataset ds = tiny_dataset(cfg);
    TrainResult a = train(cfg, ds);
    TrainResult b = train(cfg, ds);

    REQUIRE(a.log.size() == b.log.size());
    // Rows 0..steps-1 train, plus one final validation-only row.
    REQUIRE(a.log.size() == size_t(cfg.train.steps) + 1);
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].step == b.log[i].step);
        CHECK((a.log[i].loss == b.log[i].loss ||
               (std::isnan(a.log[i].loss) && std::isnan(b.log[i].loss))));
        CHECK((a.log[i].val_loss == b.log[i].val_loss ||
               (std::isnan(a.log[i].val_loss) && std::isnan(b.log[i].val_loss))));
        CHECK(a.log[i].lr == b.log[i].lr);
        CHECK(a.log[i].p == b.log[i].p);
    }
    CHECK(a.model.flat() == b.model.flat());
    CHECK(a.best.flat() == b.best.flat());
    CHECK(a.best_step == b.best_step);

    for (int64_t s = 0; s < cfg.train.steps; ++s) {
        const LogRow& row = a.log[size_t(s)];
        CHECK(row.step == s);
        CHECK(std::isfinite(row.loss));
        CHECK(row.lr == lr_at(s, cfg.train.steps, cfg.train.lr, cfg.train.warmup_frac));
        CHECK(row.p == sampling_p(s, cfg.train.steps));
        const bool ckpt = s % cfg.train.checkpoint_interval == 0;
        CHECK(std::isfinite(row.val_loss) == ckpt);
    }
    const LogRow& last = a.log.back();
    CHECK(last.step == cfg.train.steps);
    CHECK(std::isnan(last.loss));
    CHECK(std::isfinite(last.val_loss));
    CHECK(a.best_step % cfg.train.checkpoint_interval == 0);
    CHECK(std::isfinite(a.best_val));

    // The best checkpoint carries the minimum logged validation loss.
    f64 min_val = std::numeric_limits<f64>::infinity();
    for (const auto& row : a.log)
        if (std::isfinite(row.val_loss)) min_val = std::min(min_val, row.val_loss);
    CHECK(a.best_val == min_val);
}

TEST_CASE("zero steps returns the initial model and an empty log") {
    FullConfig cfg = tiny_train_config();
    cfg.train.steps = 0;
    SyntheticDataset ds = tiny_dataset(cfg);
    TrainResult res = train(cfg, ds);
    CHECK(res.log.empty());
    CHECK(res.model.flat() == res.best.flat());

    ModelConfig mc = model_config_of(cfg);
    Model<f32> fresh(mc);
    fresh.init(RngStream(cfg.train.seed, 1).derive("init"));
    CHECK(res.model.flat() == fresh.flat());
}

TEST_CASE("single-query mode trains a one-emission model") {
    FullConfig cfg = tiny_train_config();
    cfg.train.mode = TrainMode::SingleQuery;
    cfg.train.steps = 2;
    CHECK(model_config_of(cfg).m == 1);
    SyntheticDataset ds = tiny_dataset(cfg);
    TrainResult res = train(cfg, ds);
    CHECK(res.model.cfg.m == 1);
    CHECK(res.log.size() == 3);
}

TEST_CASE("diverging loss raises an error") {
    FullConfig cfg = tiny_train_config();
    cfg.train.lr = 1e8;
    cfg.train.warmup_frac = 0.0;
    cfg.train.steps = 30;
    SyntheticDataset ds = tiny_dataset(cfg);
    try {
        (void)train(cfg, ds);
        FAIL("expected DivergedLoss");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DivergedLoss);
    }
}

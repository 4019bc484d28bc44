#include "amer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "amer/assignment.hpp"
#include "amer/blas.hpp"
#include "amer/error.hpp"

namespace amer {
namespace {

// lse of one similarity row (already divided by tau).
f64 logsumexp(const f64* s, size_t n) {
    f64 mx = s[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, s[i]);
    f64 z = 0.0;
    for (size_t i = 0; i < n; ++i) z += std::exp(s[i] - mx);
    return mx + std::log(z);
}

Mat64 concat_rows(const Mat64& a, const Mat64& b) {
    if (b.rows == 0) return a;
    Mat64 out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

// S = preds * pool^T / tau, f64.
Mat64 scaled_sims(const Mat64& preds, const Mat64& pool, f64 tau) {
    Mat64 s(preds.rows, pool.rows);
    if (preds.rows == 0 || pool.rows == 0) return s;
    gemm_f64(false, true, preds.rows, pool.rows, preds.cols, 1.0 / tau, preds.data.data(),
             preds.cols, pool.data.data(), pool.cols, 0.0, s.data.data(), s.cols);
    return s;
}

// Fills dpreds = (softmax(S) - onehot(positive)) * pool / (tau * n_preds).
void infonce_grad(const Mat64& sims, const std::vector<f64>& lse,
                  const std::vector<size_t>& positive, const Mat64& pool, f64 tau,
                  Mat64& dpreds) {
    const int rows = sims.rows, cols = sims.cols;
    Mat64 soft(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const f64* s = sims.row(r);
        f64* o = soft.row(r);
        for (int c = 0; c < cols; ++c) o[c] = std::exp(s[c] - lse[size_t(r)]);
        o[positive[size_t(r)]] -= 1.0;
    }
    dpreds = Mat64(rows, pool.cols);
    const f64 alpha = 1.0 / (tau * f64(rows));
    gemm_f64(false, false, rows, pool.cols, cols, alpha, soft.data.data(), cols,
             pool.data.data(), pool.cols, 0.0, dpreds.data.data(), dpreds.cols);
}

}  // namespace

f64 infonce(std::span<const f64> sims, size_t positive, f64 tau) {
    require(!sims.empty(), Errc::EmptyTargets, "infonce: empty similarity list");
    require(positive < sims.size(), Errc::PositiveNotInBatch, "infonce: positive out of range");
    require(tau > 0.0, Errc::InvalidConfig, "infonce: tau must be positive");
    std::vector<f64> scaled(sims.size());
    for (size_t i = 0; i < sims.size(); ++i) scaled[i] = sims[i] / tau;
    return logsumexp(scaled.data(), scaled.size()) - scaled[positive];
}

f64 lr_at(int64_t step, int64_t total, f64 peak, f64 warmup_frac) {
    require(total >= 0 && step >= 0 && step <= total, Errc::InvalidConfig, "lr_at: bad step");
    if (total == 0) return 0.0;
    const int64_t warm = std::clamp<int64_t>(int64_t(std::llround(warmup_frac * f64(total))), 0,
                                             total);
    if (step < warm) return peak * f64(step) / f64(warm);
    if (total == warm) return peak;
    return peak * f64(total - step) / f64(total - warm);
}

f64 sampling_p(int64_t step, int64_t total) {
    require(step >= 0 && total >= 0, Errc::InvalidConfig, "sampling_p: bad step");
    if (total == 0) return 0.0;
    return std::min(0.8, f64(step) / f64(total));
}

BatchLossResult batch_loss(const Mat64& preds, int b, int m, const Mat64& targets,
                           const Mat64& negatives, f64 tau, bool want_grad) {
    require(b >= 1 && m >= 1, Errc::InvalidConfig, "batch_loss: b and m must be positive");
    require(preds.rows == b * m && targets.rows == b * m, Errc::ShapeMismatch,
            "batch_loss: need b*m prediction and target rows");
    require(preds.cols == targets.cols, Errc::DimMismatch, "batch_loss: dimension mismatch");
    require(negatives.rows == 0 || negatives.cols == preds.cols, Errc::DimMismatch,
            "batch_loss: negative dimension mismatch");
    require(tau > 0.0, Errc::InvalidConfig, "batch_loss: tau must be positive");

    const Mat64 pool = concat_rows(targets, negatives);
    const Mat64 sims = scaled_sims(preds, pool, tau);
    const int rows = sims.rows;

    std::vector<f64> lse(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) lse[size_t(r)] = logsumexp(sims.row(r), size_t(sims.cols));

    BatchLossResult res;
    res.pool_size = size_t(pool.rows);
    std::vector<size_t> positive(static_cast<size_t>(rows));
    f64 total = 0.0;
    for (int i = 0; i < b; ++i) {
        CostMatrix cost(m);
        for (int p = 0; p < m; ++p)
            for (int j = 0; j < m; ++j) cost.at(p, j) = -sims.at(i * m + p, i * m + j);
        Matching match = hungarian(cost);
        res.matching.push_back(match.target_of);
        for (int p = 0; p < m; ++p) {
            const int r = i * m + p;
            const size_t pos = size_t(i * m + match.target_of[size_t(p)]);
            positive[size_t(r)] = pos;
            total += lse[size_t(r)] - sims.at(r, int(pos));
        }
    }
    res.loss = total / f64(rows);
    if (want_grad) infonce_grad(sims, lse, positive, pool, tau, res.dpreds);
    return res;
}

BatchLossResult single_query_loss(const Mat64& preds, const Mat64& positives,
                                  const Mat64& negatives, f64 tau, bool want_grad) {
    require(preds.rows == positives.rows && preds.rows >= 1, Errc::ShapeMismatch,
            "single_query_loss: need one positive per prediction");
    require(preds.cols == positives.cols, Errc::DimMismatch,
            "single_query_loss: dimension mismatch");
    require(negatives.rows == 0 || negatives.cols == preds.cols, Errc::DimMismatch,
            "single_query_loss: negative dimension mismatch");
    require(tau > 0.0, Errc::InvalidConfig, "single_query_loss: tau must be positive");

    const Mat64 pool = concat_rows(positives, negatives);
    const Mat64 sims = scaled_sims(preds, pool, tau);
    const int rows = sims.rows;

    std::vector<f64> lse(static_cast<size_t>(rows));
    std::vector<size_t> positive(static_cast<size_t>(rows));
    f64 total = 0.0;
    for (int r = 0; r < rows; ++r) {
        lse[size_t(r)] = logsumexp(sims.row(r), size_t(sims.cols));
        positive[size_t(r)] = size_t(r);
        total += lse[size_t(r)] - sims.at(r, r);
    }
    BatchLossResult res;
    res.pool_size = size_t(pool.rows);
    res.loss = total / f64(rows);
    if (want_grad) infonce_grad(sims, lse, positive, pool, tau, res.dpreds);
    return res;
}

namespace {

template <class Real>
Mat64 to_f64(const TMat<Real>& m) {
    Mat64 out(m.rows, m.cols);
    for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = f64(m.data[i]);
    return out;
}

Mat64 rows_to_mat(const std::vector<std::vector<f64>>& rows, int d) {
    Mat64 out(int(rows.size()), d);
    for (size_t i = 0; i < rows.size(); ++i) {
        require(int(rows[i].size()) == d, Errc::DimMismatch, "negative row dimension");
        std::copy(rows[i].begin(), rows[i].end(), out.row(int(i)));
    }
    return out;
}

}  // namespace

template <class Real>
f64 model_step_loss(Model<Real>& model, const TrainBatch<Real>& batch, const BatchDraws& draws,
                    TrainMode mode, f64 tau, bool with_grads) {
    const int b = batch.inputs.rows;
    const int m = model.cfg.m;
    const int d = model.cfg.d;

    if (mode == TrainMode::SingleQuery)
        require(m == 1, Errc::InvalidConfig, "model_step_loss: SingleQuery expects m == 1");

    const bool amer = mode == TrainMode::Amer;
    auto fwd = forward_batch(model, batch.inputs, amer ? batch.teacher : std::vector<TMat<Real>>{},
                             amer ? draws.use_pred : std::vector<std::vector<uint8_t>>{},
                             with_grads);

    Mat64 preds(b * m, d);
    for (int t = 0; t < m; ++t) {
        const TMat<Real>& e = fwd.emission(t);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < d; ++j) preds.at(i * m + t, j) = f64(e.at(i, j));
    }
    const Mat64 negatives = rows_to_mat(draws.negatives, d);

    BatchLossResult res;
    if (amer) {
        require(int(batch.teacher.size()) == m, Errc::CountMismatch,
                "model_step_loss: teacher count");
        Mat64 targets(b * m, d);
        for (int j = 0; j < m; ++j) {
            const TMat<Real>& tj = batch.teacher[size_t(j)];
            for (int i = 0; i < b; ++i)
                for (int k = 0; k < d; ++k) targets.at(i * m + j, k) = f64(tj.at(i, k));
        }
        res = batch_loss(preds, b, m, targets, negatives, tau, with_grads);
    } else {
        res = single_query_loss(preds, to_f64(batch.positives), negatives, tau, with_grads);
    }

    if (with_grads) {
        for (int t = 0; t < m; ++t) {
            std::vector<f64> seed(size_t(b) * size_t(d));
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < d; ++j)
                    seed[size_t(i) * size_t(d) + size_t(j)] = res.dpreds.at(i * m + t, j);
            fwd.tape->add_grad(fwd.emissions[size_t(t)], seed);
        }
        fwd.tape->backward();
    }
    return res.loss;
}

template f64 model_step_loss<f32>(Model<f32>&, const TrainBatch<f32>&, const BatchDraws&,
                                  TrainMode, f64, bool);
template f64 model_step_loss<f64>(Model<f64>&, const TrainBatch<f64>&, const BatchDraws&,
                                  TrainMode, f64, bool);

namespace {

bool decays(const std::string& name) {
    if (name == "pos") return false;
    if (name.ends_with(".g")) return false;
    auto tail = name.substr(name.rfind('.') + 1);
    return !tail.empty() && tail[0] == 'w';
}

}  // namespace

void adamw_step(Model<f32>& model, AdamState& state, const TrainCfg& cfg, f64 lr) {
    require(state.m.size() == model.params.size() && state.v.size() == model.params.size(),
            Errc::ShapeMismatch, "adamw_step: state does not match model");
    state.t += 1;
    const f64 bc1 = 1.0 - std::pow(cfg.beta1, f64(state.t));
    const f64 bc2 = 1.0 - std::pow(cfg.beta2, f64(state.t));
    for (size_t i = 0; i < model.params.size(); ++i) {
        TMat<f32>& p = model.params[i];
        const TMat<f32>& g = model.grads[i];
        TMat<f32>& m = state.m[i];
        TMat<f32>& v = state.v[i];
        const f64 wd = decays(model.names[i]) ? cfg.weight_decay : 0.0;
        for (size_t j = 0; j < p.data.size(); ++j) {
            const f64 gj = f64(g.data[j]);
            const f64 mj = cfg.beta1 * f64(m.data[j]) + (1.0 - cfg.beta1) * gj;
            const f64 vj = cfg.beta2 * f64(v.data[j]) + (1.0 - cfg.beta2) * gj * gj;
            m.data[j] = f32(mj);
            v.data[j] = f32(vj);
            const f64 update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
            p.data[j] = f32(f64(p.data[j]) - update - lr * wd * f64(p.data[j]));
        }
    }
}

ModelConfig model_config_of(const FullConfig& cfg) {
    ModelConfig mc;
    mc.d = cfg.data.d;
    mc.m = cfg.train.mode == TrainMode::Amer ? cfg.data.m : 1;
    mc.hidden = cfg.model.hidden;
    mc.layers = cfg.model.layers;
    mc.heads = cfg.model.heads;
    mc.mlp_hidden = cfg.model.mlp_hidden;
    mc.use_bias = cfg.model.use_bias;
    mc.detach_feedback = cfg.model.detach_feedback;
    return mc;
}

namespace {

struct BatchPlan {
    TrainBatch<f32> batch;
    BatchDraws draws;
};

std::vector<std::vector<f64>> draw_negatives(RngStream rng, size_t count, int d) {
    std::vector<std::vector<f64>> out(count);
    for (size_t i = 0; i < count; ++i) {
        std::vector<f64>& v = out[i];
        v.resize(size_t(d));
        f64 s = 0.0;
        for (auto& x : v) {
            x = rng.gaussian();
            s += x * x;
        }
        const f64 n = std::sqrt(s);
        require(n > 1e-12, Errc::ZeroVector, "draw_negatives: zero vector");
        for (auto& x : v) x /= n;
    }
    return out;
}

std::vector<std::vector<uint8_t>> draw_masks(RngStream rng, SamplingPolicy policy, f64 p, int m,
                                             int b) {
    std::vector<std::vector<uint8_t>> masks;
    for (int t = 1; t < m; ++t) {
        std::vector<uint8_t> row(size_t(b), 0);
        for (int i = 0; i < b; ++i) {
            switch (policy) {
                case SamplingPolicy::TeacherForced: row[size_t(i)] = 0; break;
                case SamplingPolicy::AlwaysPredicted: row[size_t(i)] = 1; break;
                case SamplingPolicy::Scheduled: row[size_t(i)] = rng.uniform() < p ? 1 : 0; break;
            }
        }
        masks.push_back(std::move(row));
    }
    return masks;
}

BatchPlan make_batch(const FullConfig& cfg, const std::vector<Record>& records,
                     std::span<const int> idx, SamplingPolicy policy, f64 p, RngStream negatives,
                     RngStream feedback, RngStream slots, RngStream shuffle) {
    const int b = int(idx.size());
    const int d = cfg.data.d;
    const int m = cfg.data.m;
    const bool amer = cfg.train.mode == TrainMode::Amer;

    BatchPlan plan;
    plan.batch.inputs = TMat<f32>(b, d);
    for (int i = 0; i < b; ++i) {
        const Record& r = records[size_t(idx[size_t(i)])];
        std::copy(r.input.begin(), r.input.end(), plan.batch.inputs.row(i));
    }

    if (amer) {
        plan.batch.teacher.assign(size_t(m), TMat<f32>(b, d));
        std::vector<int> perm(static_cast<size_t>(m));
        for (int i = 0; i < b; ++i) {
            const Record& r = records[size_t(idx[size_t(i)])];
            std::iota(perm.begin(), perm.end(), 0);
            for (int j = m; j > 1; --j)
                std::swap(perm[size_t(j - 1)], perm[size_t(shuffle.below(uint64_t(j)))]);
            for (int j = 0; j < m; ++j) {
                Vec t = normalize(r.targets_raw[size_t(perm[size_t(j)])]);
                std::copy(t.begin(), t.end(), plan.batch.teacher[size_t(j)].row(i));
            }
        }
        plan.draws.use_pred = draw_masks(feedback, policy, p, m, b);
        plan.draws.negatives = draw_negatives(
            negatives, size_t(b) * size_t(m) * size_t(cfg.train.negatives_per_positive), d);
    } else {
        plan.batch.positives = TMat<f32>(b, d);
        for (int i = 0; i < b; ++i) {
            const Record& r = records[size_t(idx[size_t(i)])];
            const int slot = int(slots.below(uint64_t(m)));
            Vec t = normalize(r.targets_raw[size_t(slot)]);
            std::copy(t.begin(), t.end(), plan.batch.positives.row(i));
        }
        plan.draws.negatives = draw_negatives(
            negatives, size_t(b) * size_t(cfg.train.negatives_per_positive), d);
    }
    return plan;
}

std::vector<int> epoch_order(size_t n, RngStream rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = n; i > 1; --i) {
        const size_t j = size_t(rng.below(uint64_t(i)));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace

TrainResult train(const FullConfig& cfg, const SyntheticDataset& ds, const ProgressFn& progress) {
    validate_config(cfg);
    require(ds.d == cfg.data.d && ds.m == cfg.data.m, Errc::InvalidConfig,
            "train: dataset shape does not match config");
    require(!ds.train.empty(), Errc::InvalidConfig, "train: empty train split");

    const ModelConfig mcfg = model_config_of(cfg);
    RngStream root(cfg.train.seed, 1);

    TrainResult res{Model<f32>(mcfg), Model<f32>(mcfg)};
    res.model.init(root.derive("init"));
    res.adam.m.clear();
    res.adam.v.clear();
    for (const auto& p : res.model.params) {
        res.adam.m.emplace_back(p.rows, p.cols);
        res.adam.v.emplace_back(p.rows, p.cols);
    }

    const int64_t steps = cfg.train.steps;
    const f64 tau = cfg.train.tau;
    const TrainMode mode = cfg.train.mode;
    RngStream order_rng = root.derive("order");
    RngStream neg_rng = root.derive("negatives");
    RngStream fb_rng = root.derive("feedback");
    RngStream slot_rng = root.derive("slots");
    RngStream shuf_rng = root.derive("shuffle");
    RngStream vneg_rng = root.derive("val_negatives");
    RngStream vfb_rng = root.derive("val_feedback");
    RngStream vslot_rng = root.derive("val_slots");
    RngStream vshuf_rng = root.derive("val_shuffle");

    // Saturated or non-finite activations inside a step mean the optimizer
    // destroyed the model; surface that as divergence rather than a low-level
    // numeric error.
    auto guarded_step_loss = [&](Model<f32>& model, const TrainBatch<f32>& batch,
                                 const BatchDraws& draws, bool with_grads) -> f64 {
        try {
            return model_step_loss(model, batch, draws, mode, tau, with_grads);
        } catch (const Error& e) {
            if (e.code() == Errc::ZeroVector || e.code() == Errc::NonFinite ||
                e.code() == Errc::NonFiniteLoss)
                fail(Errc::DivergedLoss, std::string("train: optimization diverged (") + e.what() + ")");
            throw;
        }
    };

    auto val_loss_at = [&](int64_t step) -> f64 {
        const f64 p = sampling_p(step, steps);
        const SamplingPolicy policy = cfg.train.sampling;
        f64 total = 0.0;
        size_t count = 0;
        const size_t nb = size_t(cfg.train.batch_size);
        uint64_t bi = 0;
        for (size_t at = 0; at < ds.val.size(); at += nb, ++bi) {
            const size_t take = std::min(nb, ds.val.size() - at);
            std::vector<int> idx(take);
            std::iota(idx.begin(), idx.end(), int(at));
            BatchPlan plan = make_batch(cfg, ds.val, idx, policy, p,
                                        vneg_rng.derive(uint64_t(step)).derive(bi),
                                        vfb_rng.derive(uint64_t(step)).derive(bi),
                                        vslot_rng.derive(uint64_t(step)).derive(bi),
                                        vshuf_rng.derive(uint64_t(step)).derive(bi));
            const f64 l = guarded_step_loss(res.model, plan.batch, plan.draws, false);
            total += l * f64(take);
            count += take;
        }
        return count ? total / f64(count) : std::numeric_limits<f64>::quiet_NaN();
    };

    auto consider_best = [&](int64_t step, f64 vl) {
        if (!std::isfinite(vl)) return;
        if (res.best_step < 0 || vl < res.best_val) {
            res.best_val = vl;
            res.best_step = step;
            res.best.params = res.model.params;
        }
    };

    const bool has_val = !ds.val.empty();
    std::vector<int> order;
    size_t cursor = 0;
    uint64_t epoch = 0;

    for (int64_t step = 0; step < steps; ++step) {
        f64 vl = std::numeric_limits<f64>::quiet_NaN();
        if (has_val && step % cfg.train.checkpoint_interval == 0) {
            vl = val_loss_at(step);
            require(std::isfinite(vl), Errc::DivergedLoss,
                    "train: validation loss diverged at step " + std::to_string(step));
            consider_best(step, vl);
        }

        std::vector<int> idx;
        idx.reserve(size_t(cfg.train.batch_size));
        while (int(idx.size()) < cfg.train.batch_size) {
            if (cursor >= order.size()) {
                order = epoch_order(ds.train.size(), order_rng.derive(epoch++));
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }

        const f64 p = sampling_p(step, steps);
        BatchPlan plan = make_batch(cfg, ds.train, idx, cfg.train.sampling, p,
                                    neg_rng.derive(uint64_t(step)), fb_rng.derive(uint64_t(step)),
                                    slot_rng.derive(uint64_t(step)),
                                    shuf_rng.derive(uint64_t(step)));
        res.model.zero_grads();
        const f64 loss = guarded_step_loss(res.model, plan.batch, plan.draws, true);
        require(std::isfinite(loss), Errc::DivergedLoss,
                "train: loss diverged at step " + std::to_string(step));
        const f64 lr = lr_at(step, steps, cfg.train.lr, cfg.train.warmup_frac);
        adamw_step(res.model, res.adam, cfg.train, lr);

        LogRow row{step, loss, vl, lr, p};
        res.log.push_back(row);
        if (progress) progress(row);
    }

    if (steps > 0 && has_val) {
        const f64 vl = val_loss_at(steps);
        require(std::isfinite(vl), Errc::DivergedLoss, "train: final validation loss diverged");
        consider_best(steps, vl);
        LogRow row{steps, std::numeric_limits<f64>::quiet_NaN(), vl, 0.0,
                   sampling_p(steps, steps)};
        res.log.push_back(row);
        if (progress) progress(row);
    }
    if (res.best_step < 0) {
        res.best.params = res.model.params;
        res.best_step = steps;
    }
    return res;
}

}  // namespace amer

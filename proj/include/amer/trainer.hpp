#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "amer/config.hpp"
#include "amer/seqmodel.hpp"
#include "amer/synthgen.hpp"
#include "amer/vec.hpp"

namespace amer {

// -log( exp(sims[pos]/tau) / sum_c exp(sims[c]/tau) ), f64 logsumexp with
// max subtraction. sims are raw similarities.
f64 infonce(std::span<const f64> sims, size_t positive, f64 tau);

// Piecewise-linear schedule: warmup from 0 to peak over warmup_frac of the
// run, then linear decay to 0 at step == total.
f64 lr_at(int64_t step, int64_t total, f64 peak, f64 warmup_frac);

// Scheduled-sampling probability min(0.8, step / total).
f64 sampling_p(int64_t step, int64_t total);

struct BatchLossResult {
    f64 loss = 0.0;                          // mean over predictions
    size_t pool_size = 0;                    // |D_batch|
    Mat64 dpreds;                            // d(loss)/d(pred), when requested
    std::vector<std::vector<int>> matching;  // per example: slot of prediction p
};

// Optimal-matching InfoNCE over fixed predictions. preds and targets are
// b*m x d in example-major slot order; the pool is all target rows plus the
// negative rows. Prediction p of example i may match any slot j at cost
// -sim(pred, target_ij); the minimum-cost assignment (Hungarian) picks the
// positives and every prediction pays full InfoNCE against the pool.
BatchLossResult batch_loss(const Mat64& preds, int b, int m, const Mat64& targets,
                           const Mat64& negatives, f64 tau, bool want_grad);

// Standard InfoNCE for one prediction per example; positive of example i is
// row i of positives, pool is positives plus negatives.
BatchLossResult single_query_loss(const Mat64& preds, const Mat64& positives,
                                  const Mat64& negatives, f64 tau, bool want_grad);

template <class Real>
struct TrainBatch {
    TMat<Real> inputs;                // b x d
    std::vector<TMat<Real>> teacher;  // m normalized targets, slot order (Amer)
    TMat<Real> positives;             // b x d sampled targets (SingleQuery)
};

// Fixed stochastic draws so the step loss is a pure function of the
// parameters; the gradient check perturbs params under frozen draws.
struct BatchDraws {
    std::vector<std::vector<f64>> negatives;     // unit rows
    std::vector<std::vector<uint8_t>> use_pred;  // m - 1 feedback masks (Amer)
};

// Forward, loss, and (optionally) parameter gradients for one batch.
// Gradients accumulate into model.grads; callers zero them first.
template <class Real>
f64 model_step_loss(Model<Real>& model, const TrainBatch<Real>& batch, const BatchDraws& draws,
                    TrainMode mode, f64 tau, bool with_grads);

struct AdamState {
    std::vector<TMat<f32>> m, v;  // parallel to model params
    int64_t t = 0;
};

// Decoupled AdamW; weight decay applies to weight matrices only (gains,
// biases, and the position table are exempt).
void adamw_step(Model<f32>& model, AdamState& state, const TrainCfg& cfg, f64 lr);

struct LogRow {
    int64_t step = 0;
    f64 loss = std::numeric_limits<f64>::quiet_NaN();      // NaN on val-only rows
    f64 val_loss = std::numeric_limits<f64>::quiet_NaN();  // NaN off checkpoints
    f64 lr = 0.0;
    f64 p = 0.0;
};

struct TrainResult {
    Model<f32> model;  // final parameters
    Model<f32> best;   // lowest validation loss (final params when no val)
    f64 best_val = std::numeric_limits<f64>::quiet_NaN();
    int64_t best_step = -1;
    AdamState adam;
    std::vector<LogRow> log;
};

using ProgressFn = std::function<void(const LogRow&)>;

// Batches cycle through per-epoch derived shuffles of the train split.
// Validation runs every checkpoint_interval steps (incl. step 0) and after
// the final update, under the training feedback policy at that step. Throws
// DivergedLoss when a batch loss turns non-finite.
TrainResult train(const FullConfig& cfg, const SyntheticDataset& ds,
                  const ProgressFn& progress = {});

// Model shape implied by a full config (emission count depends on the mode).
ModelConfig model_config_of(const FullConfig& cfg);

}  // namespace amer

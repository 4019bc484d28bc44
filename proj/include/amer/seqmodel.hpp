#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "amer/rng.hpp"
#include "amer/tape.hpp"
#include "amer/vec.hpp"

namespace amer {

// Decoder-only transformer that reads the query input as token 0 and emits
// one unit embedding per position; emitted (or teacher) embeddings feed back
// as the next token. SingleQuery is the m = 1 instance.
struct ModelConfig {
    int d = 64;        // input and embedding dimension
    int m = 5;         // emissions per query
    int hidden = 128;  // transformer width
    int layers = 2;
    int heads = 4;
    int mlp_hidden = 512;
    bool use_bias = true;
    bool detach_feedback = false;  // stop gradient through fed-back predictions

    int max_seq() const { return m + 1; }  // positions 0..m
    bool operator==(const ModelConfig&) const = default;
};

template <class Real>
struct Model {
    ModelConfig cfg;
    std::vector<std::string> names;       // fixed construction order
    std::vector<TMat<Real>> params;       // parallel to names
    std::vector<TMat<Real>> grads;        // parallel, same shapes

    explicit Model(const ModelConfig& c);

    int index_of(std::string_view name) const;  // -1 when absent
    TMat<Real>& tensor(std::string_view name);
    void zero_grads();
    size_t n_scalars() const;

    // Gaussian init, std 1 / sqrt(fan_in); norm gains 1, biases 0. Each
    // tensor draws from rng.derive(name).
    void init(RngStream rng);

    std::vector<f64> flat() const;
    std::vector<f64> flat_grad() const;
    void set_flat(std::span<const f64> x);
};

template <class Real>
struct ForwardResult {
    std::shared_ptr<Tape<Real>> tape;
    std::vector<typename Tape<Real>::Ref> emissions;  // m refs, each B x d with unit rows

    const TMat<Real>& emission(int t) const { return tape->val(emissions[size_t(t)]); }
};

// One lockstep decode over the whole batch. teacher holds the m normalized
// targets in slot order (entry t feeds position t + 1); use_pred[t][i] == 1
// feeds row i its own previous prediction instead. An empty teacher list runs
// pure self-feedback (inference decode). With accumulate_grads the caller
// injects loss gradients into the emission refs and runs tape->backward();
// parameter gradients land in model.grads.
template <class Real>
ForwardResult<Real> forward_batch(Model<Real>& model, const TMat<Real>& inputs,
                                  const std::vector<TMat<Real>>& teacher,
                                  const std::vector<std::vector<uint8_t>>& use_pred,
                                  bool accumulate_grads);

// Inference: self-feedback only, no gradient bookkeeping.
template <class Real>
std::vector<TMat<Real>> decode(Model<Real>& model, const TMat<Real>& inputs);

extern template struct Model<f32>;
extern template struct Model<f64>;
extern template ForwardResult<f32> forward_batch<f32>(Model<f32>&, const TMat<f32>&,
                                                      const std::vector<TMat<f32>>&,
                                                      const std::vector<std::vector<uint8_t>>&,
                                                      bool);
extern template ForwardResult<f64> forward_batch<f64>(Model<f64>&, const TMat<f64>&,
                                                      const std::vector<TMat<f64>>&,
                                                      const std::vector<std::vector<uint8_t>>&,
                                                      bool);
extern template std::vector<TMat<f32>> decode<f32>(Model<f32>&, const TMat<f32>&);
extern template std::vector<TMat<f64>> decode<f64>(Model<f64>&, const TMat<f64>&);

}  // namespace amer

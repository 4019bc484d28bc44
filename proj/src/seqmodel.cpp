#include "amer/seqmodel.hpp"

#include <cmath>

#include "amer/error.hpp"

namespace amer {
namespace {

bool is_gain(std::string_view name) { return name.ends_with(".g"); }
bool is_bias(std::string_view name) {
    return name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") ||
           name.ends_with(".bq") || name.ends_with(".bk") || name.ends_with(".bv") ||
           name.ends_with(".bo");
}

}  // namespace

template <class Real>
Model<Real>::Model(const ModelConfig& c) : cfg(c) {
    require(c.d >= 1 && c.m >= 1 && c.hidden >= 1 && c.layers >= 1 && c.heads >= 1 &&
                c.mlp_hidden >= 1,
            Errc::InvalidConfig, "Model: sizes must be positive");
    require(c.hidden % c.heads == 0, Errc::InvalidConfig, "Model: heads must divide hidden");
    auto mk = [&](const std::string& name, int r, int cc) {
        names.push_back(name);
        params.emplace_back(r, cc);
        grads.emplace_back(r, cc);
    };
    mk("in_proj.w", c.hidden, c.d);
    if (c.use_bias) mk("in_proj.b", 1, c.hidden);
    mk("pos", c.max_seq(), c.hidden);
    for (int l = 0; l < c.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        mk(p + "attn_norm.g", 1, c.hidden);
        for (const char* w : {"wq", "wk", "wv", "wo"}) mk(p + "attn." + w, c.hidden, c.hidden);
        if (c.use_bias)
            for (const char* b : {"bq", "bk", "bv", "bo"}) mk(p + "attn." + b, 1, c.hidden);
        mk(p + "mlp_norm.g", 1, c.hidden);
        mk(p + "mlp.w1", c.mlp_hidden, c.hidden);
        if (c.use_bias) mk(p + "mlp.b1", 1, c.mlp_hidden);
        mk(p + "mlp.w2", c.hidden, c.mlp_hidden);
        if (c.use_bias) mk(p + "mlp.b2", 1, c.hidden);
    }
    mk("final_norm.g", 1, c.hidden);
    mk("out_proj.w", c.d, c.hidden);
    if (c.use_bias) mk("out_proj.b", 1, c.d);
}

template <class Real>
int Model<Real>::index_of(std::string_view name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return int(i);
    return -1;
}

template <class Real>
TMat<Real>& Model<Real>::tensor(std::string_view name) {
    int i = index_of(name);
    require(i >= 0, Errc::InvalidConfig, "Model: unknown tensor " + std::string(name));
    return params[size_t(i)];
}

template <class Real>
void Model<Real>::zero_grads() {
    for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), Real(0));
}

template <class Real>
size_t Model<Real>::n_scalars() const {
    size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
}

template <class Real>
void Model<Real>::init(RngStream rng) {
    for (size_t i = 0; i < params.size(); ++i) {
        TMat<Real>& p = params[i];
        const std::string& name = names[i];
        if (is_gain(name)) {
            std::fill(p.data.begin(), p.data.end(), Real(1));
            continue;
        }
        if (is_bias(name)) {
            std::fill(p.data.begin(), p.data.end(), Real(0));
            continue;
        }
        RngStream s = rng.derive(name);
        const f64 std_dev = 1.0 / std::sqrt(f64(p.cols));
        for (auto& v : p.data) v = Real(std_dev * s.gaussian());
    }
}

template <class Real>
std::vector<f64> Model<Real>::flat() const {
    std::vector<f64> out;
    out.reserve(n_scalars());
    for (const auto& p : params)
        for (Real v : p.data) out.push_back(f64(v));
    return out;
}

template <class Real>
std::vector<f64> Model<Real>::flat_grad() const {
    std::vector<f64> out;
    out.reserve(n_scalars());
    for (const auto& g : grads)
        for (Real v : g.data) out.push_back(f64(v));
    return out;
}

template <class Real>
void Model<Real>::set_flat(std::span<const f64> x) {
    require(x.size() == n_scalars(), Errc::ShapeMismatch, "set_flat: wrong length");
    size_t k = 0;
    for (auto& p : params)
        for (auto& v : p.data) v = Real(x[k++]);
}

template <class Real>
ForwardResult<Real> forward_batch(Model<Real>& model, const TMat<Real>& inputs,
                                  const std::vector<TMat<Real>>& teacher,
                                  const std::vector<std::vector<uint8_t>>& use_pred,
                                  bool accumulate_grads) {
    const ModelConfig& c = model.cfg;
    using Ref = typename Tape<Real>::Ref;
    require(inputs.cols == c.d, Errc::DimMismatch, "forward_batch: input dimension");
    require(inputs.rows >= 1, Errc::ShapeMismatch, "forward_batch: empty batch");
    const bool fed = !teacher.empty();
    if (fed) {
        require(int(teacher.size()) == c.m, Errc::CountMismatch,
                "forward_batch: teacher must hold m embeddings");
        require(int(use_pred.size()) == c.m - 1, Errc::CountMismatch,
                "forward_batch: need m - 1 feedback masks");
    }

    ForwardResult<Real> out;
    out.tape = std::make_shared<Tape<Real>>();
    Tape<Real>& t = *out.tape;

    std::vector<Ref> prefs(model.params.size());
    for (size_t i = 0; i < model.params.size(); ++i)
        prefs[i] = t.param(&model.params[i], accumulate_grads ? &model.grads[i] : nullptr);
    auto pref = [&](std::string_view name) {
        int i = model.index_of(name);
        require(i >= 0, Errc::InvalidConfig, "forward_batch: missing tensor");
        return prefs[size_t(i)];
    };
    auto opt = [&](std::string_view name) { return c.use_bias ? pref(name) : Ref(-1); };

    std::vector<std::vector<Ref>> ks(size_t(c.layers)), vs(size_t(c.layers));
    Ref input_ref = t.constant(inputs);

    for (int pos = 0; pos < c.m; ++pos) {
        Ref z;
        if (pos == 0) {
            z = input_ref;
        } else if (fed) {
            z = t.mix_rows(out.emissions.back(), teacher[size_t(pos - 1)],
                           use_pred[size_t(pos - 1)], c.detach_feedback);
        } else {
            z = out.emissions.back();
        }
        Ref x = t.linear(z, pref("in_proj.w"), opt("in_proj.b"));
        x = t.add_row(x, pref("pos"), pos);
        for (int l = 0; l < c.layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Ref n1 = t.rmsnorm(x, pref(p + "attn_norm.g"));
            Ref q = t.linear(n1, pref(p + "attn.wq"), opt(p + "attn.bq"));
            Ref k = t.linear(n1, pref(p + "attn.wk"), opt(p + "attn.bk"));
            Ref v = t.linear(n1, pref(p + "attn.wv"), opt(p + "attn.bv"));
            ks[size_t(l)].push_back(k);
            vs[size_t(l)].push_back(v);
            Ref att = t.attend(q, ks[size_t(l)], vs[size_t(l)], c.heads);
            Ref o = t.linear(att, pref(p + "attn.wo"), opt(p + "attn.bo"));
            x = t.add(x, o);
            Ref n2 = t.rmsnorm(x, pref(p + "mlp_norm.g"));
            Ref h = t.gelu_op(t.linear(n2, pref(p + "mlp.w1"), opt(p + "mlp.b1")));
            Ref m2 = t.linear(h, pref(p + "mlp.w2"), opt(p + "mlp.b2"));
            x = t.add(x, m2);
        }
        Ref y = t.rmsnorm(x, pref("final_norm.g"));
        Ref e = t.l2norm_rows(t.linear(y, pref("out_proj.w"), opt("out_proj.b")));
        out.emissions.push_back(e);
    }
    return out;
}

template <class Real>
std::vector<TMat<Real>> decode(Model<Real>& model, const TMat<Real>& inputs) {
    auto fwd = forward_batch(model, inputs, {}, {}, false);
    std::vector<TMat<Real>> out;
    out.reserve(fwd.emissions.size());
    for (auto r : fwd.emissions) out.push_back(fwd.tape->val(r));
    return out;
}

template struct Model<f32>;
template struct Model<f64>;
template ForwardResult<f32> forward_batch<f32>(Model<f32>&, const TMat<f32>&,
                                               const std::vector<TMat<f32>>&,
                                               const std::vector<std::vector<uint8_t>>&, bool);
template ForwardResult<f64> forward_batch<f64>(Model<f64>&, const TMat<f64>&,
                                               const std::vector<TMat<f64>>&,
                                               const std::vector<std::vector<uint8_t>>&, bool);
template std::vector<TMat<f32>> decode<f32>(Model<f32>&, const TMat<f32>&);
template std::vector<TMat<f64>> decode<f64>(Model<f64>&, const TMat<f64>&);

}  // namespace amer

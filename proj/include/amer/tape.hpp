#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "amer/blas.hpp"
#include "amer/error.hpp"
#include "amer/vec.hpp"

namespace amer {

// Row-major matrix over the tape's scalar type. Real is float in production
// and double under finite-difference gradient checks.
template <class Real>
struct TMat {
    int rows = 0, cols = 0;
    std::vector<Real> data;

    TMat() = default;
    TMat(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), Real(0)) {}

    Real& at(int i, int j) { return data[size_t(i) * size_t(cols) + size_t(j)]; }
    Real at(int i, int j) const { return data[size_t(i) * size_t(cols) + size_t(j)]; }
    Real* row(int i) { return data.data() + size_t(i) * size_t(cols); }
    const Real* row(int i) const { return data.data() + size_t(i) * size_t(cols); }
    size_t size() const { return data.size(); }
};

// Eager reverse-mode tape over batched matrices. Every op value is computed
// immediately; backward closures run in reverse creation order. Parameter
// leaves accumulate into external gradient storage so one tape per training
// step suffices.
template <class Real>
class Tape {
  public:
    using Ref = int;

    Ref constant(TMat<Real> v) {
        Node n;
        n.own_val = std::move(v);
        n.leaf = true;
        return push(std::move(n));
    }

    // Leaf viewing external parameter storage; grad accumulates into *grad.
    Ref param(const TMat<Real>* value, TMat<Real>* grad) {
        Node n;
        n.ext_val = value;
        n.ext_grad = grad;
        n.leaf = true;
        return push(std::move(n));
    }

    const TMat<Real>& val(Ref r) const { return nodes_[size_t(r)].val(); }

    void add_grad(Ref r, const std::vector<f64>& g) {
        TMat<Real>& dst = grad(r);
        require(g.size() == dst.size(), Errc::ShapeMismatch, "add_grad: shape mismatch");
        for (size_t i = 0; i < g.size(); ++i) dst.data[i] += Real(g[i]);
        nodes_[size_t(r)].grad_set = true;
    }

    // y = x w^T (+ bias broadcast over rows); w is out x in.
    Ref linear(Ref x, Ref w, Ref b = -1) {
        const TMat<Real>& xv = val(x);
        const TMat<Real>& wv = val(w);
        require(xv.cols == wv.cols, Errc::ShapeMismatch, "linear: inner dimension mismatch");
        TMat<Real> y(xv.rows, wv.rows);
        gemm<Real>(false, true, xv.rows, wv.rows, xv.cols, Real(1), xv.data.data(), xv.cols,
                   wv.data.data(), wv.cols, Real(0), y.data.data(), y.cols);
        if (b >= 0) {
            const TMat<Real>& bv = val(b);
            require(bv.rows == 1 && bv.cols == y.cols, Errc::ShapeMismatch, "linear: bias shape");
            for (int i = 0; i < y.rows; ++i)
                for (int j = 0; j < y.cols; ++j) y.at(i, j) += bv.at(0, j);
        }
        return op(std::move(y), [x, w, b](Tape& t, Ref self) {
            const TMat<Real>& dy = t.grad_of(self);
            const TMat<Real>& xv = t.val(x);
            const TMat<Real>& wv = t.val(w);
            if (t.wants_grad(x)) {
                TMat<Real>& dx = t.grad(x);
                gemm<Real>(false, false, dy.rows, wv.cols, dy.cols, Real(1), dy.data.data(),
                           dy.cols, wv.data.data(), wv.cols, Real(1), dx.data.data(), dx.cols);
            }
            if (t.wants_grad(w)) {
                TMat<Real>& dw = t.grad(w);
                gemm<Real>(true, false, dy.cols, xv.cols, dy.rows, Real(1), dy.data.data(),
                           dy.cols, xv.data.data(), xv.cols, Real(1), dw.data.data(), dw.cols);
            }
            if (b >= 0 && t.wants_grad(b)) {
                TMat<Real>& db = t.grad(b);
                for (int i = 0; i < dy.rows; ++i)
                    for (int j = 0; j < dy.cols; ++j) db.at(0, j) += dy.at(i, j);
            }
        });
    }

    Ref add(Ref x, Ref y) {
        const TMat<Real>& xv = val(x);
        const TMat<Real>& yv = val(y);
        require(xv.rows == yv.rows && xv.cols == yv.cols, Errc::ShapeMismatch, "add: shapes");
        TMat<Real> out = xv;
        for (size_t i = 0; i < out.size(); ++i) out.data[i] += yv.data[i];
        return op(std::move(out), [x, y](Tape& t, Ref self) {
            const TMat<Real>& d = t.grad_of(self);
            for (Ref p : {x, y}) {
                if (!t.wants_grad(p)) continue;
                TMat<Real>& dp = t.grad(p);
                for (size_t i = 0; i < d.size(); ++i) dp.data[i] += d.data[i];
            }
        });
    }

    // y[i, :] = x[i, :] + table[row, :]; backward accumulates the row sum.
    Ref add_row(Ref x, Ref table, int row) {
        const TMat<Real>& xv = val(x);
        const TMat<Real>& tv = val(table);
        require(row >= 0 && row < tv.rows, Errc::ShapeMismatch, "add_row: row out of range");
        require(xv.cols == tv.cols, Errc::ShapeMismatch, "add_row: width mismatch");
        TMat<Real> out = xv;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out.at(i, j) += tv.at(row, j);
        return op(std::move(out), [x, table, row](Tape& t, Ref self) {
            const TMat<Real>& d = t.grad_of(self);
            if (t.wants_grad(x)) {
                TMat<Real>& dx = t.grad(x);
                for (size_t i = 0; i < d.size(); ++i) dx.data[i] += d.data[i];
            }
            if (t.wants_grad(table)) {
                TMat<Real>& dt = t.grad(table);
                for (int i = 0; i < d.rows; ++i)
                    for (int j = 0; j < d.cols; ++j) dt.at(row, j) += d.at(i, j);
            }
        });
    }

    Ref gelu_op(Ref x) {
        const TMat<Real>& xv = val(x);
        TMat<Real> out(xv.rows, xv.cols);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] = Real(gelu(f64(xv.data[i])));
        return op(std::move(out), [x](Tape& t, Ref self) {
            if (!t.wants_grad(x)) return;
            const TMat<Real>& d = t.grad_of(self);
            const TMat<Real>& xv = t.val(x);
            TMat<Real>& dx = t.grad(x);
            for (size_t i = 0; i < d.size(); ++i)
                dx.data[i] += Real(f64(d.data[i]) * gelu_grad(f64(xv.data[i])));
        });
    }

    // y = x * gain / sqrt(mean(x^2) + eps), per row; gain is 1 x cols.
    Ref rmsnorm(Ref x, Ref gain) {
        constexpr f64 eps = 1e-5;
        const TMat<Real>& xv = val(x);
        const TMat<Real>& gv = val(gain);
        require(gv.rows == 1 && gv.cols == xv.cols, Errc::ShapeMismatch, "rmsnorm: gain shape");
        TMat<Real> out(xv.rows, xv.cols);
        auto inv = std::make_shared<std::vector<f64>>(size_t(xv.rows));
        for (int i = 0; i < xv.rows; ++i) {
            f64 ms = 0.0;
            for (int j = 0; j < xv.cols; ++j) ms += f64(xv.at(i, j)) * f64(xv.at(i, j));
            f64 r = 1.0 / std::sqrt(ms / f64(xv.cols) + eps);
            (*inv)[size_t(i)] = r;
            for (int j = 0; j < xv.cols; ++j)
                out.at(i, j) = Real(f64(xv.at(i, j)) * r * f64(gv.at(0, j)));
        }
        return op(std::move(out), [x, gain, inv](Tape& t, Ref self) {
            const TMat<Real>& d = t.grad_of(self);
            const TMat<Real>& xv = t.val(x);
            const TMat<Real>& gv = t.val(gain);
            const int n = xv.cols;
            const bool wx = t.wants_grad(x), wg = t.wants_grad(gain);
            if (!wx && !wg) return;
            for (int i = 0; i < xv.rows; ++i) {
                const f64 r = (*inv)[size_t(i)];
                f64 proj = 0.0;  // sum_k dy_k * g_k * x_k
                for (int j = 0; j < n; ++j)
                    proj += f64(d.at(i, j)) * f64(gv.at(0, j)) * f64(xv.at(i, j));
                if (wx) {
                    TMat<Real>& dx = t.grad(x);
                    const f64 c = r * r * r * proj / f64(n);
                    for (int j = 0; j < n; ++j)
                        dx.at(i, j) += Real(f64(d.at(i, j)) * f64(gv.at(0, j)) * r -
                                            c * f64(xv.at(i, j)));
                }
                if (wg) {
                    TMat<Real>& dg = t.grad(gain);
                    for (int j = 0; j < n; ++j)
                        dg.at(0, j) += Real(f64(d.at(i, j)) * f64(xv.at(i, j)) * r);
                }
            }
        });
    }

    // Unit-normalize every row (l2, f64 accumulation).
    Ref l2norm_rows(Ref x) {
        const TMat<Real>& xv = val(x);
        TMat<Real> out(xv.rows, xv.cols);
        auto inv = std::make_shared<std::vector<f64>>(size_t(xv.rows));
        for (int i = 0; i < xv.rows; ++i) {
            f64 s = 0.0;
            for (int j = 0; j < xv.cols; ++j) s += f64(xv.at(i, j)) * f64(xv.at(i, j));
            f64 n = std::sqrt(s);
            require(n > 1e-12, Errc::ZeroVector, "l2norm_rows: zero row");
            f64 r = 1.0 / n;
            (*inv)[size_t(i)] = r;
            for (int j = 0; j < xv.cols; ++j) out.at(i, j) = Real(f64(xv.at(i, j)) * r);
        }
        return op(std::move(out), [x, inv](Tape& t, Ref self) {
            if (!t.wants_grad(x)) return;
            const TMat<Real>& d = t.grad_of(self);
            const TMat<Real>& xv = t.val(x);
            TMat<Real>& dx = t.grad(x);
            for (int i = 0; i < xv.rows; ++i) {
                const f64 r = (*inv)[size_t(i)];
                f64 dotv = 0.0;
                for (int j = 0; j < xv.cols; ++j) dotv += f64(d.at(i, j)) * f64(xv.at(i, j));
                const f64 c = dotv * r * r * r;
                for (int j = 0; j < xv.cols; ++j)
                    dx.at(i, j) += Real(f64(d.at(i, j)) * r - c * f64(xv.at(i, j)));
            }
        });
    }

    // Per-row selection between the previous prediction and a constant teacher
    // row. use_pred[i] == 1 feeds the prediction through (with gradient unless
    // detach); otherwise the teacher row is used.
    Ref mix_rows(Ref pred, const TMat<Real>& teacher, std::vector<uint8_t> use_pred,
                 bool detach) {
        const TMat<Real>& pv = val(pred);
        require(teacher.rows == pv.rows && teacher.cols == pv.cols, Errc::ShapeMismatch,
                "mix_rows: teacher shape");
        require(int(use_pred.size()) == pv.rows, Errc::ShapeMismatch, "mix_rows: mask length");
        TMat<Real> out(pv.rows, pv.cols);
        for (int i = 0; i < pv.rows; ++i) {
            const Real* src = use_pred[size_t(i)] ? pv.row(i) : teacher.row(i);
            std::copy(src, src + pv.cols, out.row(i));
        }
        auto mask = std::make_shared<std::vector<uint8_t>>(std::move(use_pred));
        return op(std::move(out), [pred, mask, detach](Tape& t, Ref self) {
            if (detach || !t.wants_grad(pred)) return;
            const TMat<Real>& d = t.grad_of(self);
            TMat<Real>& dp = t.grad(pred);
            for (int i = 0; i < d.rows; ++i) {
                if (!(*mask)[size_t(i)]) continue;
                for (int j = 0; j < d.cols; ++j) dp.at(i, j) += d.at(i, j);
            }
        });
    }

    // Multi-head causal attention for one decode position. q is B x h; ks/vs
    // hold the per-position keys and values (each B x h) up to and including
    // the current position. Softmax runs in f64 with max subtraction.
    Ref attend(Ref q, std::vector<Ref> ks, std::vector<Ref> vs, int n_heads) {
        require(ks.size() == vs.size() && !ks.empty(), Errc::ShapeMismatch, "attend: cache");
        const TMat<Real>& qv = val(q);
        const int B = qv.rows, H = qv.cols;
        require(H % n_heads == 0, Errc::ShapeMismatch, "attend: heads must divide width");
        const int dh = H / n_heads;
        const int S = int(ks.size());
        const f64 scale = 1.0 / std::sqrt(f64(dh));

        auto probs = std::make_shared<std::vector<f64>>(size_t(B) * size_t(n_heads) * size_t(S));
        TMat<Real> out(B, H);
        std::vector<f64> sc(static_cast<size_t>(S));
        for (int i = 0; i < B; ++i) {
            for (int a = 0; a < n_heads; ++a) {
                const int off = a * dh;
                f64 mx = -1e300;
                for (int s = 0; s < S; ++s) {
                    const TMat<Real>& kv = val(ks[size_t(s)]);
                    f64 dot = 0.0;
                    for (int j = 0; j < dh; ++j)
                        dot += f64(qv.at(i, off + j)) * f64(kv.at(i, off + j));
                    sc[size_t(s)] = dot * scale;
                    mx = std::max(mx, sc[size_t(s)]);
                }
                f64 z = 0.0;
                for (int s = 0; s < S; ++s) {
                    sc[size_t(s)] = std::exp(sc[size_t(s)] - mx);
                    z += sc[size_t(s)];
                }
                f64* p = probs->data() + (size_t(i) * size_t(n_heads) + size_t(a)) * size_t(S);
                for (int s = 0; s < S; ++s) p[s] = sc[size_t(s)] / z;
                for (int j = 0; j < dh; ++j) {
                    f64 acc = 0.0;
                    for (int s = 0; s < S; ++s)
                        acc += p[s] * f64(val(vs[size_t(s)]).at(i, off + j));
                    out.at(i, off + j) = Real(acc);
                }
            }
        }
        auto kcap = std::make_shared<std::vector<Ref>>(std::move(ks));
        auto vcap = std::make_shared<std::vector<Ref>>(std::move(vs));
        return op(std::move(out), [q, kcap, vcap, n_heads, dh, scale, probs](Tape& t, Ref self) {
            const TMat<Real>& d = t.grad_of(self);
            const TMat<Real>& qv = t.val(q);
            const int B = qv.rows;
            const int S = int(kcap->size());
            std::vector<f64> dscore(static_cast<size_t>(S));
            for (int i = 0; i < B; ++i) {
                for (int a = 0; a < n_heads; ++a) {
                    const int off = a * dh;
                    const f64* p =
                        probs->data() + (size_t(i) * size_t(n_heads) + size_t(a)) * size_t(S);
                    f64 mean = 0.0;
                    for (int s = 0; s < S; ++s) {
                        const TMat<Real>& vv = t.val((*vcap)[size_t(s)]);
                        f64 dot = 0.0;
                        for (int j = 0; j < dh; ++j)
                            dot += f64(d.at(i, off + j)) * f64(vv.at(i, off + j));
                        dscore[size_t(s)] = dot;
                        mean += p[s] * dot;
                        if (t.wants_grad((*vcap)[size_t(s)])) {
                            TMat<Real>& dv = t.grad((*vcap)[size_t(s)]);
                            for (int j = 0; j < dh; ++j)
                                dv.at(i, off + j) += Real(p[s] * f64(d.at(i, off + j)));
                        }
                    }
                    for (int s = 0; s < S; ++s) {
                        const f64 ds = p[s] * (dscore[size_t(s)] - mean) * scale;
                        if (ds == 0.0) continue;
                        const TMat<Real>& kv = t.val((*kcap)[size_t(s)]);
                        if (t.wants_grad(q)) {
                            TMat<Real>& dq = t.grad(q);
                            for (int j = 0; j < dh; ++j)
                                dq.at(i, off + j) += Real(ds * f64(kv.at(i, off + j)));
                        }
                        if (t.wants_grad((*kcap)[size_t(s)])) {
                            TMat<Real>& dk = t.grad((*kcap)[size_t(s)]);
                            for (int j = 0; j < dh; ++j)
                                dk.at(i, off + j) += Real(ds * f64(qv.at(i, off + j)));
                        }
                    }
                }
            }
        });
    }

    // Runs all backward closures in reverse creation order. Seed gradients
    // must have been injected with add_grad first.
    void backward() {
        bool any = false;
        for (const Node& n : nodes_) any = any || n.grad_set;
        require(any, Errc::NoRecordedForward, "backward: no seed gradient injected");
        for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.back && n.grad_set) n.back(*this, i);
        }
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        const TMat<Real>* ext_val = nullptr;
        TMat<Real> own_val;
        TMat<Real>* ext_grad = nullptr;
        TMat<Real> own_grad;
        bool grad_set = false;
        bool leaf = false;
        std::function<void(Tape&, Ref)> back;

        const TMat<Real>& val() const { return ext_val ? *ext_val : own_val; }
    };

    Ref push(Node n) {
        nodes_.push_back(std::move(n));
        return Ref(nodes_.size() - 1);
    }

    Ref op(TMat<Real> value, std::function<void(Tape&, Ref)> back) {
        Node n;
        n.own_val = std::move(value);
        n.back = std::move(back);
        return push(std::move(n));
    }

    // A node wants gradient if it is an op (propagates further) or a param
    // leaf with external grad storage. Plain constants do not.
    bool wants_grad(Ref r) const {
        const Node& n = nodes_[size_t(r)];
        return !n.leaf || n.ext_grad != nullptr;
    }

    TMat<Real>& grad(Ref r) {
        Node& n = nodes_[size_t(r)];
        n.grad_set = true;
        if (n.ext_grad) return *n.ext_grad;
        if (n.own_grad.size() == 0) {
            const TMat<Real>& v = n.val();
            n.own_grad = TMat<Real>(v.rows, v.cols);
        }
        return n.own_grad;
    }

    const TMat<Real>& grad_of(Ref r) {
        return grad(r);  // allocates zeros if the node never received gradient
    }

    std::vector<Node> nodes_;
};

}  // namespace amer

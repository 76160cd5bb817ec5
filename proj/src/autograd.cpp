// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "piw/errors.hpp"

namespace piw::ad {

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

const Matrix &Tape::grad(Var v) const {
    static const Matrix kEmpty;
    const Node &n = nodes_[v.id];
    return n.has_grad ? n.grad : kEmpty;
}

Matrix &Tape::grad_slot(std::size_t id) {
    Node &n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix &g) {
    if (!nodes_[id].needs_grad) {
        return;
    }
    grad_slot(id) += g;
}

void Tape::backward(Var loss) {
    if (value(loss).size() != 1) {
        throw ShapeError("backward: loss must be 1x1, got " + value(loss).shape_string());
    }
    grad_slot(loss.id)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node &n = nodes_[i];
        if (!n.needs_grad || !n.has_grad || !n.backward) {
            continue;
        }
        // Copy: the closure may grow other nodes' grads but never this one.
        const Matrix g = n.grad;
        n.backward(*this, g);
    }
}

namespace {

Tape &tape_of(Var a) { return *a.tape; }

bool any_grad(std::initializer_list<Var> vs) {
    return std::any_of(vs.begin(), vs.end(), [](Var v) { return v.tape->needs_grad(v); });
}

} // namespace

Var matmul(Var a, Var b) {
    Tape &t = tape_of(a);
    Matrix out = piw::matmul(t.value(a), t.value(b));
    return t.push(std::move(out), any_grad({a, b}), [a, b](Tape &tp, const Matrix &g) {
        if (tp.needs_grad(a)) {
            tp.accumulate(a.id, piw::matmul_nt(g, tp.value(b)));
        }
        if (tp.needs_grad(b)) {
            tp.accumulate(b.id, piw::matmul_tn(tp.value(a), g));
        }
    });
}

Var matmul_nt(Var a, Var b) {
    Tape &t = tape_of(a);
    Matrix out = piw::matmul_nt(t.value(a), t.value(b));
    return t.push(std::move(out), any_grad({a, b}), [a, b](Tape &tp, const Matrix &g) {
        if (tp.needs_grad(a)) {
            tp.accumulate(a.id, piw::matmul(g, tp.value(b)));
        }
        if (tp.needs_grad(b)) {
            tp.accumulate(b.id, piw::matmul_tn(g, tp.value(a)));
        }
    });
}

Var add(Var a, Var b) {
    Tape &t = tape_of(a);
    Matrix out = t.value(a) + t.value(b);
    return t.push(std::move(out), any_grad({a, b}), [a, b](Tape &tp, const Matrix &g) {
        tp.accumulate(a.id, g);
        tp.accumulate(b.id, g);
    });
}

Var sub(Var a, Var b) {
    Tape &t = tape_of(a);
    Matrix out = t.value(a) - t.value(b);
    return t.push(std::move(out), any_grad({a, b}), [a, b](Tape &tp, const Matrix &g) {
        tp.accumulate(a.id, g);
        if (tp.needs_grad(b)) {
            tp.accumulate(b.id, g * -1.0);
        }
    });
}

Var mul(Var a, Var b) {
    Tape &t = tape_of(a);
    const Matrix &av = t.value(a);
    const Matrix &bv = t.value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
        throw ShapeError("mul: shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return t.push(std::move(out), any_grad({a, b}), [a, b](Tape &tp, const Matrix &g) {
        if (tp.needs_grad(a)) {
            Matrix ga = g;
            const Matrix &bv2 = tp.value(b);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] *= bv2[i];
            }
            tp.accumulate(a.id, ga);
        }
        if (tp.needs_grad(b)) {
            Matrix gb = g;
            const Matrix &av2 = tp.value(a);
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] *= av2[i];
            }
            tp.accumulate(b.id, gb);
        }
    });
}

Var scale(Var a, double s) {
    Tape &t = tape_of(a);
    Matrix out = t.value(a) * s;
    return t.push(std::move(out), any_grad({a}),
                  [a, s](Tape &tp, const Matrix &g) { tp.accumulate(a.id, g * s); });
}

Var add_row(Var x, Var row) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    const Matrix &rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != xv.cols()) {
        throw ShapeError("add_row: cannot broadcast " + rv.shape_string() + " over " +
                         xv.shape_string());
    }
    Matrix out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(r, c) += rv[c];
        }
    }
    return t.push(std::move(out), any_grad({x, row}), [x, row](Tape &tp, const Matrix &g) {
        tp.accumulate(x.id, g);
        if (tp.needs_grad(row)) {
            Matrix gr(1, g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    gr[c] += g(r, c);
                }
            }
            tp.accumulate(row.id, gr);
        }
    });
}

Var add_col(Var x, Var col) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    const Matrix &cv = t.value(col);
    if (cv.cols() != 1 || cv.rows() != xv.rows()) {
        throw ShapeError("add_col: cannot broadcast " + cv.shape_string() + " over " +
                         xv.shape_string());
    }
    Matrix out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(r, c) += cv[r];
        }
    }
    return t.push(std::move(out), any_grad({x, col}), [x, col](Tape &tp, const Matrix &g) {
        tp.accumulate(x.id, g);
        if (tp.needs_grad(col)) {
            Matrix gc(g.rows(), 1);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    gc[r] += g(r, c);
                }
            }
            tp.accumulate(col.id, gc);
        }
    });
}

Var relu(Var x) {
    Tape &t = tape_of(x);
    Matrix out = t.value(x);
    for (double &v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return t.push(std::move(out), any_grad({x}), [x](Tape &tp, const Matrix &g) {
        Matrix gx = g;
        const Matrix &xv = tp.value(x);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xv[i] <= 0.0) {
                gx[i] = 0.0;
            }
        }
        tp.accumulate(x.id, gx);
    });
}

Var softmax_rows(Var x, bool causal) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    Matrix out(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        const std::size_t width = causal ? std::min(r + 1, xv.cols()) : xv.cols();
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < width; ++c) {
            mx = std::max(mx, xv(r, c));
        }
        double s = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            out(r, c) = std::exp(xv(r, c) - mx);
            s += out(r, c);
        }
        for (std::size_t c = 0; c < width; ++c) {
            out(r, c) /= s;
        }
    }
    const std::size_t self = t.size();
    return t.push(std::move(out), any_grad({x}), [x, self](Tape &tp, const Matrix &g) {
        const Matrix &p = tp.value(Var{&tp, self});
        Matrix gx(p.rows(), p.cols());
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < p.cols(); ++c) {
                dot += g(r, c) * p(r, c);
            }
            for (std::size_t c = 0; c < p.cols(); ++c) {
                gx(r, c) = p(r, c) * (g(r, c) - dot);
            }
        }
        tp.accumulate(x.id, gx);
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    const Matrix &gv = t.value(gain);
    const Matrix &bv = t.value(bias);
    const std::size_t n = xv.cols();
    if (gv.rows() != 1 || gv.cols() != n || bv.rows() != 1 || bv.cols() != n) {
        throw ShapeError("layer_norm: gain/bias " + gv.shape_string() + "/" + bv.shape_string() +
                         " do not match " + xv.shape_string());
    }
    Matrix xhat(xv.rows(), n);
    Matrix inv_std(xv.rows(), 1);
    Matrix out(xv.rows(), n);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            mean += xv(r, c);
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double d = xv(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (xv(r, c) - mean) * is;
            out(r, c) = xhat(r, c) * gv[c] + bv[c];
        }
    }
    return t.push(std::move(out), any_grad({x, gain, bias}),
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape &tp, const Matrix &g) {
                      const Matrix &gv2 = tp.value(gain);
                      const std::size_t cols = g.cols();
                      if (tp.needs_grad(gain) || tp.needs_grad(bias)) {
                          Matrix gg(1, cols);
                          Matrix gb(1, cols);
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                              for (std::size_t c = 0; c < cols; ++c) {
                                  gg[c] += g(r, c) * xhat(r, c);
                                  gb[c] += g(r, c);
                              }
                          }
                          tp.accumulate(gain.id, gg);
                          tp.accumulate(bias.id, gb);
                      }
                      if (tp.needs_grad(x)) {
                          Matrix gx(g.rows(), cols);
                          const double inv_n = 1.0 / static_cast<double>(cols);
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                              double mean_dy = 0.0;
                              double mean_dy_xhat = 0.0;
                              for (std::size_t c = 0; c < cols; ++c) {
                                  const double dy = g(r, c) * gv2[c];
                                  mean_dy += dy;
                                  mean_dy_xhat += dy * xhat(r, c);
                              }
                              mean_dy *= inv_n;
                              mean_dy_xhat *= inv_n;
                              for (std::size_t c = 0; c < cols; ++c) {
                                  const double dy = g(r, c) * gv2[c];
                                  gx(r, c) = inv_std[r] * (dy - mean_dy - xhat(r, c) * mean_dy_xhat);
                              }
                          }
                          tp.accumulate(x.id, gx);
                      }
                  });
}

Var slice_cols(Var x, std::size_t first, std::size_t count) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    if (first + count > xv.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of " + xv.shape_string());
    }
    Matrix out(xv.rows(), count);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out(r, c) = xv(r, first + c);
        }
    }
    return t.push(std::move(out), any_grad({x}), [x, first](Tape &tp, const Matrix &g) {
        Matrix &gx = tp.grad_slot(x.id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                gx(r, first + c) += g(r, c);
            }
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no inputs");
    }
    Tape &t = tape_of(parts.front());
    const std::size_t rows = t.value(parts.front()).rows();
    std::size_t cols = 0;
    bool grad = false;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) {
            throw ShapeError("concat_cols: row mismatch " + t.value(p).shape_string());
        }
        cols += t.value(p).cols();
        grad = grad || t.needs_grad(p);
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Matrix &pv = t.value(p);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + offset);
        }
        offset += pv.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.push(std::move(out), grad, [inputs](Tape &tp, const Matrix &g) {
        std::size_t off = 0;
        for (Var p : inputs) {
            const std::size_t w = tp.value(p).cols();
            if (tp.needs_grad(p)) {
                Matrix &gp = tp.grad_slot(p.id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < w; ++c) {
                        gp(r, c) += g(r, off + c);
                    }
                }
            }
            off += w;
        }
    });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
    Tape &t = tape_of(table);
    const Matrix &tv = t.value(table);
    Matrix out(ids.size(), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= tv.rows()) {
            throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " out of range for " +
                             tv.shape_string());
        }
        std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return t.push(std::move(out), any_grad({table}), [table, idx](Tape &tp, const Matrix &g) {
        Matrix &gt = tp.grad_slot(table.id);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                gt(idx[i], c) += g(i, c);
            }
        }
    });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
    Tape &t = tape_of(logits);
    auto sce = piw::softmax_cross_entropy(t.value(logits), targets);
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    return t.push(Matrix(1, 1, sce.loss), any_grad({logits}),
                  [logits, tg, probs = std::move(sce.probs)](Tape &tp, const Matrix &g) {
                      Matrix gl = probs;
                      const double inv = 1.0 / static_cast<double>(tg.size());
                      for (std::size_t r = 0; r < tg.size(); ++r) {
                          gl(r, tg[r]) -= 1.0;
                      }
                      gl *= inv * g[0];
                      tp.accumulate(logits.id, gl);
                  });
}

Var sum(Var x) {
    Tape &t = tape_of(x);
    double s = 0.0;
    for (double v : t.value(x).data()) {
        s += v;
    }
    return t.push(Matrix(1, 1, s), any_grad({x}), [x](Tape &tp, const Matrix &g) {
        const Matrix &xv = tp.value(x);
        tp.accumulate(x.id, Matrix(xv.rows(), xv.cols(), g[0]));
    });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    if (rows * cols != xv.size()) {
        throw ShapeError("reshape: cannot view " + xv.shape_string() + " as [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
    }
    std::vector<double> d(xv.data().begin(), xv.data().end());
    return t.push(Matrix(rows, cols, std::move(d)), any_grad({x}), [x](Tape &tp, const Matrix &g) {
        const Matrix &xv2 = tp.value(x);
        std::vector<double> d2(g.data().begin(), g.data().end());
        tp.accumulate(x.id, Matrix(xv2.rows(), xv2.cols(), std::move(d2)));
    });
}

Var im2col3x3(Var x, std::size_t height, std::size_t width) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    if (xv.cols() != height * width) {
        throw ShapeError("im2col3x3: image " + xv.shape_string() + " is not C x " +
                         std::to_string(height) + "*" + std::to_string(width));
    }
    const std::size_t channels = xv.rows();
    const std::size_t hw = height * width;
    Matrix out(channels * 9, hw);
    // index map: for each output entry, the flat source index or npos (pad)
    std::vector<std::size_t> src(out.size(), static_cast<std::size_t>(-1));
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t k = 0; k < 9; ++k) {
            const long dy = static_cast<long>(k / 3) - 1;
            const long dx = static_cast<long>(k % 3) - 1;
            const std::size_t orow = c * 9 + k;
            for (std::size_t y = 0; y < height; ++y) {
                const long sy = static_cast<long>(y) + dy;
                if (sy < 0 || sy >= static_cast<long>(height)) {
                    continue;
                }
                for (std::size_t xx = 0; xx < width; ++xx) {
                    const long sx = static_cast<long>(xx) + dx;
                    if (sx < 0 || sx >= static_cast<long>(width)) {
                        continue;
                    }
                    const std::size_t s = c * hw + static_cast<std::size_t>(sy) * width +
                                          static_cast<std::size_t>(sx);
                    const std::size_t o = orow * hw + y * width + xx;
                    out[o] = xv[s];
                    src[o] = s;
                }
            }
        }
    }
    return t.push(std::move(out), any_grad({x}), [x, src = std::move(src)](Tape &tp, const Matrix &g) {
        Matrix &gx = tp.grad_slot(x.id);
        for (std::size_t o = 0; o < src.size(); ++o) {
            if (src[o] != static_cast<std::size_t>(-1)) {
                gx[src[o]] += g[o];
            }
        }
    });
}

Var maxpool2x2(Var x, std::size_t height, std::size_t width) {
    Tape &t = tape_of(x);
    const Matrix &xv = t.value(x);
    if (xv.cols() != height * width || height % 2 != 0 || width % 2 != 0) {
        throw ShapeError("maxpool2x2: image " + xv.shape_string() + " with H=" +
                         std::to_string(height) + " W=" + std::to_string(width));
    }
    const std::size_t oh = height / 2;
    const std::size_t ow = width / 2;
    Matrix out(xv.rows(), oh * ow);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t c = 0; c < xv.rows(); ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                std::size_t best = c * height * width + (2 * y) * width + 2 * xx;
                for (std::size_t k = 1; k < 4; ++k) {
                    const std::size_t s =
                        c * height * width + (2 * y + k / 2) * width + 2 * xx + k % 2;
                    if (xv[s] > xv[best]) {
                        best = s;
                    }
                }
                const std::size_t o = c * oh * ow + y * ow + xx;
                out[o] = xv[best];
                arg[o] = best;
            }
        }
    }
    return t.push(std::move(out), any_grad({x}), [x, arg = std::move(arg)](Tape &tp, const Matrix &g) {
        Matrix &gx = tp.grad_slot(x.id);
        for (std::size_t o = 0; o < arg.size(); ++o) {
            gx[arg[o]] += g[o];
        }
    });
}

ValueAndGradients value_and_gradients(const LossFn &loss_fn, const ParamSet &params) {
    Tape tape;
    Bindings bind;
    for (const auto &[path, value] : params.entries()) {
        bind.emplace(path, params.is_trainable(path) ? tape.leaf(value) : tape.constant(value));
    }
    Var loss = loss_fn(tape, bind);
    ValueAndGradients out;
    out.loss = tape.value(loss)[0];
    if (!std::isfinite(out.loss)) {
        std::string culprit;
        for (const auto &[path, value] : params.entries()) {
            if (!value.all_finite()) {
                culprit = path;
                break;
            }
        }
        throw NumericError("non-finite loss" +
                           (culprit.empty() ? std::string() : " (parameter '" + culprit + "')"));
    }
    tape.backward(loss);
    for (const auto &path : params.trainable()) {
        const Var v = bind.at(path);
        const Matrix &g = tape.grad(v);
        Matrix gm = g.empty() ? Matrix(tape.value(v).rows(), tape.value(v).cols()) : g;
        if (!gm.all_finite()) {
            throw NumericError("non-finite gradient for parameter '" + path + "'");
        }
        out.grads.emplace(path, std::move(gm));
    }
    return out;
}

std::map<std::string, Matrix> gradients(const LossFn &loss_fn, const ParamSet &params) {
    return value_and_gradients(loss_fn, params).grads;
}

} // namespace piw::ad

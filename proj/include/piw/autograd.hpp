// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode tape over dense matrices. Every op records its output
// value and a closure that scatters the output gradient into its inputs.
// Nodes whose inputs are all constants skip gradient bookkeeping entirely, so
// a frozen backbone costs only its forward pass.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piw/matrix.hpp"

namespace piw::ad {

class Tape;

struct Var {
    Tape *tape = nullptr;
    std::size_t id = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape &, const Matrix &out_grad)>;

    Var constant(Matrix value);
    Var leaf(Matrix value);

    const Matrix &value(Var v) const { return nodes_[v.id].value; }
    const Matrix &grad(Var v) const;
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 for a 1×1 node and runs the tape backwards.
    void backward(Var loss);

    // Op plumbing.
    Var push(Matrix value, bool needs_grad, Backward backward);
    void accumulate(std::size_t id, const Matrix &g);
    Matrix &grad_slot(std::size_t id);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        bool has_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1×n row to every row of x.
Var add_row(Var x, Var row);
/// Adds an m×1 column to every column of x.
Var add_col(Var x, Var col);
Var relu(Var x);
/// Row-wise softmax; `causal` masks entries with column > row.
Var softmax_rows(Var x, bool causal = false);
/// Row-wise normalization to zero mean / unit variance, then gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var x, std::size_t first, std::size_t count);
Var concat_cols(std::span<const Var> parts);
/// Selects rows of `table` by index (embedding lookup).
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// Mean token cross-entropy, 1×1.
Var cross_entropy(Var logits, std::span<const std::size_t> targets);
/// Sum of all entries, 1×1.
Var sum(Var x);
/// Reinterprets the row-major buffer with a new shape.
Var reshape(Var x, std::size_t rows, std::size_t cols);

/// 3×3, stride 1, zero-padded patch extraction on a C×(H·W) image.
/// Output is (C·9)×(H·W); a conv layer is then matmul(weight, patches).
Var im2col3x3(Var x, std::size_t height, std::size_t width);
/// 2×2 stride-2 max pooling on a C×(H·W) image (H and W even).
Var maxpool2x2(Var x, std::size_t height, std::size_t width);

using Bindings = std::map<std::string, Var>;
using LossFn = std::function<Var(Tape &, const Bindings &)>;

struct ValueAndGradients {
    double loss = 0.0;
    std::map<std::string, Matrix> grads;
};

/// Binds every parameter on a fresh tape (trainable ones as leaves, others as
/// constants), evaluates `loss_fn`, and back-propagates. Only trainable paths
/// appear in the result.
ValueAndGradients value_and_gradients(const LossFn &loss_fn, const ParamSet &params);

std::map<std::string, Matrix> gradients(const LossFn &loss_fn, const ParamSet &params);

} // namespace piw::ad

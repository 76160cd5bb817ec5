// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace piw {

/// Dense row-major fp64 matrix. Vectors are 1×n or n×1 matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix column(std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::string shape_string() const;
    bool all_finite() const;

    Matrix &operator+=(const Matrix &other);
    Matrix &operator-=(const Matrix &other);
    Matrix &operator*=(double s);

    friend bool operator==(const Matrix &, const Matrix &) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix &b);
Matrix operator-(Matrix a, const Matrix &b);
Matrix operator*(Matrix a, double s);

/// a · b. Throws ShapeError naming both shapes when a.cols != b.rows.
Matrix matmul(const Matrix &a, const Matrix &b);
/// a · bᵀ
Matrix matmul_nt(const Matrix &a, const Matrix &b);
/// aᵀ · b
Matrix matmul_tn(const Matrix &a, const Matrix &b);
Matrix transpose(const Matrix &a);

double frobenius_norm(const Matrix &a);
/// max |a - b| / max(|a|_max, |b|_max, floor)
double max_relative_error(const Matrix &a, const Matrix &b, double floor = 1e-300);

struct SoftmaxCrossEntropy {
    double loss = 0.0; ///< mean over rows of -log p[target]
    Matrix probs;
};

/// Row-wise stable softmax and mean cross-entropy against one target per row.
SoftmaxCrossEntropy softmax_cross_entropy(const Matrix &logits, std::span<const std::size_t> targets);

/// Row-wise stable softmax.
Matrix softmax_rows(const Matrix &logits);

/// Named parameters plus the subset that receives gradients.
class ParamSet {
public:
    void add(const std::string &path, Matrix value, bool trainable);
    bool contains(const std::string &path) const { return entries_.count(path) != 0; }
    const Matrix &get(const std::string &path) const;
    Matrix &get_mut(const std::string &path);

    void set_trainable(const std::string &path, bool trainable);
    void freeze_all() { trainable_.clear(); }
    bool is_trainable(const std::string &path) const { return trainable_.count(path) != 0; }

    const std::map<std::string, Matrix> &entries() const { return entries_; }
    const std::set<std::string> &trainable() const { return trainable_; }
    std::size_t scalar_count() const;

    friend bool operator==(const ParamSet &, const ParamSet &) = default;

private:
    std::map<std::string, Matrix> entries_;
    std::set<std::string> trainable_;
};

/// In-place SGD step `p -= lr * g` over every gradient entry.
void sgd_step(ParamSet &params, const std::map<std::string, Matrix> &grads, double lr);

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm` (no-op when max_norm <= 0). Returns the norm before clipping.
double clip_global_norm(std::map<std::string, Matrix> &grads, double max_norm);

} // namespace piw

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "piw/errors.hpp"

namespace piw {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto &r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("ragged matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void require_same_shape(const Matrix &a, const Matrix &b, const char *op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

} // namespace

Matrix &Matrix::operator+=(const Matrix &other) {
    require_same_shape(*this, other, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix &Matrix::operator-=(const Matrix &other) {
    require_same_shape(*this, other, "sub");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix &Matrix::operator*=(double s) {
    for (double &v : data_) {
        v *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix &b) { return a += b; }
Matrix operator-(Matrix a, const Matrix &b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.cols();
    const std::size_t m = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double *o = &out(i, 0);
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            const double *brow = b.row(k).data();
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                         b.shape_string());
    }
    Matrix out(a.rows(), b.rows());
    const std::size_t n = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double *arow = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double *brow = b.row(j).data();
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                s += arow[k] * brow[k];
            }
            out(i, j) = s;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                         b.shape_string());
    }
    Matrix out(a.cols(), b.cols());
    const std::size_t m = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double *brow = b.row(k).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) {
                continue;
            }
            double *o = &out(i, 0);
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += aki * brow[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix &a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

double frobenius_norm(const Matrix &a) {
    double s = 0.0;
    for (double v : a.data()) {
        s += v * v;
    }
    return std::sqrt(s);
}

double max_relative_error(const Matrix &a, const Matrix &b, double floor) {
    require_same_shape(a, b, "max_relative_error");
    double scale = floor;
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
        diff = std::max(diff, std::abs(a[i] - b[i]));
    }
    return diff / scale;
}

Matrix softmax_rows(const Matrix &logits) {
    Matrix probs(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto in = logits.row(r);
        auto out = probs.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            out[c] = std::exp(in[c] - mx);
            sum += out[c];
        }
        for (double &v : out) {
            v /= sum;
        }
    }
    return probs;
}

SoftmaxCrossEntropy softmax_cross_entropy(const Matrix &logits, std::span<const std::size_t> targets) {
    if (targets.size() != logits.rows()) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + logits.shape_string());
    }
    SoftmaxCrossEntropy result;
    result.probs = softmax_rows(logits);
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (targets[r] >= logits.cols()) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[r]) +
                             " out of range for width " + std::to_string(logits.cols()));
        }
        // log-sum-exp form: finite for any finite logits, so no -Inf even
        // when p[target] underflows below the 1e-300 floor.
        const auto in = logits.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (double v : in) {
            sum += std::exp(v - mx);
        }
        total += std::log(sum) + mx - in[targets[r]];
    }
    result.loss = logits.rows() == 0 ? 0.0 : total / static_cast<double>(logits.rows());
    return result;
}

void ParamSet::add(const std::string &path, Matrix value, bool trainable) {
    if (entries_.count(path) != 0) {
        throw ConfigError("duplicate parameter path '" + path + "'");
    }
    entries_.emplace(path, std::move(value));
    if (trainable) {
        trainable_.insert(path);
    }
}

const Matrix &ParamSet::get(const std::string &path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) {
        throw LookupError("unknown parameter path '" + path + "'");
    }
    return it->second;
}

Matrix &ParamSet::get_mut(const std::string &path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) {
        throw LookupError("unknown parameter path '" + path + "'");
    }
    return it->second;
}

void ParamSet::set_trainable(const std::string &path, bool trainable) {
    if (entries_.count(path) == 0) {
        throw LookupError("unknown parameter path '" + path + "'");
    }
    if (trainable) {
        trainable_.insert(path);
    } else {
        trainable_.erase(path);
    }
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto &[_, m] : entries_) {
        n += m.size();
    }
    return n;
}

double clip_global_norm(std::map<std::string, Matrix> &grads, double max_norm) {
    double sq = 0.0;
    for (const auto &[_, g] : grads) {
        for (double v : g.data()) {
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        for (auto &[_, g] : grads) {
            g *= max_norm / norm;
        }
    }
    return norm;
}

void sgd_step(ParamSet &params, const std::map<std::string, Matrix> &grads, double lr) {
    for (const auto &[path, g] : grads) {
        Matrix &p = params.get_mut(path);
        if (p.size() != g.size()) {
            throw ShapeError("sgd_step: gradient shape " + g.shape_string() + " for parameter '" +
                             path + "' of shape " + p.shape_string());
        }
        auto pd = p.data();
        auto gd = g.data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            pd[i] -= lr * gd[i];
        }
    }
}

} // namespace piw

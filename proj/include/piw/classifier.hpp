// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Speaker-characteristic classifier: a VGG-style convolutional encoder shared
// by all groups, and one three-layer dense head per characteristic group.
// Input is a bins × frames feature slice treated as a single-channel image.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piw/autograd.hpp"
#include "piw/features.hpp"
#include "piw/matrix.hpp"
#include "piw/taxonomy.hpp"

namespace piw {

struct ClassifierConfig {
    /// Output channels per block; each block is conv3×3, conv3×3, maxpool 2×2.
    std::vector<std::size_t> channels = {8, 16};
    std::size_t head_hidden1 = 32;
    std::size_t head_hidden2 = 16;
    std::size_t input_bins = 16;
    std::size_t input_frames = 12;

    std::size_t conv_blocks() const { return channels.size(); }
    /// Throws ConfigError when a pooled dimension would underflow or be odd.
    void validate() const;
    std::size_t flat_size() const;

    friend bool operator==(const ClassifierConfig &, const ClassifierConfig &) = default;
};

struct GroupPrediction {
    std::string group;
    std::string value;
    std::vector<double> probabilities; ///< in taxonomy value order
};

struct Prediction {
    std::vector<GroupPrediction> groups; ///< in taxonomy group order

    std::map<std::string, std::string> assignment() const;
};

/// One labeled training example for the classifier.
struct LabeledSlice {
    FeatureMatrix slice;
    std::map<std::string, std::string> labels;
};

struct ClassifierHyper {
    double lr = 0.1;
    std::size_t batch = 32;
    std::size_t epochs = 30;
    std::uint64_t seed = 42;
};

class CharacteristicClassifier {
public:
    CharacteristicClassifier() = default;
    CharacteristicClassifier(ClassifierConfig cfg, CharacteristicTaxonomy taxonomy, ParamSet params);

    const ClassifierConfig &config() const { return cfg_; }
    const CharacteristicTaxonomy &taxonomy() const { return taxonomy_; }
    const ParamSet &params() const { return params_; }
    ParamSet &params_mut() { return params_; }

    /// Scalar counts used by the overhead model.
    std::size_t encoder_param_count() const;
    std::size_t head_param_count(const std::string &group) const;

    friend bool operator==(const CharacteristicClassifier &a, const CharacteristicClassifier &b) {
        return a.cfg_ == b.cfg_ && a.taxonomy_ == b.taxonomy_ && a.params_ == b.params_;
    }

private:
    ClassifierConfig cfg_;
    CharacteristicTaxonomy taxonomy_;
    ParamSet params_;
};

CharacteristicClassifier init_classifier(const ClassifierConfig &cfg, const CharacteristicTaxonomy &taxonomy,
                                         std::uint64_t seed);

/// Zero-mean, unit-variance copy of the slice (the single input channel).
Matrix standardize_slice(const FeatureMatrix &slice);

/// Per-group logits (1 × |C^k|) built on `tape` from bound parameters.
std::map<std::string, ad::Var> classifier_logits(ad::Tape &tape, const CharacteristicClassifier &c,
                                                 const ad::Bindings &bind, const FeatureMatrix &slice);

/// Sum over heads of the cross-entropy for the labels present on `example`.
ad::Var classifier_loss(ad::Tape &tape, const CharacteristicClassifier &c, const ad::Bindings &bind,
                        const LabeledSlice &example);

/// Mean joint loss over `data` without gradient bookkeeping.
double classifier_mean_loss(const CharacteristicClassifier &c, std::span<const LabeledSlice> data);

/// SGD on the summed head losses; returns the mean loss before training
/// followed by the mean loss after each epoch. Only trainable parameters move.
std::vector<double> train_classifier(CharacteristicClassifier &c, std::span<const LabeledSlice> data,
                                     const ClassifierHyper &hyper);

Prediction classify(const CharacteristicClassifier &c, const FeatureMatrix &slice);

/// Adds an untrained head; the encoder and other heads are left untouched.
void add_head(CharacteristicClassifier &c, const std::string &group, const std::vector<std::string> &values,
              std::uint64_t seed);

void save_classifier(const CharacteristicClassifier &c, const std::filesystem::path &path);
CharacteristicClassifier load_classifier(const std::filesystem::path &path);

} // namespace piw

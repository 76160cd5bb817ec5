// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy pre-LN encoder–decoder transformer. Feature frames enter through a
// linear projection plus sinusoidal positions; the decoder uses learned
// positional embeddings initialized to sinusoids. Query and key projections of
// encoder self-attention, decoder self-attention, and decoder cross-attention
// are LoRA injection points.

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
#include "piw/lora.hpp"
#include "piw/matrix.hpp"

namespace piw {

inline constexpr std::size_t kPadToken = 0;
inline constexpr std::size_t kBosToken = 1;
inline constexpr std::size_t kEosToken = 2;
inline constexpr std::size_t kFirstWordToken = 3;

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t enc_layers = 1;
    std::size_t dec_layers = 1;
    std::size_t d_ff = 64;
    std::size_t vocab = 32;
    std::size_t feature_bins = 16;
    std::size_t max_src_frames = 64;
    std::size_t max_tgt_tokens = 8;
    std::uint64_t seed = 42;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    /// Stable digest used to bind profiles to a backbone.
    std::string hash() const;

    friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

struct DecodeResult {
    std::vector<std::size_t> tokens; ///< word tokens, no BOS/EOS/PAD
    bool terminated = false;         ///< EOS emitted before the length cap
};

/// Teacher-forcing pair: features and the target word tokens (no BOS/EOS).
struct Utterance {
    FeatureMatrix features;
    std::vector<std::size_t> tokens;
};

class ToyAsrModel {
public:
    ToyAsrModel() = default;
    ToyAsrModel(ModelConfig cfg, ParamSet params);

    const ModelConfig &config() const { return cfg_; }
    const ParamSet &params() const { return params_; }
    ParamSet &params_mut() { return params_; }
    const std::vector<InjectionPoint> &injection_points() const { return points_; }

    /// x · Wᵀ (+ adapter delta) for one injection point; rows of `x` are inputs.
    Matrix project(const std::string &layer_id, const Matrix &x, const MergedAdapter *adapter) const;

    friend bool operator==(const ToyAsrModel &a, const ToyAsrModel &b) {
        return a.cfg_ == b.cfg_ && a.params_ == b.params_;
    }

private:
    ModelConfig cfg_;
    ParamSet params_;
    std::vector<InjectionPoint> points_;
};

std::vector<InjectionPoint> injection_points_for(const ModelConfig &cfg);

/// Seeded Gaussian (std 0.02) weights, unit layer-norm gains, zero biases.
ToyAsrModel init_model(const ModelConfig &cfg);

/// Low-rank delta bound on a tape: delta(x) = x · aᵀ · bᵀ.
struct LayerAdapter {
    ad::Var a;
    ad::Var b;
};
using AdapterBindings = std::map<std::string, LayerAdapter>;

AdapterBindings bind_adapter(ad::Tape &tape, const MergedAdapter &adapter);

/// Builds the teacher-forced graph and returns the mean token cross-entropy.
/// `base` must hold a Var for every model parameter path.
ad::Var teacher_forced_loss(ad::Tape &tape, const ToyAsrModel &model, const ad::Bindings &base,
                            const AdapterBindings &adapters, const FeatureMatrix &features,
                            std::span<const std::size_t> target, ad::Var *logits_out = nullptr);

struct ForwardResult {
    double loss = 0.0;
    Matrix logits; ///< (len(target)+1) × vocab
};

ForwardResult forward_loss(const ToyAsrModel &model, const MergedAdapter *adapter,
                           const FeatureMatrix &features, std::span<const std::size_t> target);

DecodeResult greedy_decode(const ToyAsrModel &model, const MergedAdapter *adapter,
                           const FeatureMatrix &features);

struct PretrainHyper {
    double lr = 0.3;
    std::size_t epochs = 20;
    std::size_t batch = 16;
    std::uint64_t seed = 42;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 1.0;
};

/// SGD over every parameter, then freezes the whole ParamSet.
ToyAsrModel pretrain_base(ToyAsrModel model, std::span<const Utterance> generic,
                          const PretrainHyper &hyper);

/// Mean teacher-forced loss over `data` (no adapter).
double mean_loss(const ToyAsrModel &model, std::span<const Utterance> data,
                 const MergedAdapter *adapter = nullptr);

void save_model(const ToyAsrModel &model, const std::filesystem::path &path);
ToyAsrModel load_model(const std::filesystem::path &path);

} // namespace piw

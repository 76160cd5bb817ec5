// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration and the two inference workflows. Each labeled sample
// trains the profile of every characteristic value it carries; a request is
// answered by merging the profiles selected for its (given or predicted)
// characteristics and decoding with the merged adapter.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "piw/asr_model.hpp"
#include "piw/classifier.hpp"
#include "piw/lora.hpp"
#include "piw/profile_library.hpp"
#include "piw/synth_data.hpp"

namespace piw {

struct LabeledUtterance {
    Utterance utterance;
    std::string transcript;
    std::map<std::string, std::string> labels;
};

/// Loads every feature file of `manifest` and tokenizes its transcripts.
std::vector<LabeledUtterance> load_utterances(const Manifest &manifest, const WordTokenizer &tokenizer);

/// Classifier inputs (first `n_frames` frames) with their labels.
std::vector<LabeledSlice> classifier_slices(std::span<const LabeledUtterance> data, std::size_t n_frames);

struct LoraHyper {
    double lr = 0.2;
    std::size_t epochs = 10;
    std::size_t batch = 8;
    std::uint64_t seed = 42;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 1.0;
};

/// Number of SGD steps `train_lora` takes on `n` samples.
std::size_t lora_steps(std::size_t n, const LoraHyper &hyper);

/// SGD on the profile's factors only; the model stays frozen. Adds the steps
/// taken to `trained_steps`. An empty dataset leaves the profile unchanged.
LoraProfile train_lora(const ToyAsrModel &model, LoraProfile profile,
                       std::span<const LabeledUtterance *const> data, const LoraHyper &hyper);

/// Mean teacher-forced loss with a single profile applied.
double profile_loss(const ToyAsrModel &model, const LoraProfile &profile,
                    std::span<const LabeledUtterance *const> data);

/// Learning-rate values searched by `train_profiles`.
std::vector<double> wide_lr_grid();

struct TrainSpec {
    std::vector<double> lr_grid = {0.2};
    std::size_t epochs = 10;
    std::size_t batch = 8;
    std::uint64_t seed = 42;
    /// Worker threads for independent profile trainings.
    std::size_t jobs = 1;

    void validate() const;
};

struct ProfileReport {
    std::string group;
    std::string value;
    double lr_selected = 0.0;
    std::optional<double> val_wer; ///< absent when no validation samples
    std::uint64_t steps = 0;
    std::size_t samples = 0;
    std::string warning;
};

struct TrainingReport {
    std::vector<ProfileReport> profiles;
    nlohmann::json to_json() const;
};

/// Trains one profile per (group, value) of the library taxonomy on the
/// samples carrying that value; keeps the lr candidate with the lowest
/// validation WER. Persists all profiles as one library version.
TrainingReport train_profiles(ProfileLibrary &lib, const ToyAsrModel &model,
                              std::span<const LabeledUtterance> train, std::span<const LabeledUtterance> val,
                              const WordTokenizer &tokenizer, const TrainSpec &spec);

/// One profile trained on every sample regardless of labels, stored under
/// the reserved baseline group.
ProfileReport train_one_for_all(ProfileLibrary &lib, const ToyAsrModel &model,
                                std::span<const LabeledUtterance> train, std::span<const LabeledUtterance> val,
                                const WordTokenizer &tokenizer, const TrainSpec &spec);

/// Adds a value with a profile trained on `train` samples carrying it (no
/// training when none do). Existing profiles are untouched.
ProfileReport add_value_trained(ProfileLibrary &lib, const ToyAsrModel &model, const std::string &group,
                                const std::string &value, std::span<const LabeledUtterance> train,
                                std::span<const LabeledUtterance> val, const WordTokenizer &tokenizer,
                                const TrainSpec &spec, std::size_t rank);

struct InferenceRequest {
    FeatureMatrix features;
    CharacteristicMode mode = CharacteristicMode::known;
    std::optional<std::map<std::string, std::string>> assignment;
    /// Restricts profile selection to these groups; absent means every group.
    std::optional<std::vector<std::string>> groups;
    WeightMode weight_mode = WeightMode::both;
};

struct InferenceResult {
    std::string text;
    std::vector<std::size_t> tokens;
    std::map<std::string, std::string> assignment;
    std::string adapter; ///< merged profile description, "none" for the base model
};

/// Builds the merged adapter for `profiles` (w_k = 1/K), or nothing when empty.
std::optional<MergedAdapter> adapter_for(std::span<const LoraProfile> profiles, WeightMode mode = WeightMode::both);

/// Resolves the assignment (classifier in inferred mode), merges the selected
/// profiles, and greedy-decodes.
InferenceResult infer(const ToyAsrModel &model, const ProfileLibrary &lib, const CharacteristicClassifier *classifier,
                      const InferenceRequest &request, const WordTokenizer &tokenizer);

/// Decodes with an explicit adapter (or none).
std::string transcribe(const ToyAsrModel &model, const MergedAdapter *adapter, const FeatureMatrix &features,
                       const WordTokenizer &tokenizer);

} // namespace piw

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic corpus. An utterance is a random word sequence; each
// word contributes a fixed template column repeated for `frames_per_word`
// frames. Every characteristic value adds its own rank-1 signature
// strength · u ⊗ s (u over bins, s over frames) to the whole utterance, so
// speakers sharing a value share a systematic distortion the base model never
// saw. The generic split carries no signatures.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "piw/features.hpp"
#include "piw/taxonomy.hpp"

namespace piw {

std::vector<std::string> default_vocabulary();
CharacteristicTaxonomy default_taxonomy();

struct SynthConfig {
    CharacteristicTaxonomy taxonomy = default_taxonomy();
    std::vector<std::string> vocab = default_vocabulary();
    std::size_t min_words = 3;
    std::size_t max_words = 6;
    std::size_t frames_per_word = 4;
    std::size_t feature_bins = 16;
    double noise_sigma = 0.1;
    double signature_strength = 0.5;
    std::size_t samples_per_combination = 40;
    /// Share of the whole corpus that is the unlabeled generic split.
    double generic_fraction = 0.8;
    /// Multiplier on samples for combinations containing a group's first value.
    std::size_t skew = 1;
    std::uint64_t seed = 42;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json &j);
    std::size_t max_frames() const { return max_words * frames_per_word; }
};

struct Sample {
    std::string features; ///< path relative to the manifest directory
    std::string transcript;
    std::map<std::string, std::string> labels;

    friend bool operator==(const Sample &, const Sample &) = default;
};

struct Manifest {
    std::string split;
    CharacteristicTaxonomy taxonomy;
    std::vector<std::string> vocab;
    nlohmann::json generator = nlohmann::json::object();
    std::string digest;
    std::vector<Sample> samples;
    /// Directory that relative feature paths resolve against (not serialized).
    std::filesystem::path base_dir;

    std::filesystem::path feature_path(const Sample &s) const { return base_dir / s.features; }

    friend bool operator==(const Manifest &a, const Manifest &b) {
        return a.split == b.split && a.taxonomy == b.taxonomy && a.vocab == b.vocab &&
               a.generator == b.generator && a.digest == b.digest && a.samples == b.samples;
    }
};

struct GeneratedDataset {
    Manifest generic;
    Manifest train;
    Manifest val;
    Manifest test;
};

/// Word template column for vocab index `word` (bins values).
std::vector<double> word_template(const SynthConfig &cfg, std::size_t word);
/// bins × frames signature for one characteristic value: strength · u ⊗ s,
/// u unit-RMS over bins, s nonzero on one frame phase per word (drawn per value)
/// and unit-RMS over each word.
Matrix signature_matrix(const SynthConfig &cfg, const std::string &group, const std::string &value,
                        std::size_t frames);

/// Writes feature files and generic/train/val/test manifests under `out_dir`.
GeneratedDataset generate_dataset(const SynthConfig &cfg, const std::filesystem::path &out_dir);

nlohmann::json manifest_to_json(const Manifest &m);
void save_manifest(const Manifest &m, const std::filesystem::path &path);
/// Validates schema, taxonomy labels, digest, and that every feature file exists.
Manifest load_manifest(const std::filesystem::path &path);

/// Lowercase whitespace-separated words ↔ model token ids.
class WordTokenizer {
public:
    explicit WordTokenizer(std::vector<std::string> words);

    std::vector<std::size_t> encode(const std::string &text) const;
    std::string decode(const std::vector<std::size_t> &tokens) const;
    std::size_t required_vocab() const;
    const std::vector<std::string> &words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::map<std::string, std::size_t> index_;
};

} // namespace piw

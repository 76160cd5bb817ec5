// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "piw/asr_model.hpp"
#include "piw/classifier.hpp"
#include "piw/pipeline.hpp"
#include "piw/profile_library.hpp"

namespace piw {

struct WerBreakdown {
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;
    std::size_t ref_words = 0;

    std::size_t errors() const { return substitutions + deletions + insertions; }
    double wer() const { return static_cast<double>(errors()) / static_cast<double>(ref_words); }
};

/// Lowercase, whitespace-split tokens.
std::vector<std::string> normalize_words(const std::string &text);

/// Word-level Levenshtein alignment. Ties in the traceback prefer
/// substitution, then deletion, then insertion. Throws UndefinedWerError for
/// an empty reference.
WerBreakdown wer(const std::string &ref, const std::string &hyp);

/// Unit-cost edit distance between word sequences.
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

/// Reported instead of a ratio when the best WER is zero and the worst is not.
inline constexpr double kDirInfinity = std::numeric_limits<double>::infinity();

struct FairnessMetrics {
    double spd = 0.0;
    double dir = 1.0;
};

/// spd = max − min, dir = max / min over per-value WERs (≥ 2 values).
FairnessMetrics fairness_metrics(const std::map<std::string, double> &wers);

/// Which adapter an evaluation decodes with.
struct AdapterSelection {
    enum class Kind { base, one_for_all, profiles };
    Kind kind = Kind::profiles;
    /// For `profiles`: the groups whose profiles are merged; empty means all.
    std::vector<std::string> groups;

    static AdapterSelection base_model() { return {Kind::base, {}}; }
    static AdapterSelection one_for_all() { return {Kind::one_for_all, {}}; }
    static AdapterSelection merged(std::vector<std::string> groups = {}) { return {Kind::profiles, std::move(groups)}; }
    /// "base", "one-for-all", "all", or a comma-separated group list.
    static AdapterSelection parse(const std::string &text);
    std::string to_string() const;
};

struct ValueWer {
    std::string value;
    double wer = 0.0;
    std::size_t n_words = 0;
    std::size_t errors = 0;
};

struct GroupFairness {
    std::string group;
    std::vector<ValueWer> values; ///< taxonomy order; values without test words are omitted
    FairnessMetrics metrics;
};

struct EvaluationReport {
    double overall_wer = 0.0;
    std::size_t total_words = 0;
    std::vector<GroupFairness> groups;
    CharacteristicMode mode = CharacteristicMode::known;
    std::string adapter;
    std::vector<std::string> hypotheses; ///< per sample, manifest order

    nlohmann::json to_json() const;
};

/// Transcribes every sample through `infer` and aggregates micro-averaged
/// WER overall and per characteristic value.
EvaluationReport evaluate(const ToyAsrModel &model, const ProfileLibrary &lib,
                          const CharacteristicClassifier *classifier, std::span<const LabeledUtterance> test,
                          CharacteristicMode mode, const AdapterSelection &selection, const WordTokenizer &tokenizer,
                          WeightMode weight_mode = WeightMode::both);

struct LatencyPoint {
    std::size_t k = 0;
    double mean_seconds = 0.0;
    double stddev_seconds = 0.0;
    std::size_t iterations = 0;
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Least-squares line through (x, y); r2 is 1 when y is constant and fitted exactly.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

struct LatencyReport {
    std::vector<LatencyPoint> points;
    LinearFit fit; ///< over points with k ≥ 1

    nlohmann::json to_json() const;
};

/// Times merge + greedy decode of `features` with the first K of `profiles`
/// for each K (K = 0 is the bare model). Throws InputError when a K exceeds the
/// available profiles or iterations < 5.
LatencyReport bench_latency(const ToyAsrModel &model, std::span<const LoraProfile> profiles,
                            std::span<const std::size_t> k_values, std::size_t iterations,
                            const FeatureMatrix &features);

} // namespace piw

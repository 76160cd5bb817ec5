// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "piw/matrix.hpp"

namespace piw {

/// A named linear projection W (out_dim × in_dim) that accepts a low-rank delta.
struct InjectionPoint {
    std::string layer_id;
    std::size_t out_dim = 0;
    std::size_t in_dim = 0;

    friend bool operator==(const InjectionPoint &, const InjectionPoint &) = default;
};

struct LoraLayer {
    Matrix a; ///< rank × in_dim
    Matrix b; ///< out_dim × rank

    friend bool operator==(const LoraLayer &, const LoraLayer &) = default;
};

/// One factor pair per injection point, trained for a single characteristic value.
struct LoraProfile {
    std::string group;
    std::string value;
    std::size_t rank = 0;
    double alpha = 0.0;
    std::map<std::string, LoraLayer> layers;
    std::uint64_t trained_steps = 0;

    double scaling() const { return alpha / static_cast<double>(rank); }

    friend bool operator==(const LoraProfile &, const LoraProfile &) = default;
};

/// How merge weights enter the concatenated factors.
///   both:   w_k scales both A_k and B_k (effective per-profile scale w_k²)
///   single: w_k scales B_k only (effective per-profile scale w_k)
enum class WeightMode { both, single };

WeightMode parse_weight_mode(const std::string &text);
std::string to_string(WeightMode mode);

struct MergedLayer {
    Matrix a_hat; ///< (Σ r_k) × in_dim
    Matrix b_hat; ///< out_dim × (Σ r_k)
};

struct MergedAdapter {
    std::vector<LoraProfile> profiles;
    std::vector<double> weights;
    WeightMode mode = WeightMode::both;
    std::map<std::string, MergedLayer> layers;

    std::size_t total_rank() const;
    /// "group/value+group/value" in merge order, "none" when empty.
    std::string description() const;
};

/// Gaussian A (std 0.01, seeded from seed/group/value), B exactly zero.
/// `alpha` defaults to `rank`.
LoraProfile init_profile(const std::string &group, const std::string &value, std::size_t rank,
                         std::span<const InjectionPoint> points, std::uint64_t seed,
                         std::optional<double> alpha = std::nullopt);

/// Concatenation merge: per layer, B̂ = [w_1·s_1·B_1 | … | w_K·s_K·B_K] and
/// Â = [w_1·A_1; …; w_K·A_K] (A unscaled in single mode), where s_k = α_k/r_k.
/// Default weights are 1/K.
MergedAdapter merge_profiles(std::span<const LoraProfile> profiles,
                             std::optional<std::vector<double>> weights = std::nullopt,
                             WeightMode mode = WeightMode::both);

/// B̂ · (Â · x)
std::vector<double> merged_delta(const MergedAdapter &adapter, const std::string &layer_id,
                                 std::span<const double> x);

/// "PIWLORA1" binary format with trailing CRC32. `trained_steps` lives in the
/// library manifest, not the profile file.
void save_profile(const LoraProfile &profile, const std::filesystem::path &path);
LoraProfile load_profile(const std::filesystem::path &path);
std::vector<std::uint8_t> encode_profile(const LoraProfile &profile);
LoraProfile decode_profile(std::span<const std::uint8_t> bytes, const std::string &source);

/// Stable 64-bit seed derived from a base seed and a list of labels.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::string_view> labels);

} // namespace piw

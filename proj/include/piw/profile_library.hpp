// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk profile libraries: one LoRA profile file per (group, value) under
// <root>/profiles/<group>/<value>.piwlora, indexed by <root>/library.json.
// Every mutation writes a new manifest and renames it into place, so readers
// always see a consistent snapshot.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "piw/asr_model.hpp"
#include "piw/lora.hpp"
#include "piw/taxonomy.hpp"

namespace piw {

/// Group id under which the One-for-All baseline profile is stored. It never
/// takes part in characteristic-based selection.
inline constexpr const char *kBaselineGroup = "_baseline";
inline constexpr const char *kBaselineValue = "all";

struct ProfileEntry {
    std::string group;
    std::string value;
    std::string path; ///< relative to the library root
    std::string crc32;
    std::uint64_t trained_steps = 0;

    friend bool operator==(const ProfileEntry &, const ProfileEntry &) = default;
};

struct LibraryOptions {
    std::size_t rank = 4;
    std::optional<double> alpha;
    std::uint64_t seed = 42;
};

class ProfileLibrary {
public:
    /// Creates a library at version 1 with an untrained profile per value.
    static ProfileLibrary create(const std::filesystem::path &root, const CharacteristicTaxonomy &taxonomy,
                                 const ModelConfig &model_config, const LibraryOptions &options = {});
    /// Loads library.json; throws MissingFileError/FormatError.
    static ProfileLibrary open(const std::filesystem::path &root);

    const std::filesystem::path &root() const { return root_; }
    std::uint64_t version() const { return version_; }
    const CharacteristicTaxonomy &taxonomy() const { return taxonomy_; }
    const std::string &model_config_hash() const { return model_config_hash_; }
    const std::vector<ProfileEntry> &entries() const { return entries_; }
    const ProfileEntry *find(const std::string &group, const std::string &value) const;

    /// Throws ConfigError if `cfg` is not the backbone the library was built for.
    void check_model(const ModelConfig &cfg) const;

    /// Reads and checksum-verifies one profile (CorruptFileError on mismatch).
    LoraProfile load(const std::string &group, const std::string &value) const;

    /// Writes the given profiles (replacing files of the same (group, value))
    /// and commits them as a single new version.
    void store(const std::vector<LoraProfile> &profiles);

    /// Adds `value` to `group` (creating the group when absent) together with
    /// its profile, as one new version. Other profile files are not touched.
    /// Throws ConflictError if the value exists.
    void add_value(const LoraProfile &profile);

    /// One profile per assigned group, in taxonomy order; unassigned groups
    /// are skipped. LookupError names the unknown group or value.
    std::vector<LoraProfile> select_profiles(const std::map<std::string, std::string> &assignment) const;

    nlohmann::json to_json() const;

private:
    ProfileLibrary() = default;
    std::string relative_path(const std::string &group, const std::string &value) const;
    ProfileEntry write_profile(const LoraProfile &profile) const;
    void commit();

    std::filesystem::path root_;
    std::uint64_t version_ = 0;
    std::string model_config_hash_;
    CharacteristicTaxonomy taxonomy_;
    std::vector<ProfileEntry> entries_;
};

struct OverheadReport {
    double p_enc = 0.0;
    double p_h = 0.0;
    double p_pro = 0.0;
    std::size_t k = 0;
    std::size_t total_profiles = 0;
    double p_total = 0.0;
    double base_params = 0.0;
    double overhead_ratio = 0.0;
    CharacteristicMode mode = CharacteristicMode::inferred;

    nlohmann::json to_json() const;
};

/// P_total = (inferred ? P_enc + P_h·K : 0) + P_pro·Σ|C^k| with K = |C|.
OverheadReport compute_overhead(double p_enc, double p_h, double p_pro, const CharacteristicTaxonomy &taxonomy,
                                double base_params, CharacteristicMode mode);

} // namespace piw

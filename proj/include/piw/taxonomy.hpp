// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace piw {

/// Known: characteristics are supplied with the request. Inferred: a
/// classifier predicts them from the audio.
enum class CharacteristicMode { known, inferred };

CharacteristicMode parse_mode(const std::string &text);
std::string to_string(CharacteristicMode mode);

/// Parses "group=value,group=value" into an assignment map.
std::map<std::string, std::string> parse_assignment(const std::string &text);

struct CharacteristicGroup {
    std::string id;
    std::vector<std::string> values;

    friend bool operator==(const CharacteristicGroup &, const CharacteristicGroup &) = default;
};

/// Ordered characteristic groups (e.g. accent, gender, age) and their values.
class CharacteristicTaxonomy {
public:
    CharacteristicTaxonomy() = default;
    /// Throws TaxonomyError on duplicate group ids or duplicate values in a group.
    explicit CharacteristicTaxonomy(std::vector<CharacteristicGroup> groups);

    const std::vector<CharacteristicGroup> &groups() const { return groups_; }
    std::size_t group_count() const { return groups_.size(); }
    std::size_t total_values() const;
    const CharacteristicGroup *find(const std::string &group) const;
    std::optional<std::size_t> index_of(const std::string &group) const;
    bool has_value(const std::string &group, const std::string &value) const;

    /// Appends `value` to `group`, creating the group at the end when absent.
    /// Throws ConflictError if the value already exists.
    void add_value(const std::string &group, const std::string &value);

    /// [{"group": ..., "values": [...]}, ...]
    nlohmann::json to_json() const;
    /// Accepts the array form or an object carrying a "taxonomy" array.
    static CharacteristicTaxonomy from_json(const nlohmann::json &j);

    friend bool operator==(const CharacteristicTaxonomy &, const CharacteristicTaxonomy &) = default;

private:
    std::vector<CharacteristicGroup> groups_;
};

} // namespace piw

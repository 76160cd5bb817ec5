// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/taxonomy.hpp"

#include <algorithm>
#include <set>

#include "piw/errors.hpp"

namespace piw {

CharacteristicMode parse_mode(const std::string &text) {
    if (text == "known") {
        return CharacteristicMode::known;
    }
    if (text == "inferred") {
        return CharacteristicMode::inferred;
    }
    throw ConfigError("unknown mode '" + text + "' (expected known or inferred)");
}

std::string to_string(CharacteristicMode mode) {
    return mode == CharacteristicMode::known ? "known" : "inferred";
}

std::map<std::string, std::string> parse_assignment(const std::string &text) {
    std::map<std::string, std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        const std::string item = text.substr(start, comma - start);
        start = comma + 1;
        if (item.empty()) {
            if (comma == text.size()) {
                break;
            }
            continue;
        }
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == item.size()) {
            throw ConfigError("characteristic '" + item + "' is not of the form group=value");
        }
        const std::string group = item.substr(0, eq);
        if (!out.emplace(group, item.substr(eq + 1)).second) {
            throw ConfigError("characteristic group '" + group + "' assigned twice");
        }
    }
    return out;
}

CharacteristicTaxonomy::CharacteristicTaxonomy(std::vector<CharacteristicGroup> groups)
    : groups_(std::move(groups)) {
    std::set<std::string> ids;
    for (const auto &g : groups_) {
        if (g.id.empty()) {
            throw TaxonomyError("taxonomy: empty group id");
        }
        if (!ids.insert(g.id).second) {
            throw TaxonomyError("taxonomy: duplicate group '" + g.id + "'");
        }
        std::set<std::string> values;
        for (const auto &v : g.values) {
            if (v.empty()) {
                throw TaxonomyError("taxonomy: empty value in group '" + g.id + "'");
            }
            if (!values.insert(v).second) {
                throw TaxonomyError("taxonomy: duplicate value '" + v + "' in group '" + g.id + "'");
            }
        }
    }
}

std::size_t CharacteristicTaxonomy::total_values() const {
    std::size_t n = 0;
    for (const auto &g : groups_) {
        n += g.values.size();
    }
    return n;
}

const CharacteristicGroup *CharacteristicTaxonomy::find(const std::string &group) const {
    auto it = std::find_if(groups_.begin(), groups_.end(),
                           [&](const CharacteristicGroup &g) { return g.id == group; });
    return it == groups_.end() ? nullptr : &*it;
}

std::optional<std::size_t> CharacteristicTaxonomy::index_of(const std::string &group) const {
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        if (groups_[i].id == group) {
            return i;
        }
    }
    return std::nullopt;
}

bool CharacteristicTaxonomy::has_value(const std::string &group, const std::string &value) const {
    const auto *g = find(group);
    return g != nullptr && std::find(g->values.begin(), g->values.end(), value) != g->values.end();
}

void CharacteristicTaxonomy::add_value(const std::string &group, const std::string &value) {
    if (group.empty() || value.empty()) {
        throw TaxonomyError("taxonomy: group and value ids must be non-empty");
    }
    if (has_value(group, value)) {
        throw ConflictError("value '" + value + "' already exists in group '" + group + "'");
    }
    for (auto &g : groups_) {
        if (g.id == group) {
            g.values.push_back(value);
            return;
        }
    }
    groups_.push_back({group, {value}});
}

nlohmann::json CharacteristicTaxonomy::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &g : groups_) {
        arr.push_back({{"group", g.id}, {"values", g.values}});
    }
    return arr;
}

CharacteristicTaxonomy CharacteristicTaxonomy::from_json(const nlohmann::json &j) {
    const nlohmann::json &arr = j.is_object() && j.contains("taxonomy") ? j.at("taxonomy") : j;
    if (!arr.is_array()) {
        throw FormatError("taxonomy: expected an array of {group, values}");
    }
    std::vector<CharacteristicGroup> groups;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto &e = arr[i];
        if (!e.is_object() || !e.contains("group") || !e.at("group").is_string() ||
            !e.contains("values") || !e.at("values").is_array()) {
            throw FormatError("taxonomy[" + std::to_string(i) + "]: expected {group: string, values: [string]}");
        }
        CharacteristicGroup g{e.at("group").get<std::string>(), {}};
        for (const auto &v : e.at("values")) {
            if (!v.is_string()) {
                throw FormatError("taxonomy[" + std::to_string(i) + "].values: expected strings");
            }
            g.values.push_back(v.get<std::string>());
        }
        groups.push_back(std::move(g));
    }
    return CharacteristicTaxonomy(std::move(groups));
}

} // namespace piw

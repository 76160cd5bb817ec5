// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/profile_library.hpp"

#include <algorithm>
#include <fstream>

#include "piw/binary_io.hpp"
#include "piw/errors.hpp"

namespace piw {

namespace {

constexpr const char *kManifestName = "library.json";

void check_id(const std::string &id, const char *what) {
    if (id.empty() || id.find('/') != std::string::npos || id.find('\\') != std::string::npos ||
        id.front() == '.') {
        throw ConfigError(std::string(what) + " id '" + id + "' is not usable as a file name");
    }
}

} // namespace

ProfileLibrary ProfileLibrary::create(const std::filesystem::path &root, const CharacteristicTaxonomy &taxonomy,
                                      const ModelConfig &model_config, const LibraryOptions &options) {
    model_config.validate();
    ProfileLibrary lib;
    lib.root_ = root;
    lib.taxonomy_ = taxonomy;
    lib.model_config_hash_ = model_config.hash();
    const auto points = injection_points_for(model_config);
    for (const auto &g : taxonomy.groups()) {
        check_id(g.id, "group");
        if (g.id == kBaselineGroup) {
            throw TaxonomyError(std::string("group id '") + kBaselineGroup + "' is reserved");
        }
        for (const auto &v : g.values) {
            check_id(v, "value");
            const auto profile = init_profile(g.id, v, options.rank, points, options.seed, options.alpha);
            lib.entries_.push_back(lib.write_profile(profile));
        }
    }
    std::filesystem::create_directories(root);
    lib.commit();
    return lib;
}

ProfileLibrary ProfileLibrary::open(const std::filesystem::path &root) {
    const auto path = root / kManifestName;
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("library manifest '" + path.string() + "' does not exist");
    }
    nlohmann::json j;
    try {
        std::ifstream in(path);
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
    ProfileLibrary lib;
    lib.root_ = root;
    try {
        lib.version_ = j.at("version").get<std::uint64_t>();
        lib.model_config_hash_ = j.at("model_config_hash").get<std::string>();
        lib.taxonomy_ = CharacteristicTaxonomy::from_json(j.at("taxonomy"));
        for (const auto &e : j.at("profiles")) {
            lib.entries_.push_back({e.at("group").get<std::string>(), e.at("value").get<std::string>(),
                                    e.at("path").get<std::string>(), e.at("crc32").get<std::string>(),
                                    e.at("trained_steps").get<std::uint64_t>()});
        }
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    } catch (const TaxonomyError &e) {
        throw FormatError(path.string() + ": taxonomy: " + e.what());
    }
    return lib;
}

const ProfileEntry *ProfileLibrary::find(const std::string &group, const std::string &value) const {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const ProfileEntry &e) { return e.group == group && e.value == value; });
    return it == entries_.end() ? nullptr : &*it;
}

void ProfileLibrary::check_model(const ModelConfig &cfg) const {
    if (cfg.hash() != model_config_hash_) {
        throw ConfigError("profile library '" + root_.string() + "' was built for model config " +
                          model_config_hash_ + ", not " + cfg.hash());
    }
}

LoraProfile ProfileLibrary::load(const std::string &group, const std::string &value) const {
    const ProfileEntry *e = find(group, value);
    if (e == nullptr) {
        throw LookupError("no profile for " + group + "/" + value + " in library");
    }
    const auto path = root_ / e->path;
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("profile file '" + path.string() + "' does not exist");
    }
    const auto bytes = io::read_file(path);
    if (io::crc32_hex(bytes) != e->crc32) {
        throw CorruptFileError("profile file '" + path.string() + "' does not match its library checksum");
    }
    LoraProfile p = decode_profile(bytes, path.string());
    if (p.group != group || p.value != value) {
        throw CorruptFileError("profile file '" + path.string() + "' holds " + p.group + "/" + p.value);
    }
    p.trained_steps = e->trained_steps;
    return p;
}

std::string ProfileLibrary::relative_path(const std::string &group, const std::string &value) const {
    return "profiles/" + group + "/" + value + ".piwlora";
}

ProfileEntry ProfileLibrary::write_profile(const LoraProfile &profile) const {
    const std::string rel = relative_path(profile.group, profile.value);
    const auto bytes = encode_profile(profile);
    io::write_file_atomic(root_ / rel, bytes);
    return {profile.group, profile.value, rel, io::crc32_hex(bytes), profile.trained_steps};
}

void ProfileLibrary::store(const std::vector<LoraProfile> &profiles) {
    for (const auto &p : profiles) {
        const bool known = p.group == kBaselineGroup || taxonomy_.has_value(p.group, p.value);
        if (!known) {
            throw LookupError("library has no value " + p.group + "/" + p.value + "; use add_value");
        }
        check_id(p.value, "value");
    }
    for (const auto &p : profiles) {
        ProfileEntry e = write_profile(p);
        auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const ProfileEntry &x) { return x.group == p.group && x.value == p.value; });
        if (it == entries_.end()) {
            entries_.push_back(std::move(e));
        } else {
            *it = std::move(e);
        }
    }
    commit();
}

void ProfileLibrary::add_value(const LoraProfile &profile) {
    check_id(profile.group, "group");
    check_id(profile.value, "value");
    if (profile.group == kBaselineGroup) {
        throw TaxonomyError(std::string("group id '") + kBaselineGroup + "' is reserved");
    }
    CharacteristicTaxonomy grown = taxonomy_;
    grown.add_value(profile.group, profile.value);
    entries_.push_back(write_profile(profile));
    taxonomy_ = std::move(grown);
    commit();
}

std::vector<LoraProfile>
ProfileLibrary::select_profiles(const std::map<std::string, std::string> &assignment) const {
    for (const auto &[group, value] : assignment) {
        if (taxonomy_.find(group) == nullptr) {
            throw LookupError("unknown characteristic group '" + group + "' (value '" + value + "')");
        }
        if (!taxonomy_.has_value(group, value)) {
            throw LookupError("unknown value '" + value + "' in characteristic group '" + group + "'");
        }
    }
    std::vector<LoraProfile> out;
    for (const auto &g : taxonomy_.groups()) {
        auto it = assignment.find(g.id);
        if (it != assignment.end()) {
            out.push_back(load(g.id, it->second));
        }
    }
    return out;
}

nlohmann::json ProfileLibrary::to_json() const {
    nlohmann::json profiles = nlohmann::json::array();
    for (const auto &e : entries_) {
        profiles.push_back({{"group", e.group},
                            {"value", e.value},
                            {"path", e.path},
                            {"crc32", e.crc32},
                            {"trained_steps", e.trained_steps}});
    }
    return {{"version", version_},
            {"model_config_hash", model_config_hash_},
            {"taxonomy", taxonomy_.to_json()},
            {"profiles", profiles}};
}

void ProfileLibrary::commit() {
    ++version_;
    io::write_text_atomic(root_ / kManifestName, to_json().dump(2) + "\n");
}

nlohmann::json OverheadReport::to_json() const {
    return {{"p_enc", p_enc},
            {"p_h", p_h},
            {"p_pro", p_pro},
            {"k", k},
            {"total_profiles", total_profiles},
            {"p_total", p_total},
            {"base_params", base_params},
            {"overhead_ratio", overhead_ratio},
            {"mode", to_string(mode)}};
}

OverheadReport compute_overhead(double p_enc, double p_h, double p_pro, const CharacteristicTaxonomy &taxonomy,
                                double base_params, CharacteristicMode mode) {
    if (p_enc < 0.0 || p_h < 0.0 || p_pro < 0.0 || base_params < 0.0) {
        throw InputError("overhead: parameter counts must be non-negative");
    }
    OverheadReport r;
    r.p_enc = p_enc;
    r.p_h = p_h;
    r.p_pro = p_pro;
    r.k = taxonomy.group_count();
    r.total_profiles = taxonomy.total_values();
    r.base_params = base_params;
    r.mode = mode;
    const double classifier = mode == CharacteristicMode::inferred ? p_enc + p_h * static_cast<double>(r.k) : 0.0;
    r.p_total = classifier + p_pro * static_cast<double>(r.total_profiles);
    r.overhead_ratio = base_params > 0.0 ? r.p_total / base_params : 0.0;
    return r;
}

} // namespace piw

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/synth_data.hpp"

#include <cctype>
#include <cmath>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "piw/asr_model.hpp"
#include "piw/binary_io.hpp"
#include "piw/errors.hpp"
#include "piw/lora.hpp"

namespace piw {

namespace {

std::vector<double> unit_rms_gaussian(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(n);
    double sq = 0.0;
    for (double &x : v) {
        x = normal(rng);
        sq += x * x;
    }
    const double rms = std::sqrt(sq / static_cast<double>(n));
    for (double &x : v) {
        x /= rms;
    }
    return v;
}

std::string lowercase(std::string s) {
    for (char &c : s) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

} // namespace

std::vector<std::string> default_vocabulary() {
    return {"the", "cat", "dog", "sat", "ran", "red", "blue", "big", "small", "tree",
            "house", "bird", "fish", "jump", "walk", "sing", "green", "stone", "water", "light"};
}

CharacteristicTaxonomy default_taxonomy() {
    return CharacteristicTaxonomy({{"accent", {"a", "b", "c"}}, {"gender", {"m", "f"}}});
}

void SynthConfig::validate() const {
    if (vocab.empty()) {
        throw ConfigError("synth: vocab must be non-empty");
    }
    if (min_words == 0 || max_words < min_words) {
        throw ConfigError("synth: words_per_utt range invalid");
    }
    if (frames_per_word == 0 || feature_bins == 0) {
        throw ConfigError("synth: frames_per_word and feature_bins must be positive");
    }
    if (noise_sigma < 0.0 || signature_strength < 0.0) {
        throw ConfigError("synth: noise_sigma and signature_strength must be >= 0");
    }
    if (generic_fraction < 0.0 || generic_fraction >= 1.0) {
        throw ConfigError("synth: generic_fraction must be in [0, 1)");
    }
    if (skew == 0) {
        throw ConfigError("synth: skew must be >= 1");
    }
    if (taxonomy.group_count() == 0 && samples_per_combination > 0) {
        throw ConfigError("synth: taxonomy is empty but labeled samples were requested");
    }
    for (const auto &g : taxonomy.groups()) {
        if (g.values.empty()) {
            throw ConfigError("synth: group '" + g.id + "' has no values");
        }
    }
}

nlohmann::json SynthConfig::to_json() const {
    return {{"taxonomy", taxonomy.to_json()},
            {"vocab", vocab},
            {"min_words", min_words},
            {"max_words", max_words},
            {"frames_per_word", frames_per_word},
            {"feature_bins", feature_bins},
            {"noise_sigma", noise_sigma},
            {"signature_strength", signature_strength},
            {"samples_per_combination", samples_per_combination},
            {"generic_fraction", generic_fraction},
            {"skew", skew},
            {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json &j) {
    SynthConfig c;
    try {
        if (j.contains("taxonomy")) c.taxonomy = CharacteristicTaxonomy::from_json(j.at("taxonomy"));
        if (j.contains("vocab")) c.vocab = j.at("vocab").get<std::vector<std::string>>();
        if (j.contains("min_words")) c.min_words = j.at("min_words").get<std::size_t>();
        if (j.contains("max_words")) c.max_words = j.at("max_words").get<std::size_t>();
        if (j.contains("frames_per_word")) c.frames_per_word = j.at("frames_per_word").get<std::size_t>();
        if (j.contains("feature_bins")) c.feature_bins = j.at("feature_bins").get<std::size_t>();
        if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
        if (j.contains("signature_strength")) c.signature_strength = j.at("signature_strength").get<double>();
        if (j.contains("samples_per_combination")) {
            c.samples_per_combination = j.at("samples_per_combination").get<std::size_t>();
        }
        if (j.contains("generic_fraction")) c.generic_fraction = j.at("generic_fraction").get<double>();
        if (j.contains("skew")) c.skew = j.at("skew").get<std::size_t>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("synth config: ") + e.what());
    }
    return c;
}

std::vector<double> word_template(const SynthConfig &cfg, std::size_t word) {
    return unit_rms_gaussian(derive_seed(cfg.seed, {"template", cfg.vocab.at(word)}), cfg.feature_bins);
}

Matrix signature_matrix(const SynthConfig &cfg, const std::string &group, const std::string &value,
                        std::size_t frames) {
    const auto u = unit_rms_gaussian(derive_seed(cfg.seed, {"signature-bins", group, value}),
                                     cfg.feature_bins);
    // Each value disturbs one frame position within every word. Offsets spread
    // over whole words are mostly absorbed by the encoder; a corrupted phase is
    // something a query/key adapter can learn to look past.
    const std::size_t phase = derive_seed(cfg.seed, {"phase", group, value}) % cfg.frames_per_word;
    // Unit RMS over each word, like a dense ±1 pattern.
    const double peak = std::sqrt(static_cast<double>(cfg.frames_per_word));
    std::vector<double> s(frames, 0.0);
    for (std::size_t f = phase; f < frames; f += cfg.frames_per_word) {
        s[f] = peak;
    }
    Matrix m(cfg.feature_bins, frames);
    for (std::size_t b = 0; b < cfg.feature_bins; ++b) {
        for (std::size_t f = 0; f < frames; ++f) {
            m(b, f) = cfg.signature_strength * u[b] * s[f];
        }
    }
    return m;
}

namespace {

struct PendingSample {
    std::vector<std::size_t> words;
    std::map<std::string, std::string> labels;
    std::size_t combo = 0;
};

FeatureMatrix render(const SynthConfig &cfg, const PendingSample &ps,
                     const std::map<std::pair<std::string, std::string>, Matrix> &signatures,
                     std::mt19937_64 &noise_rng) {
    const std::size_t frames = ps.words.size() * cfg.frames_per_word;
    FeatureMatrix f{Matrix(cfg.feature_bins, frames)};
    for (std::size_t w = 0; w < ps.words.size(); ++w) {
        const auto tpl = word_template(cfg, ps.words[w]);
        for (std::size_t t = 0; t < cfg.frames_per_word; ++t) {
            for (std::size_t b = 0; b < cfg.feature_bins; ++b) {
                f.values(b, w * cfg.frames_per_word + t) = tpl[b];
            }
        }
    }
    for (const auto &[group, value] : ps.labels) {
        const Matrix &sig = signatures.at({group, value});
        for (std::size_t b = 0; b < cfg.feature_bins; ++b) {
            for (std::size_t t = 0; t < frames; ++t) {
                f.values(b, t) += sig(b, t);
            }
        }
    }
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double &v : f.values.data()) {
        v += cfg.noise_sigma > 0.0 ? noise(noise_rng) : 0.0;
    }
    return f;
}

std::string transcript_of(const SynthConfig &cfg, const std::vector<std::size_t> &words) {
    std::string s;
    for (std::size_t w : words) {
        if (!s.empty()) {
            s += ' ';
        }
        s += cfg.vocab[w];
    }
    return s;
}

} // namespace

GeneratedDataset generate_dataset(const SynthConfig &cfg, const std::filesystem::path &out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> n_words(cfg.min_words, cfg.max_words);
    std::uniform_int_distribution<std::size_t> pick_word(0, cfg.vocab.size() - 1);
    auto random_words = [&]() {
        std::vector<std::size_t> w(n_words(rng));
        for (auto &x : w) {
            x = pick_word(rng);
        }
        return w;
    };

    // Enumerate value combinations in mixed-radix order, then interleave
    // round-robin so consecutive samples cycle through combinations.
    std::vector<std::map<std::string, std::string>> combos;
    if (cfg.taxonomy.group_count() > 0) {
        std::vector<std::size_t> idx(cfg.taxonomy.group_count(), 0);
        while (true) {
            std::map<std::string, std::string> c;
            for (std::size_t g = 0; g < idx.size(); ++g) {
                c[cfg.taxonomy.groups()[g].id] = cfg.taxonomy.groups()[g].values[idx[g]];
            }
            combos.push_back(std::move(c));
            std::size_t g = idx.size();
            while (g > 0) {
                --g;
                if (++idx[g] < cfg.taxonomy.groups()[g].values.size()) {
                    break;
                }
                idx[g] = 0;
                if (g == 0) {
                    g = static_cast<std::size_t>(-1);
                    break;
                }
            }
            if (g == static_cast<std::size_t>(-1)) {
                break;
            }
        }
    }
    std::vector<std::size_t> quota(combos.size(), cfg.samples_per_combination);
    for (std::size_t c = 0; c < combos.size(); ++c) {
        for (const auto &g : cfg.taxonomy.groups()) {
            if (combos[c].at(g.id) == g.values.front()) {
                quota[c] *= cfg.skew;
            }
        }
    }
    std::vector<PendingSample> labeled;
    for (bool any = true; any;) {
        any = false;
        for (std::size_t c = 0; c < combos.size(); ++c) {
            if (quota[c] > 0) {
                --quota[c];
                labeled.push_back({random_words(), combos[c], c});
                any = true;
            }
        }
    }
    const double total = static_cast<double>(labeled.size()) / (1.0 - cfg.generic_fraction);
    const auto n_generic = static_cast<std::size_t>(std::llround(total * cfg.generic_fraction));
    std::vector<PendingSample> generic(n_generic);
    for (auto &g : generic) {
        g.words = random_words();
    }

    std::map<std::pair<std::string, std::string>, Matrix> signatures;
    for (const auto &g : cfg.taxonomy.groups()) {
        for (const auto &v : g.values) {
            signatures.emplace(std::make_pair(g.id, v), signature_matrix(cfg, g.id, v, cfg.max_frames()));
        }
    }

    GeneratedDataset out;
    const nlohmann::json gen = cfg.to_json();
    const std::string digest = io::crc32_hex(gen.dump());
    for (Manifest *m : {&out.generic, &out.train, &out.val, &out.test}) {
        m->taxonomy = cfg.taxonomy;
        m->vocab = cfg.vocab;
        m->generator = gen;
        m->digest = digest;
        m->base_dir = out_dir;
    }
    out.generic.split = "generic";
    out.train.split = "train";
    out.val.split = "val";
    out.test.split = "test";

    std::mt19937_64 noise_rng(derive_seed(cfg.seed, {"noise"}));
    auto emit = [&](Manifest &m, const PendingSample &ps, std::size_t index) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.feat", index);
        const std::string rel = "features/" + m.split + "/" + name;
        save_features(out_dir / rel, render(cfg, ps, signatures, noise_rng));
        m.samples.push_back({rel, transcript_of(cfg, ps.words), ps.labels});
    };
    for (std::size_t i = 0; i < generic.size(); ++i) {
        emit(out.generic, generic[i], i);
    }
    // 50:20:30 by position within blocks of ten, counted combination by
    // combination so every combination is split in the same proportions.
    std::vector<std::size_t> combo_major(labeled.size());
    std::iota(combo_major.begin(), combo_major.end(), 0);
    std::stable_sort(combo_major.begin(), combo_major.end(),
                     [&](std::size_t a, std::size_t b) { return labeled[a].combo < labeled[b].combo; });
    std::vector<std::size_t> slots(labeled.size());
    for (std::size_t j = 0; j < combo_major.size(); ++j) {
        slots[combo_major[j]] = j % 10;
    }
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        const std::size_t slot = slots[i];
        Manifest &m = slot < 5 ? out.train : (slot < 7 ? out.val : out.test);
        emit(m, labeled[i], m.samples.size());
    }
    for (const Manifest *m : {&out.generic, &out.train, &out.val, &out.test}) {
        save_manifest(*m, out_dir / (m->split + ".json"));
    }
    return out;
}

nlohmann::json manifest_to_json(const Manifest &m) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto &s : m.samples) {
        nlohmann::json labels = nlohmann::json::object();
        for (const auto &[g, v] : s.labels) {
            labels[g] = v;
        }
        samples.push_back({{"features", s.features}, {"transcript", s.transcript}, {"labels", labels}});
    }
    return {{"split", m.split},   {"taxonomy", m.taxonomy.to_json()}, {"vocab", m.vocab},
            {"generator", m.generator}, {"digest", m.digest},          {"samples", samples}};
}

void save_manifest(const Manifest &m, const std::filesystem::path &path) {
    io::write_text_atomic(path, manifest_to_json(m).dump(1) + "\n");
}

Manifest load_manifest(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("manifest '" + path.string() + "' does not exist");
    }
    nlohmann::json j;
    {
        std::ifstream in(path);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error &e) {
            throw FormatError(path.string() + ": invalid JSON: " + e.what());
        }
    }
    auto require = [&](const char *field, bool ok) {
        if (!ok) {
            throw FormatError(path.string() + ": field '" + field + "' missing or mistyped");
        }
    };
    require("", j.is_object());
    require("split", j.contains("split") && j["split"].is_string());
    require("taxonomy", j.contains("taxonomy") && j["taxonomy"].is_array());
    require("vocab", j.contains("vocab") && j["vocab"].is_array());
    require("digest", j.contains("digest") && j["digest"].is_string());
    require("samples", j.contains("samples") && j["samples"].is_array());

    Manifest m;
    m.base_dir = path.parent_path();
    m.split = j["split"].get<std::string>();
    try {
        m.taxonomy = CharacteristicTaxonomy::from_json(j["taxonomy"]);
    } catch (const TaxonomyError &e) {
        throw FormatError(path.string() + ": taxonomy: " + e.what());
    }
    for (std::size_t i = 0; i < j["vocab"].size(); ++i) {
        require("vocab[]", j["vocab"][i].is_string());
        m.vocab.push_back(j["vocab"][i].get<std::string>());
    }
    m.generator = j.value("generator", nlohmann::json::object());
    m.digest = j["digest"].get<std::string>();
    if (m.digest != io::crc32_hex(m.generator.dump())) {
        throw FormatError(path.string() + ": field 'digest' does not match generator config");
    }

    std::set<std::string> seen;
    const auto &arr = j["samples"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string where = "samples[" + std::to_string(i) + "]";
        const auto &e = arr[i];
        if (!e.is_object() || !e.contains("features") || !e["features"].is_string()) {
            throw FormatError(path.string() + ": field '" + where + ".features' missing or mistyped");
        }
        if (!e.contains("transcript") || !e["transcript"].is_string()) {
            throw FormatError(path.string() + ": field '" + where + ".transcript' missing or mistyped");
        }
        Sample s;
        s.features = e["features"].get<std::string>();
        s.transcript = e["transcript"].get<std::string>();
        if (e.contains("labels")) {
            if (!e["labels"].is_object()) {
                throw FormatError(path.string() + ": field '" + where + ".labels' must be an object");
            }
            for (const auto &[g, v] : e["labels"].items()) {
                if (!v.is_string()) {
                    throw FormatError(path.string() + ": field '" + where + ".labels." + g +
                                      "' must be a string");
                }
                if (!m.taxonomy.has_value(g, v.get<std::string>())) {
                    throw FormatError(path.string() + ": field '" + where + ".labels." + g +
                                      "' names unknown value '" + v.get<std::string>() + "'");
                }
                s.labels[g] = v.get<std::string>();
            }
        }
        if (!seen.insert(s.features).second) {
            throw FormatError(path.string() + ": field '" + where + ".features' duplicates '" +
                              s.features + "'");
        }
        if (!std::filesystem::exists(m.feature_path(s))) {
            throw MissingFileError(path.string() + ": " + where + " references missing feature file '" +
                                   m.feature_path(s).string() + "'");
        }
        m.samples.push_back(std::move(s));
    }
    return m;
}

WordTokenizer::WordTokenizer(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        words_[i] = lowercase(words_[i]);
        if (!index_.emplace(words_[i], kFirstWordToken + i).second) {
            throw ConfigError("tokenizer: duplicate word '" + words_[i] + "'");
        }
    }
}

std::vector<std::size_t> WordTokenizer::encode(const std::string &text) const {
    std::istringstream in(lowercase(text));
    std::vector<std::size_t> ids;
    std::string w;
    while (in >> w) {
        auto it = index_.find(w);
        if (it == index_.end()) {
            throw LookupError("tokenizer: unknown word '" + w + "'");
        }
        ids.push_back(it->second);
    }
    return ids;
}

std::string WordTokenizer::decode(const std::vector<std::size_t> &tokens) const {
    std::string s;
    for (std::size_t t : tokens) {
        if (t < kFirstWordToken || t - kFirstWordToken >= words_.size()) {
            continue;
        }
        if (!s.empty()) {
            s += ' ';
        }
        s += words_[t - kFirstWordToken];
    }
    return s;
}

std::size_t WordTokenizer::required_vocab() const { return kFirstWordToken + words_.size(); }

} // namespace piw

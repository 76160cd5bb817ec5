// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/lora.hpp"

#include <random>
#include <set>

#include "piw/binary_io.hpp"
#include "piw/errors.hpp"

namespace piw {

namespace {

constexpr std::string_view kProfileMagic = "PIWLORA1";
constexpr std::uint16_t kProfileVersion = 1;

} // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::string_view> labels) {
    // FNV-1a over the seed bytes and labels, then a splitmix64 finalizer.
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (int i = 0; i < 8; ++i) {
        mix(static_cast<std::uint8_t>(seed >> (8 * i)));
    }
    for (auto label : labels) {
        for (char c : label) {
            mix(static_cast<std::uint8_t>(c));
        }
        mix(0xff);
    }
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

WeightMode parse_weight_mode(const std::string &text) {
    if (text == "both") {
        return WeightMode::both;
    }
    if (text == "single") {
        return WeightMode::single;
    }
    throw ConfigError("weight-mode must be 'both' or 'single', got '" + text + "'");
}

std::string to_string(WeightMode mode) { return mode == WeightMode::both ? "both" : "single"; }

std::size_t MergedAdapter::total_rank() const {
    std::size_t r = 0;
    for (const auto &p : profiles) {
        r += p.rank;
    }
    return r;
}

std::string MergedAdapter::description() const {
    if (profiles.empty()) {
        return "none";
    }
    std::string s;
    for (const auto &p : profiles) {
        if (!s.empty()) {
            s += "+";
        }
        s += p.group + "/" + p.value;
    }
    return s;
}

LoraProfile init_profile(const std::string &group, const std::string &value, std::size_t rank,
                         std::span<const InjectionPoint> points, std::uint64_t seed,
                         std::optional<double> alpha) {
    if (rank < 1) {
        throw ConfigError("lora rank must be >= 1, got " + std::to_string(rank));
    }
    if (points.empty()) {
        throw ConfigError("lora profile needs at least one injection point");
    }
    LoraProfile p;
    p.group = group;
    p.value = value;
    p.rank = rank;
    p.alpha = alpha.value_or(static_cast<double>(rank));
    std::mt19937_64 rng(derive_seed(seed, {"lora", group, value}));
    std::normal_distribution<double> normal(0.0, 0.01);
    for (const auto &pt : points) {
        LoraLayer layer{Matrix(rank, pt.in_dim), Matrix(pt.out_dim, rank)};
        for (double &v : layer.a.data()) {
            v = normal(rng);
        }
        p.layers.emplace(pt.layer_id, std::move(layer));
    }
    return p;
}

MergedAdapter merge_profiles(std::span<const LoraProfile> profiles,
                             std::optional<std::vector<double>> weights, WeightMode mode) {
    if (profiles.empty()) {
        throw ConfigError("merge_profiles: need at least one profile");
    }
    const std::size_t k = profiles.size();
    if (weights && weights->size() != k) {
        throw ConfigError("merge_profiles: " + std::to_string(weights->size()) + " weights for " +
                          std::to_string(k) + " profiles");
    }
    MergedAdapter out;
    out.profiles.assign(profiles.begin(), profiles.end());
    out.weights = weights.value_or(std::vector<double>(k, 1.0 / static_cast<double>(k)));
    out.mode = mode;

    const auto &ref = profiles.front().layers;
    for (std::size_t i = 1; i < k; ++i) {
        const auto &other = profiles[i].layers;
        std::set<std::string> diff;
        for (const auto &[id, _] : ref) {
            if (other.count(id) == 0) {
                diff.insert(id);
            }
        }
        for (const auto &[id, _] : other) {
            if (ref.count(id) == 0) {
                diff.insert(id);
            }
        }
        if (!diff.empty()) {
            std::string list;
            for (const auto &id : diff) {
                list += (list.empty() ? "" : ", ") + id;
            }
            throw MergeError("merge_profiles: layer sets differ between '" + profiles.front().group +
                             "/" + profiles.front().value + "' and '" + profiles[i].group + "/" +
                             profiles[i].value + "': {" + list + "}");
        }
    }

    const std::size_t total_rank = out.total_rank();
    for (const auto &[id, first] : ref) {
        const std::size_t out_dim = first.b.rows();
        const std::size_t in_dim = first.a.cols();
        MergedLayer m{Matrix(total_rank, in_dim), Matrix(out_dim, total_rank)};
        std::size_t offset = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const LoraProfile &p = profiles[i];
            const LoraLayer &l = p.layers.at(id);
            if (l.a.cols() != in_dim || l.b.rows() != out_dim) {
                throw MergeError("merge_profiles: layer '" + id + "' base shape differs in '" +
                                 p.group + "/" + p.value + "'");
            }
            if (l.a.rows() != p.rank || l.b.cols() != p.rank) {
                throw MergeError("merge_profiles: layer '" + id + "' of '" + p.group + "/" + p.value +
                                 "' does not match rank " + std::to_string(p.rank));
            }
            const double w = out.weights[i];
            const double a_scale = mode == WeightMode::both ? w : 1.0;
            const double b_scale = w * p.scaling();
            for (std::size_t r = 0; r < p.rank; ++r) {
                for (std::size_t c = 0; c < in_dim; ++c) {
                    m.a_hat(offset + r, c) = a_scale * l.a(r, c);
                }
                for (std::size_t o = 0; o < out_dim; ++o) {
                    m.b_hat(o, offset + r) = b_scale * l.b(o, r);
                }
            }
            offset += p.rank;
        }
        out.layers.emplace(id, std::move(m));
    }
    return out;
}

std::vector<double> merged_delta(const MergedAdapter &adapter, const std::string &layer_id,
                                 std::span<const double> x) {
    auto it = adapter.layers.find(layer_id);
    if (it == adapter.layers.end()) {
        throw LookupError("merged_delta: unknown layer '" + layer_id + "'");
    }
    const MergedLayer &m = it->second;
    if (x.size() != m.a_hat.cols()) {
        throw ShapeError("merged_delta: input length " + std::to_string(x.size()) +
                         " does not match in_dim " + std::to_string(m.a_hat.cols()));
    }
    const Matrix ax = matmul(m.a_hat, Matrix::column(x));
    const Matrix y = matmul(m.b_hat, ax);
    return {y.data().begin(), y.data().end()};
}

std::vector<std::uint8_t> encode_profile(const LoraProfile &profile) {
    io::ByteWriter w;
    w.magic(kProfileMagic);
    w.u16(kProfileVersion);
    w.str16(profile.group);
    w.str16(profile.value);
    w.u32(static_cast<std::uint32_t>(profile.rank));
    w.f32(static_cast<float>(profile.alpha));
    w.u32(static_cast<std::uint32_t>(profile.layers.size()));
    for (const auto &[id, layer] : profile.layers) {
        w.str16(id);
        w.u32(static_cast<std::uint32_t>(layer.b.rows()));
        w.u32(static_cast<std::uint32_t>(layer.a.cols()));
        w.f32_matrix(layer.a);
        w.f32_matrix(layer.b);
    }
    const std::uint32_t crc = io::crc32(w.buffer());
    w.u32(crc);
    return w.take();
}

LoraProfile decode_profile(std::span<const std::uint8_t> bytes, const std::string &source) {
    io::ByteReader r(bytes, source);
    r.expect_magic(kProfileMagic);
    const std::uint16_t version = r.u16();
    if (version != kProfileVersion) {
        throw FormatError(source + ": unsupported profile version " + std::to_string(version));
    }
    LoraProfile p;
    p.group = r.str16();
    p.value = r.str16();
    p.rank = r.u32();
    if (p.rank == 0) {
        throw FormatError(source + ": rank field is 0");
    }
    p.alpha = static_cast<double>(r.f32());
    const std::uint32_t n_layers = r.u32();
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        std::string id = r.str16();
        const std::uint32_t out_dim = r.u32();
        const std::uint32_t in_dim = r.u32();
        if (out_dim == 0 || in_dim == 0) {
            throw CorruptFileError(source + ": layer '" + id + "' has a zero dimension");
        }
        LoraLayer layer;
        layer.a = r.f32_matrix(p.rank, in_dim);
        layer.b = r.f32_matrix(out_dim, p.rank);
        if (!p.layers.emplace(std::move(id), std::move(layer)).second) {
            throw CorruptFileError(source + ": duplicate layer id");
        }
    }
    const std::size_t payload = r.position();
    const std::uint32_t stored = r.u32();
    if (r.remaining() != 0) {
        throw CorruptFileError(source + ": trailing bytes after checksum");
    }
    if (stored != io::crc32(bytes.first(payload))) {
        throw CorruptFileError(source + ": checksum mismatch");
    }
    return p;
}

void save_profile(const LoraProfile &profile, const std::filesystem::path &path) {
    io::write_file_atomic(path, encode_profile(profile));
}

LoraProfile load_profile(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("profile file '" + path.string() + "' does not exist");
    }
    return decode_profile(io::read_file(path), path.string());
}

} // namespace piw

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <random>

#include <json.hpp>

#include "piw/asr_model.hpp"
#include "piw/errors.hpp"
#include "piw/profile_library.hpp"
#include "test_util.hpp"

using namespace piw;
using piw::testing::TempDir;

namespace {

CharacteristicTaxonomy gender_accent() {
    return CharacteristicTaxonomy({{"gender", {"m", "f"}}, {"accent", {"a", "b", "c"}}});
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> snapshot(const ProfileLibrary &lib) {
    std::map<std::string, std::string> out;
    for (const auto &e : lib.entries()) {
        out[e.path] = slurp(lib.root() / e.path);
    }
    return out;
}

double round1(double x) { return std::round(x * 10.0) / 10.0; }

} // namespace

TEST_CASE("taxonomy invariants") {
    const auto t = gender_accent();
    CHECK(t.group_count() == 2);
    CHECK(t.total_values() == 5);
    CHECK_THROWS_AS(CharacteristicTaxonomy({{"g", {"x", "x"}}}), TaxonomyError);
    CHECK_THROWS_AS(CharacteristicTaxonomy({{"g", {"x"}}, {"g", {"y"}}}), TaxonomyError);
    CHECK(CharacteristicTaxonomy::from_json(t.to_json()) == t);
    CHECK(parse_assignment("accent=b,gender=f") ==
          std::map<std::string, std::string>{{"accent", "b"}, {"gender", "f"}});
    CHECK_THROWS_AS(parse_assignment("accent"), ConfigError);
}

TEST_CASE("a new library has one untrained profile per value at version 1") {
    TempDir dir("lib");
    const ModelConfig cfg;
    const auto lib = ProfileLibrary::create(dir / "lib", gender_accent(), cfg);
    CHECK(lib.version() == 1);
    CHECK(lib.entries().size() == 5);
    std::size_t files = 0;
    for (const auto &f : std::filesystem::recursive_directory_iterator(dir / "lib" / "profiles")) {
        files += f.is_regular_file() ? 1 : 0;
    }
    CHECK(files == 5);
    const LoraProfile p = lib.load("accent", "b");
    CHECK(p.rank == 4);
    for (const auto &[id, l] : p.layers) {
        for (double v : l.b.data()) {
            CHECK(v == 0.0);
        }
    }

    const auto manifest = nlohmann::json::parse(slurp(dir / "lib" / "library.json"));
    CHECK(manifest.at("version") == 1);
    CHECK(manifest.at("model_config_hash") == cfg.hash());
    CHECK(manifest.at("profiles").size() == 5);
    CHECK(manifest.at("taxonomy").size() == 2);

    const auto reopened = ProfileLibrary::open(dir / "lib");
    CHECK(reopened.entries() == lib.entries());
    CHECK(reopened.taxonomy() == lib.taxonomy());

    const auto empty = ProfileLibrary::create(dir / "empty", CharacteristicTaxonomy{}, cfg);
    CHECK(empty.version() == 1);
    CHECK(empty.entries().empty());
}

TEST_CASE("add_value leaves every existing profile byte-identical") {
    TempDir dir("libadd");
    const ModelConfig cfg;
    auto lib = ProfileLibrary::create(dir / "lib", gender_accent(), cfg);
    const auto before = snapshot(lib);
    const auto points = injection_points_for(cfg);

    lib.add_value(init_profile("accent", "australian", 4, points, 1));
    CHECK(lib.version() == 2);
    CHECK(lib.entries().size() == 6);
    const auto after = snapshot(lib);
    for (const auto &[path, bytes] : before) {
        CHECK(after.at(path) == bytes);
    }
    CHECK(lib.taxonomy().find("accent")->values.back() == "australian");

    try {
        lib.add_value(init_profile("accent", "b", 4, points, 1));
        FAIL("duplicate value accepted");
    } catch (const ConflictError &) {
    }
    CHECK(lib.version() == 2);
    CHECK(ProfileLibrary::open(dir / "lib").version() == 2);

    lib.add_value(init_profile("age", "teens", 4, points, 1));
    CHECK(lib.taxonomy().group_count() == 3);
    CHECK(lib.entries().size() == 7);
    CHECK(lib.version() == 3);
}

TEST_CASE("select_profiles follows taxonomy order and skips unassigned groups") {
    TempDir dir("libsel");
    const auto tax = CharacteristicTaxonomy(
        {{"accent", {"irish", "american"}}, {"gender", {"male", "female"}}, {"age", {"teens", "twenties"}}});
    const auto lib = ProfileLibrary::create(dir / "lib", tax, ModelConfig{});
    const auto ps = lib.select_profiles({{"age", "teens"}, {"accent", "irish"}, {"gender", "female"}});
    REQUIRE(ps.size() == 3);
    CHECK(ps[0].group + "/" + ps[0].value == "accent/irish");
    CHECK(ps[1].group + "/" + ps[1].value == "gender/female");
    CHECK(ps[2].group + "/" + ps[2].value == "age/teens");
    CHECK(lib.select_profiles({}).empty());
    const auto one = lib.select_profiles({{"gender", "male"}});
    REQUIRE(one.size() == 1);
    CHECK(one[0].value == "male");
    try {
        (void)lib.select_profiles({{"accent", "klingon"}});
        FAIL("unknown value selected");
    } catch (const LookupError &e) {
        const std::string msg = e.what();
        CHECK(msg.find("klingon") != std::string::npos);
        CHECK(msg.find("accent") != std::string::npos);
    }
    CHECK_THROWS_AS(lib.select_profiles({{"height", "tall"}}), LookupError);
}

TEST_CASE("overhead examples") {
    const auto cv = CharacteristicTaxonomy(
        {{"gender", {"m", "f"}},
         {"accent", {"a", "b", "c", "d", "e"}},
         {"age", {"1", "2", "3", "4", "5", "6", "7", "8", "9"}}});
    const auto l2 = CharacteristicTaxonomy({{"gender", {"m", "f"}}, {"accent", {"a", "b", "c", "d", "e", "f"}}});
    const double enc = 1.18e6, h = 1.16e6, pro = 0.59e6, base = 37.7e6;

    // Hand arithmetic: 1.18 + 3·1.16 + 16·0.59 = 14.10; 14.10/37.7 = 37.4 %.
    const auto a = compute_overhead(enc, h, pro, cv, base, CharacteristicMode::inferred);
    CHECK(a.k == 3);
    CHECK(a.total_profiles == 16);
    CHECK(a.p_total == doctest::Approx(14.10e6));
    CHECK(round1(100.0 * a.overhead_ratio) == doctest::Approx(37.4));

    const auto b = compute_overhead(enc, h, pro, l2, base, CharacteristicMode::inferred);
    CHECK(b.p_total == doctest::Approx(8.22e6));
    CHECK(round1(100.0 * b.overhead_ratio) == doctest::Approx(21.8));

    const auto c = compute_overhead(enc, h, pro, l2, base, CharacteristicMode::known);
    CHECK(c.p_total == doctest::Approx(4.72e6));
    CHECK(round1(100.0 * c.overhead_ratio) == doctest::Approx(12.5));

    const auto d = compute_overhead(enc, h, pro, cv, base, CharacteristicMode::known);
    CHECK(d.p_total == doctest::Approx(9.44e6));
    CHECK(round1(100.0 * d.overhead_ratio) == doctest::Approx(25.0));

    CHECK_THROWS_AS(compute_overhead(-1.0, h, pro, cv, base, CharacteristicMode::known), InputError);
}

TEST_CASE("overhead is affine in the number of profiles with slope P_pro") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<CharacteristicGroup> groups;
        const std::size_t k = 1 + rng() % 5;
        for (std::size_t g = 0; g < k; ++g) {
            CharacteristicGroup grp{"g" + std::to_string(g), {}};
            const std::size_t n = 1 + rng() % 9;
            for (std::size_t v = 0; v < n; ++v) {
                grp.values.push_back("v" + std::to_string(v));
            }
            groups.push_back(grp);
        }
        CharacteristicTaxonomy t(groups);
        const double enc = static_cast<double>(rng() % 1000);
        const double h = static_cast<double>(rng() % 1000);
        const double pro = static_cast<double>(rng() % 1000);
        const auto r = compute_overhead(enc, h, pro, t, 1e6, CharacteristicMode::inferred);
        t.add_value("g0", "extra");
        const auto r2 = compute_overhead(enc, h, pro, t, 1e6, CharacteristicMode::inferred);
        CHECK(r2.p_total - r.p_total == doctest::Approx(pro));
        CHECK(r.p_total == doctest::Approx(enc + h * static_cast<double>(k) +
                                           pro * static_cast<double>(r.total_profiles)));
        const auto known = compute_overhead(enc, h, pro, t, 1e6, CharacteristicMode::known);
        CHECK(known.p_total == doctest::Approx(pro * static_cast<double>(known.total_profiles)));
    }
}

TEST_CASE("version increases on every successful mutation") {
    TempDir dir("libver");
    const ModelConfig cfg;
    const auto points = injection_points_for(cfg);
    auto lib = ProfileLibrary::create(dir / "lib", gender_accent(), cfg);
    std::mt19937_64 rng(2);
    std::uint64_t last = lib.version();
    for (int step = 0; step < 30; ++step) {
        const int op = static_cast<int>(rng() % 3);
        try {
            if (op == 0) {
                lib.add_value(init_profile("accent", "v" + std::to_string(rng() % 6), 2, points, rng()));
            } else if (op == 1) {
                auto p = lib.load("gender", "m");
                p.trained_steps += 1;
                lib.store({p});
            } else {
                lib.add_value(init_profile("gender", "m", 2, points, 1));
            }
        } catch (const ConflictError &) {
        }
        const auto v = ProfileLibrary::open(dir / "lib").version();
        CHECK(v >= last);
        CHECK(v == lib.version());
        last = v;
    }
}

TEST_CASE("store replaces one profile and bumps the version once") {
    TempDir dir("libstore");
    const ModelConfig cfg;
    auto lib = ProfileLibrary::create(dir / "lib", gender_accent(), cfg);
    const auto before = snapshot(lib);
    auto p = lib.load("accent", "c");
    for (auto &[id, l] : p.layers) {
        l.b(0, 0) = 0.5;
    }
    lib.store({p});
    CHECK(lib.version() == 2);
    const auto after = snapshot(lib);
    for (const auto &[path, bytes] : before) {
        if (path.find("accent/c") == std::string::npos) {
            CHECK(after.at(path) == bytes);
        } else {
            CHECK(after.at(path) != bytes);
        }
    }
    CHECK(lib.load("accent", "c").layers.begin()->second.b(0, 0) == 0.5);
    auto stranger = p;
    stranger.value = "zz";
    CHECK_THROWS_AS(lib.store({stranger}), LookupError);
}

TEST_CASE("checksums and model binding are enforced") {
    TempDir dir("libcrc");
    const ModelConfig cfg;
    const auto lib = ProfileLibrary::create(dir / "lib", gender_accent(), cfg);
    lib.check_model(cfg);
    ModelConfig other = cfg;
    other.d_model = 64;
    CHECK_THROWS_AS(lib.check_model(other), ConfigError);

    const auto *e = lib.find("gender", "f");
    REQUIRE(e != nullptr);
    const auto path = lib.root() / e->path;
    std::string bytes = slurp(path);
    bytes[bytes.size() / 2] ^= 0x01;
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS(lib.load("gender", "f"), CorruptFileError);
    CHECK_NOTHROW(lib.load("gender", "m"));
    CHECK_THROWS_AS(ProfileLibrary::open(dir / "nowhere"), MissingFileError);
    std::ofstream(lib.root() / "library.json") << "{not json";
    CHECK_THROWS_AS(ProfileLibrary::open(lib.root()), FormatError);
}

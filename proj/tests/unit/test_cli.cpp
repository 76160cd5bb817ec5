// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "piw/features.hpp"
#include "test_util.hpp"

using piw::testing::TempDir;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string quote(const std::string &s) { return "'" + s + "'"; }

Run run(const std::string &args, const std::string &env = "") {
    static TempDir scratch("cli_err");
    const auto err_path = scratch / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + quote(PIW_CLI_PATH) + " " + args + " 2>" +
                            quote(err_path.string());
    Run r;
    FILE *pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        r.out.append(buf.data(), n);
    }
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err_path);
    r.err.assign(std::istreambuf_iterator<char>(in), {});
    return r;
}

std::string taxonomy(const std::string &name) { return quote(std::string(PIW_TAXONOMY_DIR) + "/" + name); }

const std::string kOverhead =
    "overhead --p-enc 1180000 --p-h 1160000 --p-pro 590000 --base 37700000 --taxonomy ";

} // namespace

TEST_CASE("overhead reproduces the CommonVoice inferred example") {
    const Run r = run(kOverhead + taxonomy("commonvoice.json") + " --mode inferred");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("p_total").get<double>() == doctest::Approx(14100000.0));
    CHECK(j.at("overhead_ratio").get<double>() == doctest::Approx(0.374).epsilon(1e-3));
    CHECK(j.at("k") == 3);
    CHECK(j.at("total_profiles") == 16);

    const Run known = run(kOverhead + taxonomy("l2arctic.json") + " --mode known");
    REQUIRE(known.code == 0);
    CHECK(nlohmann::json::parse(known.out).at("p_total").get<double>() == doctest::Approx(4720000.0));
}

TEST_CASE("usage errors exit 2 and domain errors exit 1") {
    TempDir dir("cli_usage");
    const Run both = run("infer --model m --library l --features f --characteristics accent=a --infer-characteristics");
    CHECK(both.code == 2);
    CHECK_FALSE(both.err.empty());
    CHECK(run("fly-to-moon").code == 2);
    CHECK(run("overhead --p-enc 1 --bogus 3").code == 2);
    CHECK(run("").code == 2);
    CHECK(run("--help").code == 0);
    const Run missing = run("overhead --p-enc 1 --p-h 1 --p-pro 1 --base 1 --taxonomy " + quote((dir / "no.json").string()));
    CHECK(missing.code == 1);
    CHECK(missing.err.find("no.json") != std::string::npos);
    CHECK(run(kOverhead + taxonomy("l2arctic.json"), "PIW_SEED=banana").code == 2);
    CHECK(run(kOverhead + taxonomy("l2arctic.json"), "PIW_SEED=7").code == 0);
}

TEST_CASE("config file keys mirror flags") {
    TempDir dir("cli_cfg");
    const auto cfg = dir / "overhead.json";
    std::ofstream(cfg) << R"({"p-enc": 1180000, "p-h": 1160000, "p-pro": 590000, "base": 37700000, "mode": "known"})";
    const Run r = run("--config " + quote(cfg.string()) + " overhead --taxonomy " + taxonomy("commonvoice.json"));
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("p_total").get<double>() == doctest::Approx(9440000.0));
    // an explicit flag wins over the file
    const Run o = run("--config " + quote(cfg.string()) + " overhead --mode inferred --taxonomy " +
                      taxonomy("commonvoice.json"));
    REQUIRE(o.code == 0);
    CHECK(nlohmann::json::parse(o.out).at("p_total").get<double>() == doctest::Approx(14100000.0));
}

TEST_CASE("extract-features writes a feature file") {
    TempDir dir("cli_wav");
    piw::Waveform w;
    w.samples.resize(4000);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<float>(0.3 * std::sin(0.05 * static_cast<double>(i)));
    }
    piw::write_wav(dir / "a.wav", w);
    const Run r = run("extract-features --wav " + quote((dir / "a.wav").string()) + " --out " +
                      quote((dir / "a.feat").string()));
    REQUIRE(r.code == 0);
    const auto f = piw::load_features(dir / "a.feat");
    CHECK(f.bins() == 16);
    CHECK(f.frames() == 1 + (4000 - 400) / 160);
    piw::MelConfig mel;
    mel.bins = 16;
    CHECK(max_relative_error(f.values, piw::log_mel_spectrogram(piw::read_wav(dir / "a.wav"), mel).values, 1e-3) <= 1e-6);
}

TEST_CASE("end-to-end smoke sequence") {
    TempDir dir("cli_smoke");
    const std::string data = quote((dir / "data").string());
    const std::string model = quote((dir / "model.piwmodel").string());
    const std::string lib = quote((dir / "lib").string());
    const std::string clf = quote((dir / "clf.piwclsf").string());

    const Run gen = run("-q gen-data --out " + data + " --samples-per-combination 10");
    REQUIRE(gen.code == 0);
    const Run gen_again = run("-q gen-data --out " + data + " --samples-per-combination 10");
    CHECK(gen_again.out == gen.out);

    REQUIRE(run("-q pretrain-base --data " + data + " --out " + model + " --epochs 3").code == 0);
    REQUIRE(run("-q init-library --model " + model + " --data " + data + " --out " + lib).code == 0);
    const Run tp = run("-q train-profiles --model " + model + " --library " + lib + " --data " + data + " --epochs 2");
    REQUIRE(tp.code == 0);
    CHECK(nlohmann::json::parse(tp.out).at("profiles").size() == 5);
    REQUIRE(run("-q train-classifier --data " + data + " --out " + clf + " --epochs 2").code == 0);

    const Run ev = run("-q evaluate --model " + model + " --library " + lib + " --data " + data);
    REQUIRE(ev.code == 0);
    const auto report = nlohmann::json::parse(ev.out);
    CHECK(report.contains("overall_wer"));
    CHECK(report.at("groups").size() == 2);
    CHECK(run("-q evaluate --model " + model + " --library " + lib + " --data " + data).out == ev.out);

    const auto feats = dir / "data" / nlohmann::json::parse(std::ifstream(dir / "data" / "test.json"))
                                          .at("samples")
                                          .at(0)
                                          .at("features")
                                          .get<std::string>();
    const Run known = run("-q infer --model " + model + " --library " + lib + " --data " + data + " --features " +
                          quote(feats.string()) + " --characteristics accent=a,gender=f");
    REQUIRE(known.code == 0);
    CHECK(nlohmann::json::parse(known.out).at("adapter") == "accent/a+gender/f");
    const Run inferred = run("-q infer --model " + model + " --library " + lib + " --data " + data +
                             " --classifier " + clf + " --features " + quote(feats.string()) +
                             " --infer-characteristics");
    REQUIRE(inferred.code == 0);
    CHECK(nlohmann::json::parse(inferred.out).contains("text"));
    CHECK(run("-q infer --model " + model + " --library " + lib + " --data " + data + " --features " +
              quote(feats.string()) + " --characteristics accent=klingon")
              .code == 1);

    const Run av = run("-q add-value --model " + model + " --library " + lib + " --data " + data +
                       " --group accent --value d --epochs 1");
    REQUIRE(av.code == 0);
    const auto avj = nlohmann::json::parse(av.out);
    CHECK(avj.at("version").get<int>() == avj.at("version_before").get<int>() + 1);

    const Run bench = run("-q bench --model " + model + " --library " + lib + " --data " + data +
                          " --k 0,1,2 --iterations 5");
    REQUIRE(bench.code == 0);
    CHECK(nlohmann::json::parse(bench.out).at("points").size() == 3);
}

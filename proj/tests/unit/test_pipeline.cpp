// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "corpus.hpp"
#include "piw/errors.hpp"
#include "piw/metrics.hpp"
#include "piw/pipeline.hpp"
#include "test_util.hpp"

using namespace piw;
using piw::testing::corpus;
using piw::testing::TempDir;

namespace {

struct Trained {
    TempDir dir{"pipe"};
    std::unique_ptr<ProfileLibrary> lib;
    TrainingReport report;
    ProfileReport ofa;

    Trained() {
        const auto &c = corpus();
        lib = std::make_unique<ProfileLibrary>(
            ProfileLibrary::create(dir / "lib", c.synth.taxonomy, c.model.config()));
        report = train_profiles(*lib, c.model, c.train, c.val, *c.tokenizer, TrainSpec{});
        ofa = train_one_for_all(*lib, c.model, c.train, c.val, *c.tokenizer, TrainSpec{});
    }
};

const Trained &trained() {
    static const Trained t;
    return t;
}

LoraHyper hyper_of(const TrainSpec &s) {
    LoraHyper h;
    h.epochs = s.epochs;
    h.batch = s.batch;
    return h;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("each labeled sample trains exactly one profile per group") {
    const auto &c = corpus();
    const auto &t = trained();
    std::map<std::string, std::size_t> per_group;
    std::size_t total = 0;
    for (const auto &p : t.report.profiles) {
        std::size_t expected = 0;
        for (const auto &u : c.train) {
            expected += u.labels.at(p.group) == p.value ? 1 : 0;
        }
        CHECK_MESSAGE(p.samples == expected, p.group << "/" << p.value);
        CHECK(p.steps == lora_steps(p.samples, hyper_of(TrainSpec{})));
        CHECK(t.lib->find(p.group, p.value)->trained_steps == p.steps);
        per_group[p.group] += p.samples;
        total += p.samples;
    }
    for (const auto &g : c.synth.taxonomy.groups()) {
        CHECK(per_group[g.id] == c.train.size());
    }
    // every sample carries two labels, so it lands in two profiles
    CHECK(total == 2 * c.train.size());
    CHECK(t.report.profiles.size() == c.synth.taxonomy.total_values());
}

TEST_CASE("training report JSON carries the contract fields") {
    const auto j = trained().report.to_json();
    REQUIRE(j.contains("profiles"));
    for (const auto &p : j.at("profiles")) {
        CHECK(p.contains("group"));
        CHECK(p.contains("value"));
        CHECK(p.contains("lr_selected"));
        CHECK(p.contains("val_wer"));
        CHECK(p.contains("steps"));
    }
}

TEST_CASE("one-for-all profile is stored under the reserved group and never selected") {
    const auto &c = corpus();
    const auto &t = trained();
    CHECK(t.ofa.group == kBaselineGroup);
    CHECK(t.ofa.samples == c.train.size());
    CHECK(t.ofa.steps == lora_steps(c.train.size(), hyper_of(TrainSpec{})));
    CHECK(t.lib->find(kBaselineGroup, kBaselineValue) != nullptr);
    std::map<std::string, std::string> all;
    for (const auto &g : c.synth.taxonomy.groups()) {
        all[g.id] = g.values.front();
    }
    for (const auto &p : t.lib->select_profiles(all)) {
        CHECK(p.group != kBaselineGroup);
    }
    CHECK(t.lib->taxonomy().find(kBaselineGroup) == nullptr);
}

TEST_CASE("fine-tuning does not hurt and training utterances are reproduced") {
    const auto &c = corpus();
    const auto &t = trained();
    const auto base = evaluate(c.model, *t.lib, nullptr, c.test, CharacteristicMode::known,
                               AdapterSelection::base_model(), *c.tokenizer);
    const auto ofa = evaluate(c.model, *t.lib, nullptr, c.test, CharacteristicMode::known,
                              AdapterSelection::one_for_all(), *c.tokenizer);
    MESSAGE("test WER base " << base.overall_wer << ", one-for-all " << ofa.overall_wer);
    CHECK(ofa.overall_wer <= base.overall_wer);

    std::size_t matched = 0;
    std::size_t words = 0;
    for (const auto &u : c.train) {
        InferenceRequest req{u.utterance.features, CharacteristicMode::known, u.labels, std::nullopt};
        const auto out = infer(c.model, *t.lib, nullptr, req, *c.tokenizer);
        for (std::size_t i = 0; i < u.utterance.tokens.size(); ++i) {
            matched += i < out.tokens.size() && out.tokens[i] == u.utterance.tokens[i] ? 1 : 0;
        }
        words += u.utterance.tokens.size();
    }
    const double share = static_cast<double>(matched) / static_cast<double>(words);
    MESSAGE("training tokens reproduced: " << share);
    CHECK(share >= 0.8);
}

TEST_CASE("empty assignment decodes with the base model") {
    const auto &c = corpus();
    const auto &t = trained();
    for (std::size_t i = 0; i < 10; ++i) {
        const auto &u = c.test[i];
        InferenceRequest req{u.utterance.features, CharacteristicMode::known, std::map<std::string, std::string>{}, std::nullopt};
        const auto out = infer(c.model, *t.lib, nullptr, req, *c.tokenizer);
        CHECK(out.adapter == "none");
        CHECK(out.text == transcribe(c.model, nullptr, u.utterance.features, *c.tokenizer));
    }
}

TEST_CASE("inferred mode matches known mode whenever the classifier is right") {
    const auto &c = corpus();
    const auto &t = trained();
    auto clf = init_classifier(ClassifierConfig{}, c.synth.taxonomy, 1);
    ClassifierHyper h;
    h.epochs = 5;
    const auto slices = classifier_slices(c.train, clf.config().input_frames);
    (void)train_classifier(clf, slices, h);
    std::size_t agreed = 0;
    for (const auto &u : c.test) {
        const auto predicted =
            classify(clf, slice_for_classifier(u.utterance.features, clf.config().input_frames)).assignment();
        InferenceRequest inf{u.utterance.features, CharacteristicMode::inferred, std::nullopt, std::nullopt};
        const auto a = infer(c.model, *t.lib, &clf, inf, *c.tokenizer);
        CHECK(a.assignment == predicted);
        if (predicted != u.labels) {
            continue;
        }
        InferenceRequest known{u.utterance.features, CharacteristicMode::known, u.labels, std::nullopt};
        const auto b = infer(c.model, *t.lib, nullptr, known, *c.tokenizer);
        CHECK(a.text == b.text);
        CHECK(a.tokens == b.tokens);
        CHECK(a.adapter == b.adapter);
        ++agreed;
    }
    MESSAGE(agreed << " of " << c.test.size() << " predictions matched the labels");
    CHECK(agreed > 0);

    InferenceRequest no_labels{c.test[0].utterance.features, CharacteristicMode::known, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(infer(c.model, *t.lib, nullptr, no_labels, *c.tokenizer), InputError);
    InferenceRequest no_clf{c.test[0].utterance.features, CharacteristicMode::inferred, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(infer(c.model, *t.lib, nullptr, no_clf, *c.tokenizer), InputError);
}

TEST_CASE("group restriction and merge description") {
    const auto &c = corpus();
    const auto &t = trained();
    const auto &u = c.test[0];
    InferenceRequest req{u.utterance.features, CharacteristicMode::known, u.labels, std::nullopt};
    const auto both = infer(c.model, *t.lib, nullptr, req, *c.tokenizer);
    const auto &groups = c.synth.taxonomy.groups();
    CHECK(both.adapter == groups[0].id + "/" + u.labels.at(groups[0].id) + "+" + groups[1].id + "/" +
                              u.labels.at(groups[1].id));
    req.groups = std::vector<std::string>{groups[1].id};
    const auto one = infer(c.model, *t.lib, nullptr, req, *c.tokenizer);
    CHECK(one.adapter == groups[1].id + "/" + u.labels.at(groups[1].id));
    CHECK(one.assignment.size() == 1);
}

TEST_CASE("empty subsets warn and leave the profile untrained") {
    const auto &c = corpus();
    TempDir dir("pipe_empty");
    auto lib = ProfileLibrary::create(dir / "lib", c.synth.taxonomy, c.model.config());
    const auto &g0 = c.synth.taxonomy.groups().front();
    std::vector<LabeledUtterance> subset;
    for (const auto &u : c.train) {
        if (u.labels.at(g0.id) != g0.values.front() && subset.size() < 16) {
            subset.push_back(u);
        }
    }
    TrainSpec spec;
    spec.epochs = 1;
    const auto report = train_profiles(lib, c.model, subset, c.val, *c.tokenizer, spec);
    bool warned = false;
    for (const auto &p : report.profiles) {
        if (p.group == g0.id && p.value == g0.values.front()) {
            CHECK_FALSE(p.warning.empty());
            CHECK(p.steps == 0);
            warned = true;
        }
    }
    CHECK(warned);
    for (const auto &[id, l] : lib.load(g0.id, g0.values.front()).layers) {
        for (double v : l.b.data()) {
            CHECK(v == 0.0);
        }
    }
    // all profiles of one call commit as one version
    CHECK(lib.version() == 2);
}

TEST_CASE("a two-point grid picks one of its learning rates") {
    const auto &c = corpus();
    TempDir dir("pipe_grid");
    auto lib = ProfileLibrary::create(dir / "lib", c.synth.taxonomy, c.model.config());
    TrainSpec spec;
    spec.lr_grid = {0.2, 1e-3};
    spec.epochs = 2;
    std::vector<LabeledUtterance> subset(c.train.begin(), c.train.begin() + 24);
    const auto report = train_profiles(lib, c.model, subset, c.val, *c.tokenizer, spec);
    for (const auto &p : report.profiles) {
        CHECK((p.lr_selected == 0.2 || p.lr_selected == 1e-3));
        CHECK(p.val_wer.has_value());
    }
    CHECK(lib.version() == 2);
    TrainSpec bad;
    bad.lr_grid.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(wide_lr_grid() == std::vector<double>{1e-3, 1e-4, 5e-4, 1e-5, 5e-5});
}

TEST_CASE("profile training is deterministic") {
    const auto &c = corpus();
    TempDir dir("pipe_det");
    TrainSpec spec;
    spec.epochs = 2;
    std::vector<LabeledUtterance> subset(c.train.begin(), c.train.begin() + 24);
    auto a = ProfileLibrary::create(dir / "a", c.synth.taxonomy, c.model.config());
    auto b = ProfileLibrary::create(dir / "b", c.synth.taxonomy, c.model.config());
    (void)train_profiles(a, c.model, subset, c.val, *c.tokenizer, spec);
    spec.jobs = 2;
    (void)train_profiles(b, c.model, subset, c.val, *c.tokenizer, spec);
    for (const auto &e : a.entries()) {
        CHECK(slurp(a.root() / e.path) == slurp(b.root() / b.find(e.group, e.value)->path));
    }
}

TEST_CASE("adding a value trains only on the new data") {
    const auto &c = corpus();
    TempDir dir("pipe_add");
    auto lib = ProfileLibrary::create(dir / "lib", c.synth.taxonomy, c.model.config());
    std::map<std::string, std::string> before;
    for (const auto &e : lib.entries()) {
        before[e.path] = slurp(lib.root() / e.path);
    }
    const auto &g = c.synth.taxonomy.groups().front();
    std::vector<LabeledUtterance> fresh(c.train.begin(), c.train.begin() + 10);
    for (auto &u : fresh) {
        u.labels[g.id] = "newcomer";
    }
    TrainSpec spec;
    const auto r = add_value_trained(lib, c.model, g.id, "newcomer", fresh, {}, *c.tokenizer, spec, 4);
    CHECK(r.samples == 10);
    CHECK(r.steps == lora_steps(10, hyper_of(spec)));
    CHECK(lib.version() == 2);
    for (const auto &[path, bytes] : before) {
        CHECK(slurp(lib.root() / path) == bytes);
    }
    CHECK(lib.find(g.id, "newcomer")->trained_steps == r.steps);
}

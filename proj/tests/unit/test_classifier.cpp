// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "corpus.hpp"
#include "piw/classifier.hpp"
#include "piw/errors.hpp"
#include "test_util.hpp"

using namespace piw;
using piw::testing::corpus;
using piw::testing::random_matrix;
using piw::testing::TempDir;

namespace {

CharacteristicTaxonomy three_groups() {
    return CharacteristicTaxonomy({{"gender", {"m", "f"}}, {"accent", {"a", "b", "c"}}, {"age", {"x", "y", "z", "w"}}});
}

FeatureMatrix random_slice(const ClassifierConfig &cfg, std::mt19937_64 &rng) {
    return FeatureMatrix{random_matrix(cfg.input_bins, cfg.input_frames, rng)};
}

double sum(const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s;
}

// -log softmax(logits)[target], computed in long double.
double ce(const Matrix &logits, std::size_t target) {
    long double mx = logits[0];
    for (double v : logits.data()) {
        mx = std::max<long double>(mx, v);
    }
    long double z = 0.0L;
    for (double v : logits.data()) {
        z += std::exp(static_cast<long double>(v) - mx);
    }
    return static_cast<double>(mx + std::log(z) - logits[target]);
}

const std::vector<LabeledSlice> &train_slices() {
    static const auto s = classifier_slices(corpus().train, ClassifierConfig{}.input_frames);
    return s;
}

const std::vector<LabeledSlice> &test_slices() {
    static const auto s = classifier_slices(corpus().test, ClassifierConfig{}.input_frames);
    return s;
}

} // namespace

TEST_CASE("one head per group, deterministic, valid probabilities") {
    const ClassifierConfig cfg;
    const auto c = init_classifier(cfg, three_groups(), 1);
    CHECK(init_classifier(cfg, three_groups(), 1) == c);
    CHECK_FALSE(init_classifier(cfg, three_groups(), 2) == c);
    std::mt19937_64 rng(1);
    const FeatureMatrix x = random_slice(cfg, rng);
    const Prediction p = classify(c, x);
    REQUIRE(p.groups.size() == 3);
    const std::vector<std::size_t> widths{2, 3, 4};
    for (std::size_t g = 0; g < 3; ++g) {
        const auto &gp = p.groups[g];
        CHECK(gp.group == three_groups().groups()[g].id);
        CHECK(gp.probabilities.size() == widths[g]);
        CHECK(std::abs(sum(gp.probabilities) - 1.0) <= 1e-9);
        const auto best = std::max_element(gp.probabilities.begin(), gp.probabilities.end()) - gp.probabilities.begin();
        CHECK(gp.value == three_groups().groups()[g].values[static_cast<std::size_t>(best)]);
    }
    const Prediction q = classify(c, x);
    for (std::size_t g = 0; g < 3; ++g) {
        CHECK(q.groups[g].probabilities == p.groups[g].probabilities);
    }
    CHECK_THROWS_AS(classify(c, FeatureMatrix{Matrix(cfg.input_bins, cfg.input_frames + 1)}), ShapeError);
}

TEST_CASE("config validation") {
    ClassifierConfig cfg;
    cfg.channels.clear();
    CHECK_THROWS_AS(init_classifier(cfg, three_groups(), 1), ConfigError);
    ClassifierConfig small;
    small.input_bins = 4;
    small.input_frames = 4;
    small.channels = {4, 4, 4};
    CHECK_THROWS_AS(init_classifier(small, three_groups(), 1), ConfigError);
    const ClassifierConfig ok;
    CHECK(ok.flat_size() == 16 * (16 / 4) * (12 / 4));
}

TEST_CASE("input standardization is zero mean, unit variance") {
    std::mt19937_64 rng(2);
    FeatureMatrix x{random_matrix(16, 12, rng, 3.0)};
    for (double &v : x.values.data()) {
        v += 7.0;
    }
    const Matrix s = standardize_slice(x);
    double mean = 0.0;
    for (double v : s.data()) {
        mean += v;
    }
    mean /= static_cast<double>(s.size());
    double var = 0.0;
    for (double v : s.data()) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(s.size());
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("joint loss is the sum of per-head cross-entropies") {
    const ClassifierConfig cfg;
    const auto c = init_classifier(cfg, three_groups(), 3);
    std::mt19937_64 rng(3);
    const LabeledSlice ex{random_slice(cfg, rng), {{"gender", "f"}, {"accent", "c"}, {"age", "y"}}};
    ad::Tape tape;
    ad::Bindings bind;
    for (const auto &[path, m] : c.params().entries()) {
        bind.emplace(path, tape.constant(m));
    }
    const auto logits = classifier_logits(tape, c, bind, ex.slice);
    const double separate = ce(tape.value(logits.at("gender")), 1) + ce(tape.value(logits.at("accent")), 2) +
                            ce(tape.value(logits.at("age")), 1);
    const double joint = tape.value(classifier_loss(tape, c, bind, ex))[0];
    CHECK(std::abs(joint - separate) <= 1e-12);

    // A missing label drops that head's term.
    const LabeledSlice partial{ex.slice, {{"accent", "c"}}};
    const double only = tape.value(classifier_loss(tape, c, bind, partial))[0];
    CHECK(std::abs(only - ce(tape.value(logits.at("accent")), 2)) <= 1e-12);
}

TEST_CASE("classifier gradients agree with finite differences") {
    const ClassifierConfig cfg;
    const auto c = init_classifier(cfg, three_groups(), 4);
    std::mt19937_64 rng(4);
    const LabeledSlice ex{random_slice(cfg, rng), {{"gender", "m"}, {"accent", "b"}, {"age", "w"}}};
    const ad::LossFn f = [&](ad::Tape &t, const ad::Bindings &b) { return classifier_loss(t, c, b, ex); };
    const auto g = ad::gradients(f, c.params());
    ParamSet ps = c.params();
    std::size_t checked = 0;
    for (const auto &[path, value] : c.params().entries()) {
        // a few entries from every tensor
        for (std::size_t k = 0; k < 3 && k < value.size(); ++k) {
            const std::size_t i = (k * 7919 + path.size()) % value.size();
            Matrix &p = ps.get_mut(path);
            const double keep = p[i];
            const double eps = 1e-6;
            p[i] = keep + eps;
            const double up = ad::value_and_gradients(f, ps).loss;
            p[i] = keep - eps;
            const double down = ad::value_and_gradients(f, ps).loss;
            p[i] = keep;
            const double num = (up - down) / (2.0 * eps);
            const double ana = g.at(path)[i];
            CHECK_MESSAGE(std::abs(num - ana) <= 1e-4 * std::max({std::abs(num), std::abs(ana), 1e-3}),
                          path << "[" << i << "] " << ana << " vs " << num);
            ++checked;
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("training reduces loss and separates the synthetic groups") {
    auto c = init_classifier(ClassifierConfig{}, corpus().synth.taxonomy, 42);
    const auto curve = train_classifier(c, train_slices(), ClassifierHyper{});
    REQUIRE(curve.size() == ClassifierHyper{}.epochs + 1);
    MESSAGE("classifier loss " << curve.front() << " -> " << curve.back());
    CHECK(curve.back() <= 0.7 * curve.front());

    std::map<std::string, std::size_t> correct;
    for (const auto &s : test_slices()) {
        const auto pred = classify(c, s.slice).assignment();
        for (const auto &[g, v] : s.labels) {
            correct[g] += pred.at(g) == v ? 1 : 0;
        }
    }
    for (const auto &g : corpus().synth.taxonomy.groups()) {
        const double acc = static_cast<double>(correct[g.id]) / static_cast<double>(test_slices().size());
        MESSAGE(g.id << " accuracy " << acc);
        CHECK(acc >= 0.95);
    }

    // confident on a sample of the first accent value
    const auto &first = corpus().synth.taxonomy.groups().front();
    for (const auto &s : test_slices()) {
        if (s.labels.at(first.id) == first.values.front()) {
            const auto pred = classify(c, s.slice);
            CHECK(pred.groups.front().value == first.values.front());
            CHECK(pred.groups.front().probabilities.front() > 0.9);
            break;
        }
    }
    CHECK_THROWS_AS(train_classifier(c, std::span<const LabeledSlice>{}, ClassifierHyper{}), InputError);
}

TEST_CASE("add_head leaves the encoder and other heads untouched") {
    auto c = init_classifier(ClassifierConfig{}, CharacteristicTaxonomy({{"gender", {"m", "f"}}, {"accent", {"a", "b"}}}), 5);
    const ParamSet before = c.params();
    add_head(c, "age", {"teens", "twenties", "thirties"}, 6);
    for (const auto &[path, value] : before.entries()) {
        CHECK(c.params().get(path) == value);
    }
    CHECK(c.taxonomy().group_count() == 3);
    std::mt19937_64 rng(5);
    const Prediction p = classify(c, random_slice(c.config(), rng));
    REQUIRE(p.groups.size() == 3);
    CHECK(p.groups[2].group == "age");
    CHECK(p.groups[2].probabilities.size() == 3);
    CHECK(std::abs(sum(p.groups[2].probabilities) - 1.0) <= 1e-9);
    CHECK_THROWS_AS(add_head(c, "age", {"x"}, 1), ConflictError);
}

TEST_CASE("training one head with the rest frozen moves only that head") {
    auto c = init_classifier(ClassifierConfig{}, CharacteristicTaxonomy({{"gender", {"m", "f"}}, {"accent", {"a", "b"}}}), 7);
    for (const auto &[path, value] : c.params().entries()) {
        c.params_mut().set_trainable(path, path.rfind("head.accent.", 0) == 0);
    }
    const ParamSet before = c.params();
    std::mt19937_64 rng(7);
    std::vector<LabeledSlice> data;
    for (int i = 0; i < 8; ++i) {
        data.push_back({random_slice(c.config(), rng), {{"gender", i % 2 ? "m" : "f"}, {"accent", i % 3 ? "a" : "b"}}});
    }
    ClassifierHyper h;
    h.epochs = 2;
    h.batch = 4;
    (void)train_classifier(c, data, h);
    bool accent_moved = false;
    for (const auto &[path, value] : before.entries()) {
        if (path.rfind("head.accent.", 0) == 0) {
            accent_moved = accent_moved || !(c.params().get(path) == value);
        } else {
            CHECK_MESSAGE(c.params().get(path) == value, path);
        }
    }
    CHECK(accent_moved);
}

TEST_CASE("classifier checkpoint round trip") {
    TempDir dir("clsf");
    auto c = init_classifier(ClassifierConfig{}, three_groups(), 8);
    for (auto &[path, value] : c.params().entries()) {
        Matrix &m = c.params_mut().get_mut(path);
        for (double &v : m.data()) {
            v = static_cast<float>(v);
        }
    }
    save_classifier(c, dir / "c.piwclsf");
    const auto loaded = load_classifier(dir / "c.piwclsf");
    CHECK(loaded.config() == c.config());
    CHECK(loaded.taxonomy() == c.taxonomy());
    CHECK(loaded.params().entries() == c.params().entries());
    CHECK_THROWS_AS(load_classifier(dir / "none.piwclsf"), MissingFileError);
    CHECK(c.encoder_param_count() + c.head_param_count("gender") + c.head_param_count("accent") +
              c.head_param_count("age") ==
          c.params().scalar_count());
}

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <sstream>

#include "piw/errors.hpp"

namespace piw {

std::vector<std::string> normalize_words(const std::string &text) {
    std::string lower = text;
    for (char &c : lower) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    std::istringstream in(lower);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) {
        words.push_back(std::move(w));
    }
    return words;
}

namespace {

std::vector<std::size_t> dp_table(std::span<const std::string> ref, std::span<const std::string> hyp) {
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    std::vector<std::size_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t & { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) {
        at(i, 0) = i;
    }
    for (std::size_t j = 0; j <= m; ++j) {
        at(0, j) = j;
    }
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
        }
    }
    return d;
}

} // namespace

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
    return dp_table(a, b).back();
}

WerBreakdown wer(const std::string &ref, const std::string &hyp) {
    const auto r = normalize_words(ref);
    const auto h = normalize_words(hyp);
    if (r.empty()) {
        throw UndefinedWerError("WER is undefined for an empty reference");
    }
    const auto d = dp_table(r, h);
    const std::size_t m = h.size();
    auto at = [&](std::size_t i, std::size_t j) { return d[i * (m + 1) + j]; };
    WerBreakdown out;
    out.ref_words = r.size();
    std::size_t i = r.size();
    std::size_t j = h.size();
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool same = r[i - 1] == h[j - 1];
            if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
                out.substitutions += same ? 0 : 1;
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ++out.deletions;
            --i;
            continue;
        }
        ++out.insertions;
        --j;
    }
    return out;
}

FairnessMetrics fairness_metrics(const std::map<std::string, double> &wers) {
    if (wers.size() < 2) {
        throw InputError("fairness metrics need at least 2 values, got " + std::to_string(wers.size()));
    }
    double lo = wers.begin()->second;
    double hi = lo;
    for (const auto &[_, w] : wers) {
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    FairnessMetrics f;
    f.spd = hi - lo;
    if (lo > 0.0) {
        f.dir = hi / lo;
    } else {
        f.dir = hi > 0.0 ? kDirInfinity : 1.0;
    }
    return f;
}

AdapterSelection AdapterSelection::parse(const std::string &text) {
    if (text == "base") {
        return base_model();
    }
    if (text == "one-for-all") {
        return one_for_all();
    }
    if (text == "all" || text.empty()) {
        return merged();
    }
    std::vector<std::string> groups;
    std::stringstream in(text);
    std::string g;
    while (std::getline(in, g, ',')) {
        if (!g.empty()) {
            groups.push_back(g);
        }
    }
    return merged(std::move(groups));
}

std::string AdapterSelection::to_string() const {
    switch (kind) {
    case Kind::base:
        return "base";
    case Kind::one_for_all:
        return "one-for-all";
    case Kind::profiles:
        break;
    }
    if (groups.empty()) {
        return "all";
    }
    std::string s;
    for (const auto &g : groups) {
        s += (s.empty() ? "" : ",") + g;
    }
    return s;
}

nlohmann::json EvaluationReport::to_json() const {
    nlohmann::json gs = nlohmann::json::array();
    auto number = [](double v) { return std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v); };
    for (const auto &g : groups) {
        nlohmann::json values = nlohmann::json::array();
        for (const auto &v : g.values) {
            values.push_back({{"value", v.value}, {"wer", v.wer}, {"n_words", v.n_words}});
        }
        gs.push_back({{"group", g.group}, {"values", values}, {"spd", g.metrics.spd}, {"dir", number(g.metrics.dir)}});
    }
    return {{"overall_wer", overall_wer}, {"groups", gs}, {"mode", piw::to_string(mode)}, {"adapter", adapter}};
}

EvaluationReport evaluate(const ToyAsrModel &model, const ProfileLibrary &lib,
                          const CharacteristicClassifier *classifier, std::span<const LabeledUtterance> test,
                          CharacteristicMode mode, const AdapterSelection &selection, const WordTokenizer &tokenizer,
                          WeightMode weight_mode) {
    if (test.empty()) {
        throw InputError("evaluate: test set is empty");
    }
    std::optional<MergedAdapter> fixed;
    if (selection.kind == AdapterSelection::Kind::one_for_all) {
        const std::vector<LoraProfile> one{lib.load(kBaselineGroup, kBaselineValue)};
        fixed = merge_profiles(one);
    }
    EvaluationReport report;
    report.mode = mode;
    std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> per_value;
    std::size_t errors = 0;
    for (const auto &u : test) {
        std::string hyp;
        if (selection.kind == AdapterSelection::Kind::profiles) {
            InferenceRequest req{u.utterance.features, mode, std::nullopt, std::nullopt, weight_mode};
            if (mode == CharacteristicMode::known) {
                req.assignment = u.labels;
            }
            if (!selection.groups.empty()) {
                req.groups = selection.groups;
            }
            const InferenceResult r = infer(model, lib, classifier, req, tokenizer);
            hyp = r.text;
        } else {
            hyp = transcribe(model, fixed ? &*fixed : nullptr, u.utterance.features, tokenizer);
        }
        const WerBreakdown w = wer(u.transcript, hyp);
        errors += w.errors();
        report.total_words += w.ref_words;
        for (const auto &[g, v] : u.labels) {
            auto &acc = per_value[{g, v}];
            acc.first += w.errors();
            acc.second += w.ref_words;
        }
        report.hypotheses.push_back(std::move(hyp));
    }
    report.overall_wer = static_cast<double>(errors) / static_cast<double>(report.total_words);
    report.adapter = selection.kind == AdapterSelection::Kind::profiles ? "profiles:" + selection.to_string()
                                                                        : selection.to_string();
    for (const auto &g : lib.taxonomy().groups()) {
        GroupFairness gf{g.id, {}, {}};
        std::map<std::string, double> wers;
        for (const auto &v : g.values) {
            auto it = per_value.find({g.id, v});
            if (it == per_value.end() || it->second.second == 0) {
                continue;
            }
            const double w = static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
            gf.values.push_back({v, w, it->second.second, it->second.first});
            wers[v] = w;
        }
        if (gf.values.empty()) {
            continue;
        }
        if (wers.size() >= 2) {
            gf.metrics = fairness_metrics(wers);
        }
        report.groups.push_back(std::move(gf));
    }
    return report;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InputError("linear_fit: need at least two paired points");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) {
        throw InputError("linear_fit: x values are all equal");
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += e * e;
    }
    f.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
    return f;
}

nlohmann::json LatencyReport::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto &p : points) {
        pts.push_back({{"k", p.k},
                       {"mean_seconds", p.mean_seconds},
                       {"stddev_seconds", p.stddev_seconds},
                       {"iterations", p.iterations}});
    }
    return {{"points", pts}, {"fit", {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}}}};
}

LatencyReport bench_latency(const ToyAsrModel &model, std::span<const LoraProfile> profiles,
                            std::span<const std::size_t> k_values, std::size_t iterations,
                            const FeatureMatrix &features) {
    if (iterations < 5) {
        throw InputError("bench_latency: need at least 5 iterations per K");
    }
    for (std::size_t k : k_values) {
        if (k > profiles.size()) {
            throw InputError("bench_latency: K=" + std::to_string(k) + " exceeds the " +
                             std::to_string(profiles.size()) + " available profiles");
        }
    }
    LatencyReport report;
    std::vector<std::vector<double>> samples(k_values.size());
    // Interleave K values across rounds so slow drift in the host affects
    // every K alike.
    for (std::size_t it = 0; it < iterations + 1; ++it) {
        for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
            const std::size_t k = k_values[ki];
            const auto start = std::chrono::steady_clock::now();
            const auto adapter = adapter_for(profiles.first(k));
            const DecodeResult r = greedy_decode(model, adapter ? &*adapter : nullptr, features);
            const auto stop = std::chrono::steady_clock::now();
            if (r.tokens.size() > model.config().max_tgt_tokens) {
                throw NumericError("bench_latency: decode exceeded the length bound");
            }
            if (it > 0) { // first round warms caches
                samples[ki].push_back(std::chrono::duration<double>(stop - start).count());
            }
        }
    }
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
        const auto &s = samples[ki];
        LatencyPoint p;
        p.k = k_values[ki];
        p.iterations = s.size();
        for (double v : s) {
            p.mean_seconds += v;
        }
        p.mean_seconds /= static_cast<double>(s.size());
        double var = 0.0;
        for (double v : s) {
            var += (v - p.mean_seconds) * (v - p.mean_seconds);
        }
        p.stddev_seconds = std::sqrt(var / static_cast<double>(s.size() - 1));
        report.points.push_back(p);
        if (p.k >= 1) {
            xs.push_back(static_cast<double>(p.k));
            ys.push_back(p.mean_seconds);
        }
    }
    if (xs.size() >= 2) {
        report.fit = linear_fit(xs, ys);
    }
    return report;
}

} // namespace piw

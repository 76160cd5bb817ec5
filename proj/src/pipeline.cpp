// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "piw/errors.hpp"
#include "piw/metrics.hpp"

namespace piw {

namespace {

std::string lora_path(const std::string &layer, const char *factor) { return "lora." + layer + "." + factor; }

ParamSet training_params(const ToyAsrModel &model, const LoraProfile &profile) {
    ParamSet params;
    for (const auto &[path, m] : model.params().entries()) {
        params.add(path, m, false);
    }
    for (const auto &[id, layer] : profile.layers) {
        params.add(lora_path(id, "a"), layer.a, true);
        params.add(lora_path(id, "b"), layer.b, true);
    }
    return params;
}

AdapterBindings adapter_from(const LoraProfile &profile, const ad::Bindings &bind) {
    AdapterBindings out;
    const double s = profile.scaling();
    for (const auto &[id, _] : profile.layers) {
        ad::Var b = bind.at(lora_path(id, "b"));
        out.emplace(id, LayerAdapter{bind.at(lora_path(id, "a")), s == 1.0 ? b : ad::scale(b, s)});
    }
    return out;
}

/// Micro-averaged WER of a single profile over `data`.
double profile_wer(const ToyAsrModel &model, const LoraProfile &profile,
                   std::span<const LabeledUtterance *const> data, const WordTokenizer &tokenizer) {
    const std::vector<LoraProfile> one{profile};
    const MergedAdapter adapter = merge_profiles(one);
    std::size_t errors = 0;
    std::size_t words = 0;
    for (const LabeledUtterance *u : data) {
        const WerBreakdown w = wer(u->transcript, transcribe(model, &adapter, u->utterance.features, tokenizer));
        errors += w.errors();
        words += w.ref_words;
    }
    return static_cast<double>(errors) / static_cast<double>(words);
}

struct Candidate {
    LoraProfile profile;
    double lr = 0.0;
    std::optional<double> val_wer;
};

/// Trains one candidate per grid lr and returns the best by validation WER
/// (first in grid order on ties; the first candidate when there is no
/// validation data).
Candidate train_with_grid(const ToyAsrModel &model, const LoraProfile &init,
                          std::span<const LabeledUtterance *const> train, std::span<const LabeledUtterance *const> val,
                          const WordTokenizer &tokenizer, const TrainSpec &spec) {
    std::optional<Candidate> best;
    for (double lr : spec.lr_grid) {
        const LoraHyper hyper{lr, spec.epochs, spec.batch, derive_seed(spec.seed, {"lora-order", init.group, init.value})};
        Candidate c{train_lora(model, init, train, hyper), lr, std::nullopt};
        if (!val.empty()) {
            c.val_wer = profile_wer(model, c.profile, val, tokenizer);
        }
        const bool better = !best || (c.val_wer && best->val_wer && *c.val_wer < *best->val_wer);
        if (better) {
            best = std::move(c);
        }
        if (val.empty()) {
            break; // no validation data to select on: keep the first grid point
        }
    }
    return std::move(*best);
}

template <typename Fn> void run_parallel(std::size_t n, std::size_t jobs, Fn fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto &w : workers) {
        w.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

std::vector<const LabeledUtterance *> with_label(std::span<const LabeledUtterance> data, const std::string &group,
                                                 const std::string &value) {
    std::vector<const LabeledUtterance *> out;
    for (const auto &u : data) {
        auto it = u.labels.find(group);
        if (it != u.labels.end() && it->second == value) {
            out.push_back(&u);
        }
    }
    return out;
}

std::vector<const LabeledUtterance *> all_of(std::span<const LabeledUtterance> data) {
    std::vector<const LabeledUtterance *> out;
    for (const auto &u : data) {
        out.push_back(&u);
    }
    return out;
}

ProfileReport report_for(const Candidate &c, std::size_t samples) {
    ProfileReport r{c.profile.group, c.profile.value, c.lr, c.val_wer, c.profile.trained_steps, samples, {}};
    if (samples == 0) {
        r.lr_selected = 0.0;
        r.warning = "no training samples for " + c.profile.group + "/" + c.profile.value + "; profile left untrained";
    }
    return r;
}

std::size_t library_rank(const ProfileLibrary &lib) {
    for (const auto &e : lib.entries()) {
        return lib.load(e.group, e.value).rank;
    }
    return 4;
}

} // namespace

std::vector<LabeledUtterance> load_utterances(const Manifest &manifest, const WordTokenizer &tokenizer) {
    std::vector<LabeledUtterance> out;
    out.reserve(manifest.samples.size());
    for (const auto &s : manifest.samples) {
        out.push_back({{load_features(manifest.feature_path(s)), tokenizer.encode(s.transcript)}, s.transcript, s.labels});
    }
    return out;
}

std::vector<LabeledSlice> classifier_slices(std::span<const LabeledUtterance> data, std::size_t n_frames) {
    std::vector<LabeledSlice> out;
    out.reserve(data.size());
    for (const auto &u : data) {
        out.push_back({slice_for_classifier(u.utterance.features, n_frames), u.labels});
    }
    return out;
}

std::size_t lora_steps(std::size_t n, const LoraHyper &hyper) {
    return hyper.epochs * ((n + hyper.batch - 1) / hyper.batch);
}

LoraProfile train_lora(const ToyAsrModel &model, LoraProfile profile, std::span<const LabeledUtterance *const> data,
                       const LoraHyper &hyper) {
    if (hyper.batch == 0) {
        throw ConfigError("train_lora: batch must be positive");
    }
    if (data.empty()) {
        return profile;
    }
    ParamSet params = training_params(model, profile);
    std::mt19937_64 rng(hyper.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t steps = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t end = std::min(order.size(), start + hyper.batch);
            auto loss_fn = [&](ad::Tape &tape, const ad::Bindings &bind) {
                const AdapterBindings adapters = adapter_from(profile, bind);
                ad::Var total;
                for (std::size_t i = start; i < end; ++i) {
                    const Utterance &u = data[order[i]]->utterance;
                    ad::Var l = teacher_forced_loss(tape, model, bind, adapters, u.features, u.tokens);
                    total = i == start ? l : ad::add(total, l);
                }
                return ad::scale(total, 1.0 / static_cast<double>(end - start));
            };
            auto grads = ad::gradients(loss_fn, params);
            clip_global_norm(grads, hyper.clip_norm);
            sgd_step(params, grads, hyper.lr);
            ++steps;
        }
    }
    for (auto &[id, layer] : profile.layers) {
        layer.a = params.get(lora_path(id, "a"));
        layer.b = params.get(lora_path(id, "b"));
    }
    profile.trained_steps += steps;
    return profile;
}

double profile_loss(const ToyAsrModel &model, const LoraProfile &profile,
                    std::span<const LabeledUtterance *const> data) {
    if (data.empty()) {
        return 0.0;
    }
    const std::vector<LoraProfile> one{profile};
    const MergedAdapter adapter = merge_profiles(one);
    double total = 0.0;
    for (const LabeledUtterance *u : data) {
        total += forward_loss(model, &adapter, u->utterance.features, u->utterance.tokens).loss;
    }
    return total / static_cast<double>(data.size());
}

std::vector<double> wide_lr_grid() { return {1e-3, 1e-4, 5e-4, 1e-5, 5e-5}; }

void TrainSpec::validate() const {
    if (lr_grid.empty()) {
        throw ConfigError("train spec: lr_grid must be non-empty");
    }
    for (double lr : lr_grid) {
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            throw ConfigError("train spec: learning rates must be positive and finite");
        }
    }
    if (epochs == 0) {
        throw ConfigError("train spec: epochs must be >= 1");
    }
    if (batch == 0) {
        throw ConfigError("train spec: batch must be >= 1");
    }
}

nlohmann::json TrainingReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &p : profiles) {
        nlohmann::json e = {{"group", p.group},
                            {"value", p.value},
                            {"lr_selected", p.lr_selected},
                            {"val_wer", p.val_wer ? nlohmann::json(*p.val_wer) : nlohmann::json(nullptr)},
                            {"steps", p.steps},
                            {"samples", p.samples}};
        if (!p.warning.empty()) {
            e["warning"] = p.warning;
        }
        arr.push_back(std::move(e));
    }
    return {{"profiles", arr}};
}

TrainingReport train_profiles(ProfileLibrary &lib, const ToyAsrModel &model, std::span<const LabeledUtterance> train,
                              std::span<const LabeledUtterance> val, const WordTokenizer &tokenizer,
                              const TrainSpec &spec) {
    spec.validate();
    lib.check_model(model.config());
    if (!model.params().trainable().empty()) {
        throw ConfigError("train_profiles: the base model must be frozen");
    }
    struct Task {
        std::string group;
        std::string value;
    };
    std::vector<Task> tasks;
    for (const auto &g : lib.taxonomy().groups()) {
        for (const auto &v : g.values) {
            tasks.push_back({g.id, v});
        }
    }
    std::vector<Candidate> results(tasks.size());
    std::vector<std::size_t> counts(tasks.size());
    run_parallel(tasks.size(), spec.jobs, [&](std::size_t i) {
        const auto subset = with_label(train, tasks[i].group, tasks[i].value);
        const auto val_subset = with_label(val, tasks[i].group, tasks[i].value);
        LoraProfile init = lib.load(tasks[i].group, tasks[i].value);
        counts[i] = subset.size();
        results[i] = subset.empty() ? Candidate{init, 0.0, std::nullopt}
                                    : train_with_grid(model, init, subset, val_subset, tokenizer, spec);
    });
    TrainingReport report;
    std::vector<LoraProfile> trained;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        report.profiles.push_back(report_for(results[i], counts[i]));
        if (!report.profiles.back().warning.empty()) {
            std::cerr << "warning: " << report.profiles.back().warning << "\n";
        }
        trained.push_back(std::move(results[i].profile));
    }
    lib.store(trained);
    return report;
}

ProfileReport train_one_for_all(ProfileLibrary &lib, const ToyAsrModel &model, std::span<const LabeledUtterance> train,
                                std::span<const LabeledUtterance> val, const WordTokenizer &tokenizer,
                                const TrainSpec &spec) {
    spec.validate();
    lib.check_model(model.config());
    LoraProfile init = init_profile(kBaselineGroup, kBaselineValue, library_rank(lib), model.injection_points(), spec.seed);
    const auto subset = all_of(train);
    const auto val_subset = all_of(val);
    Candidate c = subset.empty() ? Candidate{init, 0.0, std::nullopt}
                                 : train_with_grid(model, init, subset, val_subset, tokenizer, spec);
    ProfileReport r = report_for(c, subset.size());
    lib.store({c.profile});
    return r;
}

ProfileReport add_value_trained(ProfileLibrary &lib, const ToyAsrModel &model, const std::string &group,
                                const std::string &value, std::span<const LabeledUtterance> train,
                                std::span<const LabeledUtterance> val, const WordTokenizer &tokenizer,
                                const TrainSpec &spec, std::size_t rank) {
    spec.validate();
    lib.check_model(model.config());
    if (lib.taxonomy().has_value(group, value)) {
        throw ConflictError("value '" + value + "' already exists in group '" + group + "'");
    }
    LoraProfile init = init_profile(group, value, rank, model.injection_points(), spec.seed);
    const auto subset = with_label(train, group, value);
    const auto val_subset = with_label(val, group, value);
    Candidate c = subset.empty() ? Candidate{init, 0.0, std::nullopt}
                                 : train_with_grid(model, init, subset, val_subset, tokenizer, spec);
    ProfileReport r = report_for(c, subset.size());
    lib.add_value(c.profile);
    return r;
}

std::optional<MergedAdapter> adapter_for(std::span<const LoraProfile> profiles, WeightMode mode) {
    if (profiles.empty()) {
        return std::nullopt;
    }
    return merge_profiles(profiles, std::nullopt, mode);
}

std::string transcribe(const ToyAsrModel &model, const MergedAdapter *adapter, const FeatureMatrix &features,
                       const WordTokenizer &tokenizer) {
    return tokenizer.decode(greedy_decode(model, adapter, features).tokens);
}

InferenceResult infer(const ToyAsrModel &model, const ProfileLibrary &lib, const CharacteristicClassifier *classifier,
                      const InferenceRequest &request, const WordTokenizer &tokenizer) {
    lib.check_model(model.config());
    InferenceResult out;
    if (request.mode == CharacteristicMode::known) {
        if (!request.assignment) {
            throw InputError("infer: known mode requires a characteristic assignment");
        }
        out.assignment = *request.assignment;
    } else {
        if (classifier == nullptr) {
            throw InputError("infer: inferred mode requires a classifier");
        }
        const auto slice = slice_for_classifier(request.features, classifier->config().input_frames);
        out.assignment = classify(*classifier, slice).assignment();
        // Heads for groups the library does not know cannot select a profile.
        std::erase_if(out.assignment, [&](const auto &kv) { return lib.taxonomy().find(kv.first) == nullptr; });
    }
    if (request.groups) {
        std::erase_if(out.assignment, [&](const auto &kv) {
            return std::find(request.groups->begin(), request.groups->end(), kv.first) == request.groups->end();
        });
    }
    const auto profiles = lib.select_profiles(out.assignment);
    const auto adapter = adapter_for(profiles, request.weight_mode);
    out.adapter = adapter ? adapter->description() : "none";
    out.tokens = greedy_decode(model, adapter ? &*adapter : nullptr, request.features).tokens;
    out.text = tokenizer.decode(out.tokens);
    return out;
}

} // namespace piw

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// The desk-default generated corpus plus its pre-trained model, built once per
// test binary.

#pragma once

#include <memory>

#include "piw/asr_model.hpp"
#include "piw/pipeline.hpp"
#include "piw/synth_data.hpp"
#include "test_util.hpp"

namespace piw::testing {

struct Corpus {
    TempDir dir{"corpus"};
    SynthConfig synth;
    GeneratedDataset data;
    std::unique_ptr<WordTokenizer> tokenizer;
    std::vector<LabeledUtterance> generic;
    std::vector<LabeledUtterance> train;
    std::vector<LabeledUtterance> val;
    std::vector<LabeledUtterance> test;
    ModelConfig model_cfg;
    ToyAsrModel model;

    Corpus() {
        synth.samples_per_combination = 40;
        data = generate_dataset(synth, dir.path());
        tokenizer = std::make_unique<WordTokenizer>(synth.vocab);
        generic = load_utterances(data.generic, *tokenizer);
        train = load_utterances(data.train, *tokenizer);
        val = load_utterances(data.val, *tokenizer);
        test = load_utterances(data.test, *tokenizer);
        model_cfg.vocab = std::max<std::size_t>(model_cfg.vocab, tokenizer->required_vocab());
        model_cfg.feature_bins = synth.feature_bins;
        std::vector<Utterance> g;
        for (const auto &u : generic) {
            g.push_back(u.utterance);
        }
        model = pretrain_base(init_model(model_cfg), g, PretrainHyper{});
    }

    std::vector<Utterance> plain(const std::vector<LabeledUtterance> &v) const {
        std::vector<Utterance> out;
        for (const auto &u : v) {
            out.push_back(u.utterance);
        }
        return out;
    }
};

inline const Corpus &corpus() {
    static const Corpus c;
    return c;
}

} // namespace piw::testing

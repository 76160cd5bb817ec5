// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// piw command-line entry point. Reports go to stdout as JSON, logs to stderr.
// Exit codes: 0 success, 1 runtime/domain error, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "piw/asr_model.hpp"
#include "piw/classifier.hpp"
#include "piw/errors.hpp"
#include "piw/features.hpp"
#include "piw/lora.hpp"
#include "piw/metrics.hpp"
#include "piw/pipeline.hpp"
#include "piw/profile_library.hpp"
#include "piw/synth_data.hpp"
#include "piw/taxonomy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool g_quiet = false;

void log(const std::string &msg) {
    if (!g_quiet) {
        std::cerr << "piw: " << msg << '\n';
    }
}

void emit(const json &j) { std::cout << j.dump(2) << '\n'; }

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw piw::MissingFileError("cannot open '" + path.string() + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw piw::FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

std::vector<double> parse_doubles(const std::string &text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception &) {
            throw UsageError("not a number: '" + item + "'");
        }
    }
    return out;
}

std::vector<std::size_t> parse_counts(const std::string &text) {
    std::vector<std::size_t> out;
    for (double v : parse_doubles(text)) {
        if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw UsageError("not a count: " + std::to_string(v));
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

piw::Manifest split_manifest(const fs::path &data, const std::string &split) {
    return piw::load_manifest(data / (split + ".json"));
}

piw::WordTokenizer tokenizer_for(const piw::Manifest &m) { return piw::WordTokenizer(m.vocab); }

// Appends `--key value` for every key of the --config file that is not
// already on the command line, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        }
    }
    if (!path) {
        return args;
    }
    const json cfg = read_json(*path);
    if (!cfg.is_object()) {
        throw UsageError("--config: top level must be an object");
    }
    auto present = [&](const std::string &flag) {
        for (const auto &a : args) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) {
                return true;
            }
        }
        return false;
    };
    for (const auto &[key, value] : cfg.items()) {
        const std::string flag = "--" + key;
        if (key == "config" || present(flag)) {
            continue;
        }
        if (value.is_boolean()) {
            if (value.get<bool>()) {
                args.push_back(flag);
            }
        } else if (value.is_array()) {
            std::string joined;
            for (const auto &v : value) {
                joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
            }
            args.push_back(flag);
            args.push_back(joined);
        } else if (value.is_string()) {
            args.push_back(flag);
            args.push_back(value.get<std::string>());
        } else if (value.is_number()) {
            args.push_back(flag);
            args.push_back(value.dump());
        } else {
            throw UsageError("--config: unsupported value for '" + key + "'");
        }
    }
    return args;
}

struct Globals {
    std::uint64_t seed = 42;
    std::size_t jobs = 1;
};

piw::TrainSpec train_spec(const Globals &g, const std::string &lr_grid, std::size_t epochs, std::size_t batch) {
    piw::TrainSpec spec;
    if (lr_grid == "wide") {
        spec.lr_grid = piw::wide_lr_grid();
    } else if (!lr_grid.empty()) {
        spec.lr_grid = parse_doubles(lr_grid);
    }
    spec.epochs = epochs;
    spec.batch = batch;
    spec.seed = g.seed;
    spec.jobs = g.jobs;
    spec.validate();
    return spec;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"piw: characteristic-aware LoRA profile libraries for a toy ASR model"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::optional<std::uint64_t> seed_flag;
    std::string config_path;
    app.add_option("--seed", seed_flag, "Random seed (default 42, or PIW_SEED)");
    app.add_option("--jobs", g.jobs, "Worker threads for independent trainings")->check(CLI::PositiveNumber);
    app.add_option("--config", config_path, "JSON file whose keys mirror flags");
    app.add_flag("-q,--quiet", g_quiet, "Suppress logs on stderr");

    // gen-data
    piw::SynthConfig synth;
    std::string gen_out;
    std::string gen_taxonomy;
    auto *gen = app.add_subcommand("gen-data", "Generate the synthetic corpus (generic/train/val/test)");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--taxonomy", gen_taxonomy, "Taxonomy JSON (default accent a,b,c; gender m,f)");
    gen->add_option("--samples-per-combination", synth.samples_per_combination);
    gen->add_option("--skew", synth.skew, "Over-representation factor of each group's first value");
    gen->add_option("--signature-strength", synth.signature_strength);
    gen->add_option("--noise-sigma", synth.noise_sigma);
    gen->add_option("--generic-fraction", synth.generic_fraction);

    // extract-features
    std::string wav_path;
    std::string feat_out;
    piw::MelConfig mel;
    mel.bins = 16;
    auto *ext = app.add_subcommand("extract-features", "WAV file to log-mel feature file");
    ext->add_option("--wav", wav_path)->required();
    ext->add_option("--out", feat_out)->required();
    ext->add_option("--bins", mel.bins);
    ext->add_option("--n-fft", mel.n_fft);
    ext->add_option("--hop", mel.hop);

    // shared paths
    std::string data_dir;
    std::string model_path;
    std::string library_path;
    std::string classifier_path;

    // pretrain-base
    piw::PretrainHyper pre;
    piw::ModelConfig model_cfg;
    auto *pt = app.add_subcommand("pretrain-base", "Pre-train the toy ASR model on the generic split");
    pt->add_option("--data", data_dir, "Directory written by gen-data")->required();
    pt->add_option("--out", model_path, "Model file to write")->required();
    pt->add_option("--epochs", pre.epochs);
    pt->add_option("--lr", pre.lr);
    pt->add_option("--batch", pre.batch);

    // init-library
    piw::LibraryOptions lib_opts;
    std::string lib_taxonomy;
    double alpha = 0.0;
    auto *il = app.add_subcommand("init-library", "Create a profile library with untrained profiles");
    il->add_option("--model", model_path)->required();
    il->add_option("--out", library_path, "Library directory")->required();
    auto *il_tax = il->add_option("--taxonomy", lib_taxonomy, "Taxonomy JSON");
    auto *il_data = il->add_option("--data", data_dir, "Take the taxonomy from this corpus");
    il_tax->excludes(il_data);
    il->add_option("--rank", lib_opts.rank)->check(CLI::PositiveNumber);
    auto *il_alpha = il->add_option("--alpha", alpha, "LoRA scaling numerator (default: rank)");

    // train-profiles / train-one-for-all
    std::string lr_grid;
    std::size_t epochs = piw::TrainSpec{}.epochs;
    std::size_t batch = piw::TrainSpec{}.batch;
    auto add_train_opts = [&](CLI::App *sub) {
        sub->add_option("--model", model_path)->required();
        sub->add_option("--library", library_path)->required();
        sub->add_option("--data", data_dir)->required();
        sub->add_option("--lr-grid", lr_grid, "Comma-separated learning rates, or 'wide' for the five-point grid from 1e-5 to 1e-3");
        sub->add_option("--epochs", epochs);
        sub->add_option("--batch", batch);
    };
    auto *tp = app.add_subcommand("train-profiles", "Train one profile per characteristic value");
    add_train_opts(tp);
    auto *tofa = app.add_subcommand("train-one-for-all", "Train the single-profile baseline");
    add_train_opts(tofa);

    // train-classifier
    piw::ClassifierHyper ch;
    auto *tc = app.add_subcommand("train-classifier", "Train the characteristic classifier");
    tc->add_option("--data", data_dir)->required();
    tc->add_option("--out", classifier_path)->required();
    tc->add_option("--epochs", ch.epochs);
    tc->add_option("--lr", ch.lr);
    tc->add_option("--batch", ch.batch);

    // add-value
    std::string new_group;
    std::string new_value;
    std::size_t new_rank = 0;
    auto *av = app.add_subcommand("add-value", "Add a characteristic value and train only its profile");
    add_train_opts(av);
    av->add_option("--group", new_group)->required();
    av->add_option("--value", new_value)->required();
    av->add_option("--rank", new_rank, "Profile rank (default: the library's)");

    // infer
    std::string features_path;
    std::string characteristics;
    bool infer_chars = false;
    std::string groups_filter;
    std::string weight_mode = "both";
    auto *inf = app.add_subcommand("infer", "Transcribe one utterance");
    inf->add_option("--model", model_path)->required();
    inf->add_option("--library", library_path)->required();
    inf->add_option("--classifier", classifier_path);
    inf->add_option("--data", data_dir, "Corpus whose vocabulary decodes the output");
    auto *inf_feat = inf->add_option("--features", features_path, "Feature file");
    auto *inf_wav = inf->add_option("--wav", wav_path, "WAV file (features extracted on the fly)");
    inf_feat->excludes(inf_wav);
    auto *known_opt = inf->add_option("--characteristics", characteristics, "Known mode: group=value,...");
    auto *inferred_opt = inf->add_flag("--infer-characteristics", infer_chars, "Inferred mode: use the classifier");
    known_opt->excludes(inferred_opt);
    inf->add_option("--groups", groups_filter, "Only merge profiles of these groups");
    inf->add_option("--weight-mode", weight_mode, "both|single")->check(CLI::IsMember({"both", "single"}));

    // evaluate
    std::string split = "test";
    std::string mode_text = "known";
    std::string adapter_text = "all";
    bool with_hyps = false;
    auto *ev = app.add_subcommand("evaluate", "WER and fairness metrics on a split");
    ev->add_option("--model", model_path)->required();
    ev->add_option("--library", library_path)->required();
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--classifier", classifier_path);
    ev->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--mode", mode_text)->check(CLI::IsMember({"known", "inferred"}));
    ev->add_option("--adapter", adapter_text, "base | one-for-all | all | comma-separated groups");
    ev->add_option("--weight-mode", weight_mode)->check(CLI::IsMember({"both", "single"}));
    ev->add_flag("--hypotheses", with_hyps, "Include per-sample hypotheses");

    // overhead
    double p_enc = 0.0;
    double p_h = 0.0;
    double p_pro = 0.0;
    double base_params = 0.0;
    std::string oh_taxonomy;
    std::string oh_mode = "inferred";
    auto *oh = app.add_subcommand("overhead", "Parameter overhead of the classifier plus profile libraries");
    oh->add_option("--p-enc", p_enc, "Classifier encoder parameters")->required();
    oh->add_option("--p-h", p_h, "Parameters per classifier head")->required();
    oh->add_option("--p-pro", p_pro, "Parameters per profile")->required();
    oh->add_option("--base", base_params, "Base model parameters")->required();
    oh->add_option("--taxonomy", oh_taxonomy)->required();
    oh->add_option("--mode", oh_mode)->check(CLI::IsMember({"known", "inferred"}));

    // bench
    std::string k_values = "0,1,2,3,4";
    std::size_t iterations = 2000;
    auto *bn = app.add_subcommand("bench", "Inference latency against the number of merged profiles");
    bn->add_option("--model", model_path)->required();
    bn->add_option("--library", library_path)->required();
    bn->add_option("--data", data_dir)->required();
    bn->add_option("--k", k_values, "Profile counts to time");
    bn->add_option("--iterations", iterations)->check(CLI::Range(5, 1000000));

    std::vector<std::string> args;
    try {
        std::vector<std::string> raw(argv + 1, argv + argc);
        args = expand_config(raw);
        std::reverse(args.begin(), args.end()); // CLI11 consumes the vector from the back
        app.parse(args);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, std::cout, std::cerr);
        return code == 0 ? 0 : 2;
    } catch (const UsageError &e) {
        std::cerr << "piw: " << e.what() << '\n';
        return 2;
    } catch (const piw::Error &e) {
        std::cerr << "piw: " << e.what() << '\n';
        return 2;
    }

    try {
        if (seed_flag) {
            g.seed = *seed_flag;
        } else if (const char *env = std::getenv("PIW_SEED")) {
            try {
                std::size_t used = 0;
                g.seed = std::stoull(env, &used);
                if (used != std::string(env).size()) {
                    throw std::invalid_argument(env);
                }
            } catch (const std::exception &) {
                throw UsageError(std::string("PIW_SEED is not an unsigned integer: '") + env + "'");
            }
        }

        if (gen->parsed()) {
            synth.seed = g.seed;
            if (!gen_taxonomy.empty()) {
                synth.taxonomy = piw::CharacteristicTaxonomy::from_json(read_json(gen_taxonomy));
            }
            log("generating corpus in " + gen_out);
            const auto ds = piw::generate_dataset(synth, gen_out);
            emit({{"out", gen_out},
                  {"generic", ds.generic.samples.size()},
                  {"train", ds.train.samples.size()},
                  {"val", ds.val.samples.size()},
                  {"test", ds.test.samples.size()},
                  {"digest", ds.train.digest}});
        } else if (ext->parsed()) {
            const auto wave = piw::read_wav(wav_path);
            const auto f = piw::log_mel_spectrogram(wave, mel);
            piw::save_features(feat_out, f);
            emit({{"out", feat_out}, {"bins", f.bins()}, {"frames", f.frames()}, {"sample_rate", wave.sample_rate}});
        } else if (pt->parsed()) {
            const auto generic = split_manifest(data_dir, "generic");
            const auto tok = tokenizer_for(generic);
            model_cfg.seed = g.seed;
            model_cfg.vocab = std::max(model_cfg.vocab, tok.required_vocab());
            pre.seed = g.seed;
            std::vector<piw::Utterance> data;
            for (auto &u : piw::load_utterances(generic, tok)) {
                data.push_back(std::move(u.utterance));
            }
            auto model = piw::init_model(model_cfg);
            const double before = piw::mean_loss(model, data);
            log("pre-training on " + std::to_string(data.size()) + " generic utterances");
            model = piw::pretrain_base(std::move(model), data, pre);
            const double after = piw::mean_loss(model, data);
            piw::save_model(model, model_path);
            emit({{"out", model_path},
                  {"samples", data.size()},
                  {"loss_before", before},
                  {"loss_after", after},
                  {"model_config_hash", model.config().hash()}});
        } else if (il->parsed()) {
            const auto model = piw::load_model(model_path);
            piw::CharacteristicTaxonomy tax;
            if (!lib_taxonomy.empty()) {
                tax = piw::CharacteristicTaxonomy::from_json(read_json(lib_taxonomy));
            } else if (!data_dir.empty()) {
                tax = split_manifest(data_dir, "train").taxonomy;
            } else {
                throw UsageError("init-library needs --taxonomy or --data");
            }
            lib_opts.seed = g.seed;
            if (il_alpha->count() > 0) {
                lib_opts.alpha = alpha;
            }
            const auto lib = piw::ProfileLibrary::create(library_path, tax, model.config(), lib_opts);
            emit(lib.to_json());
        } else if (tp->parsed() || tofa->parsed() || av->parsed()) {
            const auto model = piw::load_model(model_path);
            auto lib = piw::ProfileLibrary::open(library_path);
            const auto train_m = split_manifest(data_dir, "train");
            const auto val_m = split_manifest(data_dir, "val");
            const auto tok = tokenizer_for(train_m);
            const auto train = piw::load_utterances(train_m, tok);
            const auto val = piw::load_utterances(val_m, tok);
            const auto spec = train_spec(g, lr_grid, epochs, batch);
            if (tp->parsed()) {
                log("training profiles on " + std::to_string(train.size()) + " samples");
                emit(piw::train_profiles(lib, model, train, val, tok, spec).to_json());
            } else if (tofa->parsed()) {
                log("training one-for-all on " + std::to_string(train.size()) + " samples");
                piw::TrainingReport r;
                r.profiles.push_back(piw::train_one_for_all(lib, model, train, val, tok, spec));
                emit(r.to_json());
            } else {
                std::size_t rank = new_rank;
                if (rank == 0) {
                    const auto &e = lib.entries();
                    if (e.empty()) {
                        throw piw::InputError("add-value: library has no profiles to take the rank from");
                    }
                    rank = lib.load(e.front().group, e.front().value).rank;
                }
                const auto version_before = lib.version();
                piw::TrainingReport r;
                r.profiles.push_back(
                    piw::add_value_trained(lib, model, new_group, new_value, train, val, tok, spec, rank));
                json out = r.to_json();
                out["version_before"] = version_before;
                out["version"] = lib.version();
                emit(out);
            }
        } else if (tc->parsed()) {
            const auto train_m = split_manifest(data_dir, "train");
            const auto tok = tokenizer_for(train_m);
            const auto train = piw::load_utterances(train_m, tok);
            piw::ClassifierConfig cc;
            ch.seed = g.seed;
            auto cls = piw::init_classifier(cc, train_m.taxonomy, g.seed);
            const auto slices = piw::classifier_slices(train, cc.input_frames);
            log("training classifier on " + std::to_string(slices.size()) + " slices");
            const auto curve = piw::train_classifier(cls, slices, ch);
            piw::save_classifier(cls, classifier_path);
            json heads = json::object();
            for (const auto &grp : cls.taxonomy().groups()) {
                heads[grp.id] = cls.head_param_count(grp.id);
            }
            emit({{"out", classifier_path},
                  {"loss_curve", curve},
                  {"encoder_params", cls.encoder_param_count()},
                  {"head_params", heads}});
        } else if (inf->parsed()) {
            if (!infer_chars && known_opt->count() == 0) {
                throw UsageError("infer needs --characteristics or --infer-characteristics");
            }
            if (features_path.empty() && wav_path.empty()) {
                throw UsageError("infer needs --features or --wav");
            }
            const auto model = piw::load_model(model_path);
            const auto lib = piw::ProfileLibrary::open(library_path);
            std::optional<piw::CharacteristicClassifier> cls;
            if (!classifier_path.empty()) {
                cls = piw::load_classifier(classifier_path);
            }
            piw::InferenceRequest req;
            if (!features_path.empty()) {
                req.features = piw::load_features(features_path);
            } else {
                piw::MelConfig m;
                m.bins = model.config().feature_bins;
                req.features = piw::log_mel_spectrogram(piw::read_wav(wav_path), m);
            }
            req.mode = infer_chars ? piw::CharacteristicMode::inferred : piw::CharacteristicMode::known;
            if (!infer_chars) {
                req.assignment = piw::parse_assignment(characteristics);
            }
            if (!groups_filter.empty()) {
                std::vector<std::string> gs;
                std::stringstream in(groups_filter);
                std::string item;
                while (std::getline(in, item, ',')) {
                    gs.push_back(item);
                }
                req.groups = gs;
            }
            req.weight_mode = piw::parse_weight_mode(weight_mode);
            // The library's vocabulary is not stored; decode ids through the
            // default synthetic word list unless a corpus says otherwise.
            const piw::WordTokenizer tok(data_dir.empty() ? piw::default_vocabulary()
                                                          : split_manifest(data_dir, "test").vocab);
            const auto r = piw::infer(model, lib, cls ? &*cls : nullptr, req, tok);
            emit({{"text", r.text},
                  {"tokens", r.tokens},
                  {"assignment", r.assignment},
                  {"adapter", r.adapter},
                  {"mode", piw::to_string(req.mode)}});
        } else if (ev->parsed()) {
            const auto model = piw::load_model(model_path);
            const auto lib = piw::ProfileLibrary::open(library_path);
            const auto mode = piw::parse_mode(mode_text);
            std::optional<piw::CharacteristicClassifier> cls;
            if (!classifier_path.empty()) {
                cls = piw::load_classifier(classifier_path);
            }
            const auto m = split_manifest(data_dir, split);
            const auto tok = tokenizer_for(m);
            const auto test = piw::load_utterances(m, tok);
            const auto report = piw::evaluate(model, lib, cls ? &*cls : nullptr, test, mode,
                                              piw::AdapterSelection::parse(adapter_text), tok,
                                              piw::parse_weight_mode(weight_mode));
            json out = report.to_json();
            out["split"] = split;
            out["total_words"] = report.total_words;
            if (with_hyps) {
                out["hypotheses"] = report.hypotheses;
            }
            emit(out);
        } else if (oh->parsed()) {
            const auto tax = piw::CharacteristicTaxonomy::from_json(read_json(oh_taxonomy));
            emit(piw::compute_overhead(p_enc, p_h, p_pro, tax, base_params, piw::parse_mode(oh_mode)).to_json());
        } else if (bn->parsed()) {
            const auto model = piw::load_model(model_path);
            const auto lib = piw::ProfileLibrary::open(library_path);
            lib.check_model(model.config());
            std::vector<piw::LoraProfile> profiles;
            for (const auto &e : lib.entries()) {
                if (e.group != piw::kBaselineGroup) {
                    profiles.push_back(lib.load(e.group, e.value));
                }
            }
            const auto m = split_manifest(data_dir, "test");
            if (m.samples.empty()) {
                throw piw::InputError("bench: test split is empty");
            }
            const auto features = piw::load_features(m.feature_path(m.samples.front()));
            const auto ks = parse_counts(k_values);
            log("timing K in {" + k_values + "}, " + std::to_string(iterations) + " iterations each");
            emit(piw::bench_latency(model, profiles, ks, iterations, features).to_json());
        }
    } catch (const UsageError &e) {
        std::cerr << "piw: " << e.what() << '\n';
        return 2;
    } catch (const piw::Error &e) {
        std::cerr << "piw: " << e.what() << '\n';
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "piw: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

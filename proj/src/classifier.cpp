// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "piw/binary_io.hpp"
#include "piw/errors.hpp"
#include "piw/lora.hpp"

namespace piw {

namespace {

constexpr const char *kClassifierMagic = "PIWCLSF1";
constexpr std::uint16_t kClassifierVersion = 1;

std::string conv_path(std::size_t block, int conv, const char *what) {
    return "enc." + std::to_string(block) + ".conv" + std::to_string(conv) + "." + what;
}

std::string head_path(const std::string &group, int layer, const char *what) {
    return "head." + group + ".fc" + std::to_string(layer) + "." + what;
}

Matrix gaussian(std::mt19937_64 &rng, std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (double &v : m.data()) {
        v = normal(rng);
    }
    return m;
}

void add_head_params(ParamSet &params, const ClassifierConfig &cfg, const std::string &group,
                     std::size_t n_values, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, {"classifier-head", group}));
    const std::size_t widths[4] = {cfg.flat_size(), cfg.head_hidden1, cfg.head_hidden2, n_values};
    for (int l = 1; l <= 3; ++l) {
        const std::size_t in = widths[l - 1];
        const std::size_t out = widths[l];
        params.add(head_path(group, l, "weight"), gaussian(rng, out, in, std::sqrt(2.0 / static_cast<double>(in))), true);
        params.add(head_path(group, l, "bias"), Matrix(1, out), true);
    }
}

} // namespace

void ClassifierConfig::validate() const {
    if (channels.empty()) {
        throw ConfigError("classifier: conv_blocks must be >= 1");
    }
    for (std::size_t c : channels) {
        if (c == 0) {
            throw ConfigError("classifier: channel counts must be positive");
        }
    }
    if (head_hidden1 == 0 || head_hidden2 == 0) {
        throw ConfigError("classifier: head widths must be positive");
    }
    std::size_t h = input_bins;
    std::size_t w = input_frames;
    for (std::size_t b = 0; b < channels.size(); ++b) {
        if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
            throw ConfigError("classifier: input " + std::to_string(input_bins) + "x" +
                              std::to_string(input_frames) + " cannot be pooled by " +
                              std::to_string(channels.size()) + " blocks (block " + std::to_string(b) +
                              " sees " + std::to_string(h) + "x" + std::to_string(w) + ")");
        }
        h /= 2;
        w /= 2;
    }
}

std::size_t ClassifierConfig::flat_size() const {
    std::size_t h = input_bins;
    std::size_t w = input_frames;
    for (std::size_t b = 0; b < channels.size(); ++b) {
        h /= 2;
        w /= 2;
    }
    return channels.back() * h * w;
}

std::map<std::string, std::string> Prediction::assignment() const {
    std::map<std::string, std::string> out;
    for (const auto &g : groups) {
        out[g.group] = g.value;
    }
    return out;
}

CharacteristicClassifier::CharacteristicClassifier(ClassifierConfig cfg, CharacteristicTaxonomy taxonomy,
                                                   ParamSet params)
    : cfg_(std::move(cfg)), taxonomy_(std::move(taxonomy)), params_(std::move(params)) {}

std::size_t CharacteristicClassifier::encoder_param_count() const {
    std::size_t n = 0;
    for (const auto &[path, m] : params_.entries()) {
        if (path.rfind("enc.", 0) == 0) {
            n += m.size();
        }
    }
    return n;
}

std::size_t CharacteristicClassifier::head_param_count(const std::string &group) const {
    std::size_t n = 0;
    const std::string prefix = "head." + group + ".";
    for (const auto &[path, m] : params_.entries()) {
        if (path.rfind(prefix, 0) == 0) {
            n += m.size();
        }
    }
    return n;
}

CharacteristicClassifier init_classifier(const ClassifierConfig &cfg, const CharacteristicTaxonomy &taxonomy,
                                         std::uint64_t seed) {
    cfg.validate();
    ParamSet params;
    std::mt19937_64 rng(derive_seed(seed, {"classifier-encoder"}));
    std::size_t in_ch = 1;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
        const std::size_t out_ch = cfg.channels[b];
        for (int conv = 1; conv <= 2; ++conv) {
            const std::size_t fan_in = in_ch * 9;
            params.add(conv_path(b, conv, "weight"),
                       gaussian(rng, out_ch, fan_in, std::sqrt(2.0 / static_cast<double>(fan_in))), true);
            params.add(conv_path(b, conv, "bias"), Matrix(out_ch, 1), true);
            in_ch = out_ch;
        }
    }
    for (const auto &g : taxonomy.groups()) {
        if (g.values.empty()) {
            throw ConfigError("classifier: group '" + g.id + "' has no values");
        }
        add_head_params(params, cfg, g.id, g.values.size(), seed);
    }
    return CharacteristicClassifier(cfg, taxonomy, std::move(params));
}

Matrix standardize_slice(const FeatureMatrix &slice) {
    const auto &v = slice.values.data();
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (double x : v) {
        var += (x - mean) * (x - mean);
    }
    const double inv = 1.0 / std::sqrt(var / n + 1e-8);
    Matrix out(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out(0, i) = (v[i] - mean) * inv;
    }
    return out;
}

std::map<std::string, ad::Var> classifier_logits(ad::Tape &tape, const CharacteristicClassifier &c,
                                                 const ad::Bindings &bind, const FeatureMatrix &slice) {
    const ClassifierConfig &cfg = c.config();
    if (slice.bins() != cfg.input_bins || slice.frames() != cfg.input_frames) {
        throw ShapeError("classifier: expected a " + std::to_string(cfg.input_bins) + "x" +
                         std::to_string(cfg.input_frames) + " slice, got " + std::to_string(slice.bins()) + "x" +
                         std::to_string(slice.frames()));
    }
    ad::Var x = tape.constant(standardize_slice(slice));
    std::size_t h = cfg.input_bins;
    std::size_t w = cfg.input_frames;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
        for (int conv = 1; conv <= 2; ++conv) {
            ad::Var patches = ad::im2col3x3(x, h, w);
            x = ad::relu(ad::add_col(ad::matmul(bind.at(conv_path(b, conv, "weight")), patches),
                                     bind.at(conv_path(b, conv, "bias"))));
        }
        x = ad::maxpool2x2(x, h, w);
        h /= 2;
        w /= 2;
    }
    const ad::Var flat = ad::reshape(x, 1, cfg.flat_size());
    std::map<std::string, ad::Var> out;
    for (const auto &g : c.taxonomy().groups()) {
        ad::Var y = flat;
        for (int l = 1; l <= 3; ++l) {
            y = ad::add_row(ad::matmul_nt(y, bind.at(head_path(g.id, l, "weight"))), bind.at(head_path(g.id, l, "bias")));
            if (l < 3) {
                y = ad::relu(y);
            }
        }
        out.emplace(g.id, y);
    }
    return out;
}

ad::Var classifier_loss(ad::Tape &tape, const CharacteristicClassifier &c, const ad::Bindings &bind,
                        const LabeledSlice &example) {
    const auto logits = classifier_logits(tape, c, bind, example.slice);
    ad::Var total = tape.constant(Matrix(1, 1));
    for (const auto &g : c.taxonomy().groups()) {
        auto it = example.labels.find(g.id);
        if (it == example.labels.end()) {
            continue;
        }
        auto pos = std::find(g.values.begin(), g.values.end(), it->second);
        if (pos == g.values.end()) {
            throw LookupError("classifier: unknown value '" + it->second + "' for group '" + g.id + "'");
        }
        const std::size_t target = static_cast<std::size_t>(pos - g.values.begin());
        total = ad::add(total, ad::cross_entropy(logits.at(g.id), std::span<const std::size_t>(&target, 1)));
    }
    return total;
}

double classifier_mean_loss(const CharacteristicClassifier &c, std::span<const LabeledSlice> data) {
    if (data.empty()) {
        throw InputError("classifier: empty dataset");
    }
    double total = 0.0;
    for (const auto &ex : data) {
        ad::Tape tape;
        ad::Bindings bind;
        for (const auto &[path, m] : c.params().entries()) {
            bind.emplace(path, tape.constant(m));
        }
        total += tape.value(classifier_loss(tape, c, bind, ex))(0, 0);
    }
    return total / static_cast<double>(data.size());
}

std::vector<double> train_classifier(CharacteristicClassifier &c, std::span<const LabeledSlice> data,
                                     const ClassifierHyper &hyper) {
    if (data.empty()) {
        throw InputError("train_classifier: dataset is empty");
    }
    if (hyper.batch == 0) {
        throw ConfigError("train_classifier: batch must be positive");
    }
    std::vector<double> curve{classifier_mean_loss(c, data)};
    std::mt19937_64 rng(hyper.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t end = std::min(order.size(), start + hyper.batch);
            auto loss_fn = [&](ad::Tape &tape, const ad::Bindings &bind) {
                ad::Var total = classifier_loss(tape, c, bind, data[order[start]]);
                for (std::size_t i = start + 1; i < end; ++i) {
                    total = ad::add(total, classifier_loss(tape, c, bind, data[order[i]]));
                }
                return ad::scale(total, 1.0 / static_cast<double>(end - start));
            };
            const auto grads = ad::gradients(loss_fn, c.params());
            sgd_step(c.params_mut(), grads, hyper.lr);
        }
        curve.push_back(classifier_mean_loss(c, data));
    }
    return curve;
}

Prediction classify(const CharacteristicClassifier &c, const FeatureMatrix &slice) {
    ad::Tape tape;
    ad::Bindings bind;
    for (const auto &[path, m] : c.params().entries()) {
        bind.emplace(path, tape.constant(m));
    }
    const auto logits = classifier_logits(tape, c, bind, slice);
    Prediction out;
    for (const auto &g : c.taxonomy().groups()) {
        const Matrix probs = softmax_rows(tape.value(logits.at(g.id)));
        GroupPrediction gp{g.id, {}, std::vector<double>(probs.data().begin(), probs.data().end())};
        const auto best = std::max_element(gp.probabilities.begin(), gp.probabilities.end());
        gp.value = g.values[static_cast<std::size_t>(best - gp.probabilities.begin())];
        out.groups.push_back(std::move(gp));
    }
    return out;
}

void add_head(CharacteristicClassifier &c, const std::string &group, const std::vector<std::string> &values,
              std::uint64_t seed) {
    if (c.taxonomy().find(group) != nullptr) {
        throw ConflictError("classifier already has a head for group '" + group + "'");
    }
    if (values.empty()) {
        throw ConfigError("classifier: new head '" + group + "' needs at least one value");
    }
    std::vector<CharacteristicGroup> groups = c.taxonomy().groups();
    groups.push_back({group, values});
    CharacteristicTaxonomy grown(std::move(groups));
    ParamSet params = c.params();
    add_head_params(params, c.config(), group, values.size(), seed);
    c = CharacteristicClassifier(c.config(), std::move(grown), std::move(params));
}

void save_classifier(const CharacteristicClassifier &c, const std::filesystem::path &path) {
    const ClassifierConfig &cfg = c.config();
    io::ByteWriter w;
    w.magic(kClassifierMagic);
    w.u16(kClassifierVersion);
    w.u32(static_cast<std::uint32_t>(cfg.channels.size()));
    for (std::size_t ch : cfg.channels) {
        w.u32(static_cast<std::uint32_t>(ch));
    }
    w.u32(static_cast<std::uint32_t>(cfg.head_hidden1));
    w.u32(static_cast<std::uint32_t>(cfg.head_hidden2));
    w.u32(static_cast<std::uint32_t>(cfg.input_bins));
    w.u32(static_cast<std::uint32_t>(cfg.input_frames));
    w.u32(static_cast<std::uint32_t>(c.taxonomy().group_count()));
    for (const auto &g : c.taxonomy().groups()) {
        w.str16(g.id);
        w.u32(static_cast<std::uint32_t>(g.values.size()));
        for (const auto &v : g.values) {
            w.str16(v);
        }
    }
    io::write_param_records(w, c.params());
    io::write_file_atomic(path, w.buffer());
}

CharacteristicClassifier load_classifier(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("classifier checkpoint '" + path.string() + "' does not exist");
    }
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, path.string());
    r.expect_magic(kClassifierMagic);
    const std::uint16_t version = r.u16();
    if (version != kClassifierVersion) {
        throw FormatError(path.string() + ": unsupported classifier version " + std::to_string(version));
    }
    ClassifierConfig cfg;
    cfg.channels.resize(r.u32());
    for (auto &ch : cfg.channels) {
        ch = r.u32();
    }
    cfg.head_hidden1 = r.u32();
    cfg.head_hidden2 = r.u32();
    cfg.input_bins = r.u32();
    cfg.input_frames = r.u32();
    cfg.validate();
    std::vector<CharacteristicGroup> groups(r.u32());
    for (auto &g : groups) {
        g.id = r.str16();
        g.values.resize(r.u32());
        for (auto &v : g.values) {
            v = r.str16();
        }
    }
    CharacteristicTaxonomy taxonomy;
    try {
        taxonomy = CharacteristicTaxonomy(std::move(groups));
    } catch (const TaxonomyError &e) {
        throw CorruptFileError(path.string() + ": " + e.what());
    }
    ParamSet params = io::read_param_records(r);
    if (r.remaining() != 0) {
        throw CorruptFileError(path.string() + ": trailing bytes");
    }
    const CharacteristicClassifier reference = init_classifier(cfg, taxonomy, 0);
    for (const auto &[p, m] : reference.params().entries()) {
        if (!params.contains(p) || params.get(p).rows() != m.rows() || params.get(p).cols() != m.cols()) {
            throw CorruptFileError(path.string() + ": parameter '" + p + "' missing or misshapen");
        }
    }
    if (params.entries().size() != reference.params().entries().size()) {
        throw CorruptFileError(path.string() + ": unexpected parameters");
    }
    for (const auto &[p, _] : reference.params().entries()) {
        params.set_trainable(p, true);
    }
    return CharacteristicClassifier(cfg, std::move(taxonomy), std::move(params));
}

} // namespace piw

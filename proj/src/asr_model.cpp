// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/asr_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "piw/binary_io.hpp"
#include "piw/errors.hpp"

namespace piw {

namespace {

constexpr std::string_view kModelMagic = "PIWMODEL";
constexpr std::uint16_t kModelVersion = 1;

Matrix sinusoidal(std::size_t positions, std::size_t d_model) {
    Matrix pe(positions, d_model);
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                      static_cast<double>(d_model));
            pe(p, 2 * i) = std::sin(static_cast<double>(p) * freq);
            pe(p, 2 * i + 1) = std::cos(static_cast<double>(p) * freq);
        }
    }
    return pe;
}

void write_config(io::ByteWriter &w, const ModelConfig &c) {
    for (std::size_t v : {c.d_model, c.n_heads, c.enc_layers, c.dec_layers, c.d_ff, c.vocab,
                          c.feature_bins, c.max_src_frames, c.max_tgt_tokens}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u32(static_cast<std::uint32_t>(c.seed & 0xffffffffu));
    w.u32(static_cast<std::uint32_t>(c.seed >> 32));
}

ModelConfig read_config(io::ByteReader &r) {
    ModelConfig c;
    c.d_model = r.u32();
    c.n_heads = r.u32();
    c.enc_layers = r.u32();
    c.dec_layers = r.u32();
    c.d_ff = r.u32();
    c.vocab = r.u32();
    c.feature_bins = r.u32();
    c.max_src_frames = r.u32();
    c.max_tgt_tokens = r.u32();
    const std::uint64_t lo = r.u32();
    const std::uint64_t hi = r.u32();
    c.seed = lo | (hi << 32);
    return c;
}

struct GraphBuilder {
    ad::Tape &tape;
    const ToyAsrModel &model;
    const ad::Bindings &base;
    const AdapterBindings &adapters;

    ad::Var p(const std::string &path) const {
        auto it = base.find(path);
        if (it == base.end()) {
            throw LookupError("model graph: parameter '" + path + "' is not bound");
        }
        return it->second;
    }

    ad::Var ln(ad::Var x, const std::string &prefix) const {
        return ad::layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"));
    }

    ad::Var project(ad::Var x, const std::string &layer_id) const {
        ad::Var y = ad::matmul_nt(x, p(layer_id + ".weight"));
        auto it = adapters.find(layer_id);
        if (it != adapters.end()) {
            y = ad::add(y, ad::matmul_nt(ad::matmul_nt(x, it->second.a), it->second.b));
        }
        return y;
    }

    ad::Var attention(ad::Var xq, ad::Var xkv, const std::string &prefix, bool causal) const {
        const auto &cfg = model.config();
        const std::size_t dh = cfg.d_model / cfg.n_heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        ad::Var q = project(xq, prefix + ".q");
        ad::Var k = project(xkv, prefix + ".k");
        ad::Var v = ad::matmul_nt(xkv, p(prefix + ".v.weight"));
        std::vector<ad::Var> heads;
        heads.reserve(cfg.n_heads);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            ad::Var qh = ad::slice_cols(q, h * dh, dh);
            ad::Var kh = ad::slice_cols(k, h * dh, dh);
            ad::Var vh = ad::slice_cols(v, h * dh, dh);
            ad::Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
            heads.push_back(ad::matmul(ad::softmax_rows(scores, causal), vh));
        }
        ad::Var cat = cfg.n_heads == 1 ? heads.front() : ad::concat_cols(heads);
        return ad::matmul_nt(cat, p(prefix + ".o.weight"));
    }

    ad::Var ffn(ad::Var x, const std::string &prefix) const {
        ad::Var h = ad::relu(ad::add_row(ad::matmul_nt(x, p(prefix + ".up.weight")), p(prefix + ".up.bias")));
        return ad::add_row(ad::matmul_nt(h, p(prefix + ".down.weight")), p(prefix + ".down.bias"));
    }

    ad::Var encode(const FeatureMatrix &features) const {
        const auto &cfg = model.config();
        ad::Var x = tape.constant(transpose(features.values));
        ad::Var h = ad::add_row(ad::matmul_nt(x, p("enc.in.weight")), p("enc.in.bias"));
        h = ad::add(h, tape.constant(sinusoidal(features.frames(), cfg.d_model)));
        for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
            const std::string pre = "enc." + std::to_string(i);
            ad::Var n = ln(h, pre + ".ln1");
            h = ad::add(h, attention(n, n, pre + ".attn", false));
            h = ad::add(h, ffn(ln(h, pre + ".ln2"), pre + ".ffn"));
        }
        return ln(h, "enc.ln_f");
    }

    ad::Var decode(ad::Var memory, std::span<const std::size_t> inputs) const {
        const auto &cfg = model.config();
        std::vector<std::size_t> positions(inputs.size());
        std::iota(positions.begin(), positions.end(), 0);
        ad::Var y = ad::add(ad::gather_rows(p("dec.embed"), inputs),
                            ad::gather_rows(p("dec.pos"), positions));
        for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
            const std::string pre = "dec." + std::to_string(i);
            ad::Var n = ln(y, pre + ".ln1");
            y = ad::add(y, attention(n, n, pre + ".attn", true));
            y = ad::add(y, attention(ln(y, pre + ".ln2"), memory, pre + ".cross", false));
            y = ad::add(y, ffn(ln(y, pre + ".ln3"), pre + ".ffn"));
        }
        return ad::add_row(ad::matmul_nt(ln(y, "dec.ln_f"), p("dec.out.weight")), p("dec.out.bias"));
    }
};

void check_features(const ModelConfig &cfg, const FeatureMatrix &features) {
    if (features.bins() != cfg.feature_bins) {
        throw ShapeError("features have " + std::to_string(features.bins()) +
                         " bins, model expects " + std::to_string(cfg.feature_bins));
    }
    if (features.frames() == 0 || features.frames() > cfg.max_src_frames) {
        throw ShapeError("features have " + std::to_string(features.frames()) +
                         " frames, model accepts 1.." + std::to_string(cfg.max_src_frames));
    }
}

ad::Bindings bind_constants(ad::Tape &tape, const ParamSet &params) {
    ad::Bindings b;
    for (const auto &[path, m] : params.entries()) {
        b.emplace(path, tape.constant(m));
    }
    return b;
}

} // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string &field, const std::string &why) {
        throw ConfigError("model config: " + field + " " + why);
    };
    if (d_model == 0) fail("d_model", "must be positive");
    if (n_heads == 0) fail("n_heads", "must be positive");
    if (d_model % n_heads != 0) {
        fail("d_model", "(" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                            std::to_string(n_heads) + ")");
    }
    if (d_model % 2 != 0) fail("d_model", "must be even for sinusoidal positions");
    if (vocab < 4) fail("vocab", "must be >= 4");
    if (enc_layers == 0) fail("enc_layers", "must be positive");
    if (dec_layers == 0) fail("dec_layers", "must be positive");
    if (d_ff == 0) fail("d_ff", "must be positive");
    if (feature_bins == 0) fail("feature_bins", "must be positive");
    if (max_src_frames == 0) fail("max_src_frames", "must be positive");
    if (max_tgt_tokens == 0) fail("max_tgt_tokens", "must be positive");
}

std::string ModelConfig::hash() const {
    io::ByteWriter w;
    write_config(w, *this);
    return io::crc32_hex(w.buffer());
}

std::vector<InjectionPoint> injection_points_for(const ModelConfig &cfg) {
    std::vector<InjectionPoint> pts;
    const std::size_t d = cfg.d_model;
    for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
        for (const char *w : {"q", "k"}) {
            pts.push_back({"enc." + std::to_string(i) + ".attn." + w, d, d});
        }
    }
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
        for (const char *kind : {"attn", "cross"}) {
            for (const char *w : {"q", "k"}) {
                pts.push_back({"dec." + std::to_string(i) + "." + kind + "." + w, d, d});
            }
        }
    }
    return pts;
}

ToyAsrModel::ToyAsrModel(ModelConfig cfg, ParamSet params)
    : cfg_(std::move(cfg)), params_(std::move(params)), points_(injection_points_for(cfg_)) {
    for (const auto &pt : points_) {
        const Matrix &w = params_.get(pt.layer_id + ".weight");
        if (w.rows() != pt.out_dim || w.cols() != pt.in_dim) {
            throw ConfigError("injection point '" + pt.layer_id + "' has weight " + w.shape_string());
        }
    }
}

Matrix ToyAsrModel::project(const std::string &layer_id, const Matrix &x,
                            const MergedAdapter *adapter) const {
    Matrix y = matmul_nt(x, params_.get(layer_id + ".weight"));
    if (adapter != nullptr) {
        auto it = adapter->layers.find(layer_id);
        if (it != adapter->layers.end()) {
            y += matmul_nt(matmul_nt(x, it->second.a_hat), it->second.b_hat);
        }
    }
    return y;
}

ToyAsrModel init_model(const ModelConfig &cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    ParamSet ps;
    auto gaussian = [&](const std::string &path, std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double &v : m.data()) {
            v = normal(rng);
        }
        ps.add(path, std::move(m), true);
    };
    auto norm = [&](const std::string &prefix, std::size_t d) {
        ps.add(prefix + ".gain", Matrix(1, d, 1.0), true);
        ps.add(prefix + ".bias", Matrix(1, d, 0.0), true);
    };
    auto attn = [&](const std::string &prefix, std::size_t d) {
        for (const char *w : {"q", "k", "v", "o"}) {
            gaussian(prefix + "." + w + ".weight", d, d);
        }
    };
    auto ffn = [&](const std::string &prefix) {
        gaussian(prefix + ".up.weight", cfg.d_ff, cfg.d_model);
        ps.add(prefix + ".up.bias", Matrix(1, cfg.d_ff), true);
        gaussian(prefix + ".down.weight", cfg.d_model, cfg.d_ff);
        ps.add(prefix + ".down.bias", Matrix(1, cfg.d_model), true);
    };

    const std::size_t d = cfg.d_model;
    gaussian("enc.in.weight", d, cfg.feature_bins);
    ps.add("enc.in.bias", Matrix(1, d), true);
    for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
        const std::string pre = "enc." + std::to_string(i);
        norm(pre + ".ln1", d);
        attn(pre + ".attn", d);
        norm(pre + ".ln2", d);
        ffn(pre + ".ffn");
    }
    norm("enc.ln_f", d);

    gaussian("dec.embed", cfg.vocab, d);
    ps.add("dec.pos", sinusoidal(cfg.max_tgt_tokens + 1, d), true);
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
        const std::string pre = "dec." + std::to_string(i);
        norm(pre + ".ln1", d);
        attn(pre + ".attn", d);
        norm(pre + ".ln2", d);
        attn(pre + ".cross", d);
        norm(pre + ".ln3", d);
        ffn(pre + ".ffn");
    }
    norm("dec.ln_f", d);
    gaussian("dec.out.weight", cfg.vocab, d);
    ps.add("dec.out.bias", Matrix(1, cfg.vocab), true);
    return ToyAsrModel(cfg, std::move(ps));
}

AdapterBindings bind_adapter(ad::Tape &tape, const MergedAdapter &adapter) {
    AdapterBindings out;
    for (const auto &[id, layer] : adapter.layers) {
        out.emplace(id, LayerAdapter{tape.constant(layer.a_hat), tape.constant(layer.b_hat)});
    }
    return out;
}

ad::Var teacher_forced_loss(ad::Tape &tape, const ToyAsrModel &model, const ad::Bindings &base,
                            const AdapterBindings &adapters, const FeatureMatrix &features,
                            std::span<const std::size_t> target, ad::Var *logits_out) {
    const auto &cfg = model.config();
    check_features(cfg, features);
    if (target.size() > cfg.max_tgt_tokens) {
        throw ShapeError("target of " + std::to_string(target.size()) + " tokens exceeds max_tgt_tokens " +
                         std::to_string(cfg.max_tgt_tokens));
    }
    std::vector<std::size_t> inputs{kBosToken};
    std::vector<std::size_t> labels;
    for (std::size_t t : target) {
        if (t >= cfg.vocab) {
            throw IndexError("target token " + std::to_string(t) + " >= vocab " + std::to_string(cfg.vocab));
        }
        inputs.push_back(t);
        labels.push_back(t);
    }
    labels.push_back(kEosToken);

    GraphBuilder g{tape, model, base, adapters};
    ad::Var memory = g.encode(features);
    ad::Var logits = g.decode(memory, inputs);
    if (logits_out != nullptr) {
        *logits_out = logits;
    }
    return ad::cross_entropy(logits, labels);
}

ForwardResult forward_loss(const ToyAsrModel &model, const MergedAdapter *adapter,
                           const FeatureMatrix &features, std::span<const std::size_t> target) {
    ad::Tape tape;
    const ad::Bindings base = bind_constants(tape, model.params());
    const AdapterBindings adapters = adapter ? bind_adapter(tape, *adapter) : AdapterBindings{};
    ad::Var logits;
    ad::Var loss = teacher_forced_loss(tape, model, base, adapters, features, target, &logits);
    return ForwardResult{tape.value(loss)[0], tape.value(logits)};
}

DecodeResult greedy_decode(const ToyAsrModel &model, const MergedAdapter *adapter,
                           const FeatureMatrix &features) {
    const auto &cfg = model.config();
    check_features(cfg, features);
    ad::Tape tape;
    const ad::Bindings base = bind_constants(tape, model.params());
    const AdapterBindings adapters = adapter ? bind_adapter(tape, *adapter) : AdapterBindings{};
    GraphBuilder g{tape, model, base, adapters};
    ad::Var memory = g.encode(features);

    DecodeResult result;
    std::vector<std::size_t> inputs{kBosToken};
    // Bound on decoder inputs, not emitted words: a PAD/BOS prediction still
    // occupies a position.
    while (inputs.size() <= cfg.max_tgt_tokens) {
        const Matrix &logits = tape.value(g.decode(memory, inputs));
        const auto last = logits.row(logits.rows() - 1);
        const std::size_t next =
            static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
        if (next == kEosToken) {
            result.terminated = true;
            break;
        }
        if (next != kPadToken && next != kBosToken) {
            result.tokens.push_back(next);
        }
        inputs.push_back(next);
    }
    return result;
}

double mean_loss(const ToyAsrModel &model, std::span<const Utterance> data,
                 const MergedAdapter *adapter) {
    if (data.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto &u : data) {
        total += forward_loss(model, adapter, u.features, u.tokens).loss;
    }
    return total / static_cast<double>(data.size());
}

ToyAsrModel pretrain_base(ToyAsrModel model, std::span<const Utterance> generic,
                          const PretrainHyper &hyper) {
    if (generic.empty()) {
        throw InputError("pretrain_base: generic dataset is empty");
    }
    if (hyper.batch == 0) {
        throw ConfigError("pretrain_base: batch must be positive");
    }
    ParamSet &params = model.params_mut();
    for (const auto &[path, _] : params.entries()) {
        params.set_trainable(path, true);
    }
    std::mt19937_64 rng(hyper.seed);
    std::vector<std::size_t> order(generic.size());
    std::iota(order.begin(), order.end(), 0);
    const AdapterBindings no_adapters;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t end = std::min(order.size(), start + hyper.batch);
            auto loss_fn = [&](ad::Tape &tape, const ad::Bindings &bind) {
                std::vector<ad::Var> losses;
                for (std::size_t i = start; i < end; ++i) {
                    const Utterance &u = generic[order[i]];
                    losses.push_back(
                        teacher_forced_loss(tape, model, bind, no_adapters, u.features, u.tokens));
                }
                ad::Var total = losses.front();
                for (std::size_t i = 1; i < losses.size(); ++i) {
                    total = ad::add(total, losses[i]);
                }
                return ad::scale(total, 1.0 / static_cast<double>(losses.size()));
            };
            auto vg = ad::value_and_gradients(loss_fn, params);
            clip_global_norm(vg.grads, hyper.clip_norm);
            sgd_step(params, vg.grads, hyper.lr);
        }
    }
    params.freeze_all();
    return model;
}

void save_model(const ToyAsrModel &model, const std::filesystem::path &path) {
    io::ByteWriter w;
    w.magic(kModelMagic);
    w.u16(kModelVersion);
    write_config(w, model.config());
    io::write_param_records(w, model.params());
    io::write_file_atomic(path, w.buffer());
}

ToyAsrModel load_model(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("model checkpoint '" + path.string() + "' does not exist");
    }
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, path.string());
    r.expect_magic(kModelMagic);
    const std::uint16_t version = r.u16();
    if (version != kModelVersion) {
        throw FormatError(path.string() + ": unsupported model version " + std::to_string(version));
    }
    ModelConfig cfg = read_config(r);
    cfg.validate();
    ParamSet params = io::read_param_records(r);
    if (r.remaining() != 0) {
        throw CorruptFileError(path.string() + ": trailing bytes");
    }
    const ToyAsrModel reference = init_model(cfg);
    for (const auto &[p, m] : reference.params().entries()) {
        if (!params.contains(p)) {
            throw CorruptFileError(path.string() + ": missing parameter '" + p + "'");
        }
        const Matrix &got = params.get(p);
        if (got.rows() != m.rows() || got.cols() != m.cols()) {
            throw CorruptFileError(path.string() + ": parameter '" + p + "' has shape " +
                                   got.shape_string() + ", expected " + m.shape_string());
        }
    }
    return ToyAsrModel(cfg, std::move(params));
}

} // namespace piw

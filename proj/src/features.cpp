// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "piw/binary_io.hpp"
#include "piw/errors.hpp"

namespace piw {

namespace {

constexpr std::string_view kFeatureMagic = "PIWFEAT1";

// FFTW planning mutates global state; execution on a private plan does not.
std::mutex &fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

std::uint32_t rd32(const std::vector<std::uint8_t> &b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::uint16_t rd16(const std::vector<std::uint8_t> &b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

} // namespace

Waveform read_wav(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        throw IoError("wav: no such file '" + path.string() + "'");
    }
    const auto bytes = io::read_file(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw UnsupportedFormatError("wav: '" + path.string() + "' is not a RIFF/WAVE file");
    }

    bool have_fmt = false;
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t bits = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::string id(reinterpret_cast<const char *>(bytes.data() + pos), 4);
        const std::uint32_t size = rd32(bytes, pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) {
            throw CorruptFileError("wav: chunk '" + id + "' overruns file");
        }
        if (id == "fmt ") {
            if (size < 16) {
                throw CorruptFileError("wav: fmt chunk too short");
            }
            format = rd16(bytes, body);
            channels = rd16(bytes, body + 2);
            rate = rd32(bytes, body + 4);
            bits = rd16(bytes, body + 14);
            have_fmt = true;
            if (format != 1) {
                throw UnsupportedFormatError("wav: unsupported audio format code " +
                                             std::to_string(format) + " (only PCM = 1)");
            }
            if (channels != 1) {
                throw UnsupportedFormatError("wav: unsupported channels = " + std::to_string(channels) +
                                             " (mono only)");
            }
            if (bits != 16) {
                throw UnsupportedFormatError("wav: unsupported bits_per_sample = " +
                                             std::to_string(bits) + " (16-bit only)");
            }
            if (rate == 0) {
                throw UnsupportedFormatError("wav: sample_rate is 0");
            }
        } else if (id == "data") {
            if (!have_fmt) {
                throw CorruptFileError("wav: data chunk before fmt chunk");
            }
            Waveform w;
            w.sample_rate = rate;
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto s = static_cast<std::int16_t>(rd16(bytes, body + 2 * i));
                w.samples[i] = static_cast<float>(s) / 32768.0f;
            }
            if (w.samples.empty()) {
                throw InputError("wav: '" + path.string() + "' has no samples");
            }
            return w;
        }
        pos = body + size + (size & 1u);
    }
    throw CorruptFileError("wav: '" + path.string() + "' missing fmt or data chunk");
}

void write_wav(const std::filesystem::path &path, const Waveform &wave) {
    io::ByteWriter w;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    w.magic("RIFF");
    w.u32(36 + data_bytes);
    w.magic("WAVE");
    w.magic("fmt ");
    w.u32(16);
    w.u16(1);
    w.u16(1);
    w.u32(wave.sample_rate);
    w.u32(wave.sample_rate * 2);
    w.u16(2);
    w.u16(16);
    w.magic("data");
    w.u32(data_bytes);
    for (float s : wave.samples) {
        const double scaled = std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0;
        const auto q = static_cast<std::int16_t>(std::clamp(std::lround(scaled), -32768L, 32767L));
        w.u16(static_cast<std::uint16_t>(q));
    }
    io::write_file_atomic(path, w.buffer());
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank(const MelConfig &cfg, std::uint32_t sample_rate) {
    const double fmax = cfg.fmax > 0.0 ? cfg.fmax : sample_rate / 2.0;
    if (cfg.bins == 0 || cfg.n_fft < 2 || fmax <= cfg.fmin) {
        throw ConfigError("mel: invalid filterbank config");
    }
    const std::size_t n_freq = cfg.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(cfg.bins + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                          static_cast<double>(cfg.bins + 1));
    }
    Matrix fb(cfg.bins, n_freq);
    for (std::size_t b = 0; b < cfg.bins; ++b) {
        const double lo = edges[b];
        const double center = edges[b + 1];
        const double hi = edges[b + 2];
        for (std::size_t k = 0; k < n_freq; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(cfg.n_fft);
            double wgt = 0.0;
            if (f > lo && f <= center) {
                wgt = (f - lo) / (center - lo);
            } else if (f > center && f < hi) {
                wgt = (hi - f) / (hi - center);
            }
            fb(b, k) = wgt;
        }
    }
    return fb;
}

FeatureMatrix log_mel_spectrogram(const Waveform &wave, const MelConfig &cfg) {
    if (wave.sample_rate == 0) {
        throw InputError("mel: sample_rate must be positive");
    }
    if (cfg.hop == 0) {
        throw ConfigError("mel: hop must be positive");
    }
    if (wave.samples.size() < cfg.n_fft) {
        throw InputError("mel: waveform of " + std::to_string(wave.samples.size()) +
                         " samples is shorter than n_fft " + std::to_string(cfg.n_fft));
    }
    const Matrix fb = mel_filterbank(cfg, wave.sample_rate);
    const std::size_t n_freq = cfg.n_fft / 2 + 1;
    const std::size_t frames = 1 + (wave.samples.size() - cfg.n_fft) / cfg.hop;

    std::vector<double> window(cfg.n_fft);
    for (std::size_t n = 0; n < cfg.n_fft; ++n) {
        window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                         static_cast<double>(cfg.n_fft));
    }

    double *in = fftw_alloc_real(cfg.n_fft);
    fftw_complex *out = fftw_alloc_complex(n_freq);
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_plan_mutex());
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg.n_fft), in, out, FFTW_ESTIMATE);
    }

    FeatureMatrix result{Matrix(cfg.bins, frames)};
    std::vector<double> power(n_freq);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t start = t * cfg.hop;
        for (std::size_t n = 0; n < cfg.n_fft; ++n) {
            in[n] = static_cast<double>(wave.samples[start + n]) * window[n];
        }
        fftw_execute(plan);
        for (std::size_t k = 0; k < n_freq; ++k) {
            power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
        }
        for (std::size_t b = 0; b < cfg.bins; ++b) {
            double e = 0.0;
            for (std::size_t k = 0; k < n_freq; ++k) {
                e += fb(b, k) * power[k];
            }
            result.values(b, t) = std::log10(std::max(e, 1e-10));
        }
    }

    {
        std::lock_guard lock(fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return result;
}

FeatureMatrix slice_for_classifier(const FeatureMatrix &features, std::size_t n_frames) {
    if (n_frames == 0) {
        throw InputError("slice_for_classifier: n_frames must be positive");
    }
    FeatureMatrix out{Matrix(features.bins(), n_frames, kLogFloor)};
    const std::size_t keep = std::min(n_frames, features.frames());
    for (std::size_t b = 0; b < features.bins(); ++b) {
        for (std::size_t t = 0; t < keep; ++t) {
            out.values(b, t) = features.values(b, t);
        }
    }
    return out;
}

void save_features(const std::filesystem::path &path, const FeatureMatrix &features) {
    io::ByteWriter w;
    w.magic(kFeatureMagic);
    w.u32(static_cast<std::uint32_t>(features.bins()));
    w.u32(static_cast<std::uint32_t>(features.frames()));
    w.f32_matrix(features.values);
    io::write_file_atomic(path, w.buffer());
}

FeatureMatrix load_features(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) {
        throw MissingFileError("feature file '" + path.string() + "' does not exist");
    }
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, path.string());
    r.expect_magic(kFeatureMagic);
    const std::uint32_t bins = r.u32();
    const std::uint32_t frames = r.u32();
    if (r.remaining() != static_cast<std::size_t>(bins) * frames * 4) {
        throw CorruptFileError(path.string() + ": payload size does not match " +
                               std::to_string(bins) + "x" + std::to_string(frames));
    }
    return FeatureMatrix{r.f32_matrix(bins, frames)};
}

} // namespace piw

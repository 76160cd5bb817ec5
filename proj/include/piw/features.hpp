// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "piw/matrix.hpp"

namespace piw {

/// log10 of the power floor (1e-10). Every feature value is >= this.
inline constexpr double kLogFloor = -10.0;

struct Waveform {
    std::vector<float> samples;
    std::uint32_t sample_rate = 16000;
};

/// bins × frames log-scale features. Rows are frequency bins, columns frames.
struct FeatureMatrix {
    Matrix values;

    std::size_t bins() const { return values.rows(); }
    std::size_t frames() const { return values.cols(); }

    friend bool operator==(const FeatureMatrix &, const FeatureMatrix &) = default;
};

struct MelConfig {
    std::size_t n_fft = 400;
    std::size_t hop = 160;
    std::size_t bins = 80;
    double fmin = 0.0;
    /// <= 0 means sample_rate / 2
    double fmax = 0.0;
};

/// 16-bit little-endian PCM mono only.
Waveform read_wav(const std::filesystem::path &path);
/// Writes 16-bit PCM mono; samples are clipped to [-1, 1).
void write_wav(const std::filesystem::path &path, const Waveform &wave);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters, bins × (n_fft/2 + 1), peak weight 1 at each center.
Matrix mel_filterbank(const MelConfig &cfg, std::uint32_t sample_rate);

/// Hann-windowed power STFT → mel filterbank → log10 with floor 1e-10.
FeatureMatrix log_mel_spectrogram(const Waveform &wave, const MelConfig &cfg = {});

/// Leading `n_frames` columns, right-padded with kLogFloor when short.
FeatureMatrix slice_for_classifier(const FeatureMatrix &features, std::size_t n_frames);

/// "PIWFEAT1" | bins u32 | frames u32 | bins*frames fp32, row-major.
void save_features(const std::filesystem::path &path, const FeatureMatrix &features);
FeatureMatrix load_features(const std::filesystem::path &path);

} // namespace piw

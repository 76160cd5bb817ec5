// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "piw/matrix.hpp"

namespace piw::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::string crc32_hex(std::span<const std::uint8_t> bytes);
std::string crc32_hex(std::string_view text);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
/// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path &path, std::string_view text);

/// Little-endian append-only encoder.
class ByteWriter {
public:
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void magic(std::string_view m);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    /// u16 length prefix + bytes
    void str16(std::string_view s);
    /// rows*cols fp32 values, no shape header
    void f32_matrix(const Matrix &m);

    const std::vector<std::uint8_t> &buffer() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

/// Little-endian decoder; every read past the end throws CorruptFileError.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::string source)
        : data_(data), source_(std::move(source)) {}

    /// Throws FormatError if the next bytes are not `m`.
    void expect_magic(std::string_view m);
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::string str16();
    Matrix f32_matrix(std::size_t rows, std::size_t cols);

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    const std::string &source() const { return source_; }

private:
    void need(std::size_t n, const char *what);

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string source_;
};

/// u32 count, then per entry: path (u16 length + bytes), rows u32, cols u32,
/// fp32 data. Trainable flags are not persisted.
void write_param_records(ByteWriter &w, const ParamSet &params);
ParamSet read_param_records(ByteReader &r);

} // namespace piw::io

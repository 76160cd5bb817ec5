// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#include "piw/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "piw/errors.hpp"

namespace piw::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    c = ::crc32(c, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(c);
}

std::string crc32_hex(std::span<const std::uint8_t> bytes) {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", crc32(bytes));
    return buf;
}

std::string crc32_hex(std::string_view text) {
    return crc32_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>(text.data()),
                                                   text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write '" + tmp.string() + "'");
        }
        out.write(reinterpret_cast<const char *>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("short write to '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path &path, std::string_view text) {
    write_file_atomic(path, std::span<const std::uint8_t>(
                                reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

void ByteWriter::magic(std::string_view m) {
    buf_.insert(buf_.end(), m.begin(), m.end());
}

void ByteWriter::u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::str16(std::string_view s) {
    if (s.size() > 0xffff) {
        throw FormatError("string too long for u16 length prefix");
    }
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::f32_matrix(const Matrix &m) {
    for (double v : m.data()) {
        f32(static_cast<float>(v));
    }
}

void ByteReader::need(std::size_t n, const char *what) {
    if (data_.size() - pos_ < n) {
        throw CorruptFileError(source_ + ": truncated while reading " + what + " at offset " +
                               std::to_string(pos_));
    }
}

void ByteReader::expect_magic(std::string_view m) {
    if (data_.size() - pos_ < m.size() ||
        std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
        throw FormatError(source_ + ": bad magic, expected '" + std::string(m) + "'");
    }
    pos_ += m.size();
}

std::uint16_t ByteReader::u16() {
    need(2, "u16");
    const std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::str16() {
    const std::uint16_t n = u16();
    need(n, "string");
    std::string s(reinterpret_cast<const char *>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

Matrix ByteReader::f32_matrix(std::size_t rows, std::size_t cols) {
    if (rows != 0 && cols > (data_.size() - pos_) / 4 / rows) {
        throw CorruptFileError(source_ + ": matrix [" + std::to_string(rows) + "x" +
                               std::to_string(cols) + "] exceeds remaining " +
                               std::to_string(remaining()) + " bytes");
    }
    Matrix m(rows, cols);
    for (double &v : m.data()) {
        v = static_cast<double>(f32());
    }
    return m;
}

void write_param_records(ByteWriter &w, const ParamSet &params) {
    w.u32(static_cast<std::uint32_t>(params.entries().size()));
    for (const auto &[path, m] : params.entries()) {
        w.str16(path);
        w.u32(static_cast<std::uint32_t>(m.rows()));
        w.u32(static_cast<std::uint32_t>(m.cols()));
        w.f32_matrix(m);
    }
}

ParamSet read_param_records(ByteReader &r) {
    ParamSet params;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string path = r.str16();
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Matrix m = r.f32_matrix(rows, cols);
        if (params.contains(path)) {
            throw CorruptFileError(r.source() + ": duplicate parameter '" + path + "'");
        }
        params.add(path, std::move(m), false);
    }
    return params;
}

} // namespace piw::io

// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace piw {

/// Base of every domain error raised by the library. The CLI prints `what()`
/// verbatim and maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PIW_DEFINE_ERROR(Name)                                                \
    class Name : public Error {                                               \
    public:                                                                   \
        using Error::Error;                                                   \
    }

PIW_DEFINE_ERROR(ShapeError);
PIW_DEFINE_ERROR(IndexError);
PIW_DEFINE_ERROR(NumericError);
PIW_DEFINE_ERROR(IoError);
PIW_DEFINE_ERROR(UnsupportedFormatError);
PIW_DEFINE_ERROR(FormatError);
PIW_DEFINE_ERROR(CorruptFileError);
PIW_DEFINE_ERROR(MissingFileError);
PIW_DEFINE_ERROR(ConfigError);
PIW_DEFINE_ERROR(InputError);
PIW_DEFINE_ERROR(MergeError);
PIW_DEFINE_ERROR(LookupError);
PIW_DEFINE_ERROR(ConflictError);
PIW_DEFINE_ERROR(TaxonomyError);
PIW_DEFINE_ERROR(UndefinedWerError);

#undef PIW_DEFINE_ERROR

} // namespace piw

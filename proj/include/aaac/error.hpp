// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module. Each failure class named in the
// module contracts maps to one type so callers (and tests) can tell them apart.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace aaac {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad parameters: empty inputs, non-finite data, invalid spec or flags.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Matrix width is not a multiple of a group size, or shapes disagree.
class LayoutError : public Error {
public:
    using Error::Error;
};

/// Configuration the packed format cannot represent (e.g. S > g).
class UnsupportedConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed safetensors container. Carries the byte offset of the problem.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class UnsupportedDtypeError : public Error {
public:
    using Error::Error;
};

/// Weight/activation (or pack/archive) pairing failed for a named layer.
class PairingError : public Error {
public:
    PairingError(const std::string& layer, const std::string& what)
        : Error("layer '" + layer + "': " + what), layer_(layer) {}

    const std::string& layer() const noexcept { return layer_; }

private:
    std::string layer_;
};

/// Packed bytes or codes are inconsistent: truncation, CRC mismatch, code >= M.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Gap recovery requested with identical RTN and full-precision metrics.
class UndefinedGapError : public Error {
public:
    using Error::Error;
};

}  // namespace aaac

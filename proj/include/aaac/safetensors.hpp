// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal safetensors reader/writer: 8-byte little-endian header length, a
// JSON header mapping tensor names to {dtype, shape, data_offsets}, then the
// raw payload. Only F32, F16 and BF16 are accepted; values are widened to f32.

#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aaac/error.hpp"
#include "aaac/grids.hpp"

namespace aaac::safetensors {

enum class Dtype { f32, f16, bf16 };

inline std::string_view dtype_name(Dtype d) noexcept {
    switch (d) {
        case Dtype::f32: return "F32";
        case Dtype::f16: return "F16";
        case Dtype::bf16: return "BF16";
    }
    return "?";
}

inline std::size_t dtype_size(Dtype d) noexcept { return d == Dtype::f32 ? 4 : 2; }

inline Dtype parse_dtype(std::string_view s) {
    if (s == "F32") return Dtype::f32;
    if (s == "F16") return Dtype::f16;
    if (s == "BF16") return Dtype::bf16;
    throw UnsupportedDtypeError("unsupported tensor dtype '" + std::string(s) +
                                "' (supported: F32, F16, BF16)");
}

struct Tensor {
    std::string name;
    Dtype dtype = Dtype::f32;  // storage dtype in the file
    std::vector<std::size_t> shape;
    std::vector<float> values;  // widened to f32

    std::size_t numel() const noexcept {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

namespace detail {

inline std::uint64_t read_u64le(const std::uint8_t* p) noexcept {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline float decode_value(const std::uint8_t* p, Dtype d) noexcept {
    switch (d) {
        case Dtype::f32: {
            std::uint32_t bits = 0;
            for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
            return std::bit_cast<float>(bits);
        }
        case Dtype::f16: return from_f16_bits(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
        case Dtype::bf16: return from_bf16_bits(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
    }
    return 0.0f;
}

inline void encode_value(float v, Dtype d, std::vector<std::uint8_t>& out) {
    if (d == Dtype::f32) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
        return;
    }
    const std::uint16_t bits = d == Dtype::f16 ? to_f16_bits(v) : to_bf16_bits(v);
    out.push_back(static_cast<std::uint8_t>(bits & 0xff));
    out.push_back(static_cast<std::uint8_t>(bits >> 8));
}

}  // namespace detail

/// Parses a complete safetensors image. Tensors come back in name order.
inline std::vector<Tensor> parse(std::span<const std::uint8_t> bytes) {
    using nlohmann::json;
    if (bytes.size() < 8) throw FormatError("file shorter than the 8-byte header length", 0);
    const std::uint64_t header_len = detail::read_u64le(bytes.data());
    if (header_len > bytes.size() - 8) {
        throw FormatError("header length " + std::to_string(header_len) + " exceeds file size", 0);
    }
    const std::uint64_t data_start = 8 + header_len;
    const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("malformed JSON header: ") + e.what(), 8 + (e.byte > 0 ? e.byte - 1 : 0));
    }
    if (!header.is_object()) throw FormatError("JSON header is not an object", 8);

    const std::uint64_t payload_size = bytes.size() - data_start;
    std::vector<Tensor> tensors;
    for (const auto& [name, info] : header.items()) {
        if (name == "__metadata__") continue;
        if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") ||
            !info.contains("data_offsets")) {
            throw FormatError("tensor '" + name + "' lacks dtype/shape/data_offsets", 8);
        }
        const auto& dt = info["dtype"];
        const auto& shape = info["shape"];
        const auto& offs = info["data_offsets"];
        if (!dt.is_string() || !shape.is_array() || !offs.is_array() || offs.size() != 2 ||
            !offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
            throw FormatError("tensor '" + name + "' has malformed header fields", 8);
        }
        Tensor t;
        t.name = name;
        t.dtype = parse_dtype(dt.get<std::string>());
        for (const auto& d : shape) {
            if (!d.is_number_unsigned()) throw FormatError("tensor '" + name + "' has a non-integer dimension", 8);
            t.shape.push_back(d.get<std::size_t>());
        }
        const auto begin = offs[0].get<std::uint64_t>();
        const auto end = offs[1].get<std::uint64_t>();
        if (begin > end || end > payload_size) {
            throw FormatError("tensor '" + name + "' data offsets out of range", data_start + std::min(begin, payload_size));
        }
        const std::size_t esize = dtype_size(t.dtype);
        if (end - begin != t.numel() * esize) {
            throw FormatError("tensor '" + name + "' byte length does not match its shape", data_start + begin);
        }
        t.values.resize(t.numel());
        const std::uint8_t* p = bytes.data() + data_start + begin;
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = detail::decode_value(p + i * esize, t.dtype);
        tensors.push_back(std::move(t));
    }
    return tensors;
}

/// Serializes tensors in the order given, each converted to its `dtype`.
/// The header is space-padded to a multiple of 8 bytes.
inline std::vector<std::uint8_t> serialize(std::span<const Tensor> tensors) {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::uint8_t> payload;
    for (const auto& t : tensors) {
        if (t.values.size() != t.numel()) throw ValidationError("tensor '" + t.name + "' value count mismatch");
        if (header.contains(t.name)) throw ValidationError("duplicate tensor name '" + t.name + "'");
        const std::size_t begin = payload.size();
        for (float v : t.values) detail::encode_value(v, t.dtype, payload);
        header[t.name] = {{"dtype", dtype_name(t.dtype)}, {"shape", t.shape}, {"data_offsets", {begin, payload.size()}}};
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');

    std::vector<std::uint8_t> out;
    out.reserve(8 + text.size() + payload.size());
    const std::uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

}  // namespace aaac::safetensors

// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Packed layer representation and the `.aaacq` container.
//
// File layout (all integers little-endian):
//
//   "AAACQ\0"  u16 version  u32 layer_count  4 zero bytes      (16 bytes)
//   per layer, starting on a 16-byte boundary:
//     u16 name_len, name (UTF-8)
//     u8 format, u32 N, u32 K, u16 g, u16 S, u8 M, u8 flags
//     u32 crc32 of every section byte that follows (padding included)
//     zero padding to a 16-byte boundary
//     codebooks  2*M BF16 words: T0 then T1
//     scales     one BF16 word per scale group, row-major; when S == g the
//                sign bit carries the group's table choice
//     codes      ceil(N*K/2) bytes, low nibble = even flat index
//     bitset     (flags bit 0 only) N*K/S bits, LSB-first
//   each section zero-padded to a multiple of 16 bytes.
//
// flags: bit 0 = selection bitset present, bits 1-2 = method,
//        bit 3 = scales were snapped to E4M3. Other bits must be zero.

#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <zlib.h>

#include "aaac/codebook.hpp"
#include "aaac/error.hpp"
#include "aaac/grids.hpp"
#include "aaac/quant_core.hpp"

namespace aaac {

inline constexpr char kPackMagic[6] = {'A', 'A', 'A', 'C', 'Q', '\0'};
inline constexpr std::uint16_t kPackVersion = 1;
inline constexpr std::size_t kPackAlign = 16;
inline constexpr std::size_t kFileHeaderBytes = 16;
inline constexpr std::size_t kLayerHeaderBytes = 15;  // format .. flags
inline constexpr std::uint8_t kFlagBitset = 0x01;
inline constexpr std::uint8_t kFlagE4m3 = 0x08;

struct PackedHeader {
    FormatKind format = FormatKind::nvfp4;
    Method method = Method::rtn;
    std::uint32_t rows = 0;  // N
    std::uint32_t cols = 0;  // K
    std::uint16_t g = 0;
    std::uint16_t S = 0;
    std::uint8_t m = 0;
    bool e4m3_scales = false;

    bool has_bitset() const noexcept { return S < g; }
    std::size_t scale_groups() const noexcept { return g ? std::size_t{rows} * (cols / g) : 0; }
    std::size_t selection_groups() const noexcept { return S ? std::size_t{rows} * (cols / S) : 0; }
    std::size_t weights() const noexcept { return std::size_t{rows} * cols; }

    std::uint8_t flags() const noexcept {
        return static_cast<std::uint8_t>((has_bitset() ? kFlagBitset : 0) |
                                         (static_cast<std::uint8_t>(method) << 1) | (e4m3_scales ? kFlagE4m3 : 0));
    }

    friend bool operator==(const PackedHeader&, const PackedHeader&) = default;
};

struct PackedLayer {
    PackedHeader header;
    std::vector<std::uint16_t> codebooks;  // 2*M BF16 bit patterns
    std::vector<std::uint16_t> scales;     // BF16 bit patterns, sign = selection when S == g
    std::vector<std::uint8_t> codes;       // two codes per byte
    std::vector<std::uint8_t> bitset;      // empty unless S < g

    friend bool operator==(const PackedLayer&, const PackedLayer&) = default;
};

struct PackedModel {
    std::vector<std::pair<std::string, PackedLayer>> layers;

    friend bool operator==(const PackedModel&, const PackedModel&) = default;
};

// ---------------------------------------------------------------------------
// Sizes

inline constexpr std::size_t pad16(std::size_t n) noexcept { return (n + kPackAlign - 1) / kPackAlign * kPackAlign; }

/// Byte accounting of one layer record. `payload()` is the unpadded sum
/// header + 4M + 2*(scale groups) + ceil(NK/2) + bitset; `record()` is the
/// exact on-disk size including the name and alignment padding.
struct PackedSize {
    std::size_t name = 0;      // u16 length + bytes
    std::size_t header = 0;    // fixed header + crc
    std::size_t codebooks = 0;
    std::size_t scales = 0;
    std::size_t codes = 0;
    std::size_t bitset = 0;

    std::size_t payload() const noexcept { return header + codebooks + scales + codes + bitset; }
    std::size_t record() const noexcept {
        return pad16(name + header) + pad16(codebooks) + pad16(scales) + pad16(codes) + (bitset ? pad16(bitset) : 0);
    }
    std::size_t padding() const noexcept { return record() - name - payload(); }
};

inline PackedSize packed_size(const PackedHeader& h, std::size_t name_length = 0) {
    PackedSize s;
    s.name = 2 + name_length;
    s.header = kLayerHeaderBytes + 4;
    s.codebooks = 2 * std::size_t{h.m} * 2;
    s.scales = 2 * h.scale_groups();
    s.codes = (h.weights() + 1) / 2;
    s.bitset = h.has_bitset() ? (h.selection_groups() + 7) / 8 : 0;
    return s;
}

/// Selection-bit overhead in bits per weight: 1/S with a bitset, 0 in the sign-bit layout.
inline double selection_bpw(const PackedHeader& h) noexcept {
    return h.has_bitset() ? 1.0 / static_cast<double>(h.S) : 0.0;
}

// ---------------------------------------------------------------------------
// pack / unpack

namespace detail {

inline void validate_header(const PackedHeader& h) {
    if (h.rows == 0 || h.cols == 0) throw ValidationError("packed layer must have N, K >= 1");
    if (h.g == 0 || h.S == 0) throw LayoutError("group sizes must be positive");
    if (h.S > h.g) throw UnsupportedConfigError("selection group S larger than scale group g is not supported");
    if (h.g % h.S != 0) throw UnsupportedConfigError("selection group S must divide scale group g");
    if (h.cols % h.g != 0) throw LayoutError("K is not divisible by g");
    if (h.m == 0 || h.m > kMaxCodebookEntries) throw ValidationError("table size M must be in [1, 16]");
}

}  // namespace detail

inline PackedLayer pack(const QuantizedLayer& q, ScaleMode scale_mode = ScaleMode::exact_bf16) {
    const std::size_t n = q.codes.rows, k = q.codes.cols;
    const std::size_t g = q.scales.group_size, S = q.selection.group_size;
    if (S > g) throw UnsupportedConfigError("selection group S=" + std::to_string(S) + " larger than g=" + std::to_string(g));
    if (n > 0xffffffffu || k > 0xffffffffu || g > 0xffff || S > 0xffff) {
        throw ValidationError("layer dimensions exceed the container's field widths");
    }

    PackedLayer p;
    p.header = {q.format, q.method, static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(k),
                static_cast<std::uint16_t>(g), static_cast<std::uint16_t>(S),
                static_cast<std::uint8_t>(q.t0.size()), scale_mode == ScaleMode::emulate_e4m3};
    detail::validate_header(p.header);
    if (q.t1.size() != q.t0.size()) throw ValidationError("T0 and T1 must have the same size");
    if (q.codes.codes.size() != n * k || q.scales.rows != n || q.scales.groups_per_row != k / g ||
        q.scales.values.size() != n * (k / g) || q.selection.rows != n || q.selection.groups_per_row != k / S ||
        q.selection.bits.size() != n * (k / S)) {
        throw ValidationError("codes, scales and selection shapes are inconsistent");
    }

    for (const Codebook* t : {&q.t0, &q.t1}) {
        for (float v : t->entries()) p.codebooks.push_back(to_bf16_bits(v));
    }

    const bool sign_bits = S == g;
    p.scales.reserve(q.scales.values.size());
    for (std::size_t i = 0; i < q.scales.values.size(); ++i) {
        const float s = q.scales.values[i];
        if (!(s > 0.0f) || !std::isfinite(s)) throw ValidationError("scales must be positive and finite");
        std::uint16_t bits = to_bf16_bits(s);
        if ((bits & 0x7fffu) == 0) bits = to_bf16_bits(FLT_MIN);
        if (sign_bits && q.selection.bits[i]) bits |= 0x8000u;
        p.scales.push_back(bits);
    }

    p.codes.assign((n * k + 1) / 2, 0);
    for (std::size_t i = 0; i < n * k; ++i) {
        const std::uint8_t c = q.codes.codes[i];
        if (c >= p.header.m) throw ValidationError("code " + std::to_string(c) + " exceeds table size");
        p.codes[i / 2] |= static_cast<std::uint8_t>(i % 2 ? c << 4 : c);
    }

    if (!sign_bits) {
        p.bitset.assign((q.selection.bits.size() + 7) / 8, 0);
        for (std::size_t j = 0; j < q.selection.bits.size(); ++j) {
            if (q.selection.bits[j] > 1) throw ValidationError("selection bits must be 0 or 1");
            if (q.selection.bits[j]) p.bitset[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
        }
    } else {
        for (auto b : q.selection.bits) {
            if (b > 1) throw ValidationError("selection bits must be 0 or 1");
        }
    }
    return p;
}

inline QuantizedLayer unpack(const PackedLayer& p) {
    const PackedHeader& h = p.header;
    try {
        detail::validate_header(h);
    } catch (const Error& e) {
        throw CorruptionError(std::string("invalid packed header: ") + e.what());
    }
    const std::size_t n = h.rows, k = h.cols, m = h.m;
    if (p.codebooks.size() != 2 * m || p.scales.size() != h.scale_groups() || p.codes.size() != (n * k + 1) / 2 ||
        p.bitset.size() != (h.has_bitset() ? (h.selection_groups() + 7) / 8 : 0)) {
        throw CorruptionError("packed section sizes do not match the header");
    }

    QuantizedLayer q;
    q.method = h.method;
    q.format = h.format;
    const auto table = [&](std::size_t offset) {
        std::vector<float> e(m);
        for (std::size_t i = 0; i < m; ++i) e[i] = from_bf16_bits(p.codebooks[offset + i]);
        try {
            return Codebook(std::move(e));
        } catch (const ValidationError& err) {
            throw CorruptionError(std::string("invalid codebook: ") + err.what());
        }
    };
    q.t0 = table(0);
    q.t1 = table(m);

    q.scales = {n, k / h.g, h.g, std::vector<float>(p.scales.size())};
    q.selection = SelectionMap(n, k, h.S);
    for (std::size_t i = 0; i < p.scales.size(); ++i) {
        const float s = from_bf16_bits(static_cast<std::uint16_t>(p.scales[i] & 0x7fffu));
        if (!(s > 0.0f) || !std::isfinite(s)) throw CorruptionError("scale " + std::to_string(i) + " is zero or non-finite");
        q.scales.values[i] = s;
        const std::uint8_t sign = (p.scales[i] & 0x8000u) ? 1 : 0;
        if (h.has_bitset() && sign) throw CorruptionError("negative scale with a separate selection bitset");
        if (!h.has_bitset()) q.selection.bits[i] = sign;
    }
    if (h.has_bitset()) {
        const std::size_t count = q.selection.bits.size();
        for (std::size_t j = 0; j < count; ++j) q.selection.bits[j] = (p.bitset[j / 8] >> (j % 8)) & 1u;
        if (count % 8 != 0 && (p.bitset.back() >> (count % 8)) != 0) {
            throw CorruptionError("nonzero padding bits in the selection bitset");
        }
    }

    q.codes = {n, k, std::vector<std::uint8_t>(n * k)};
    for (std::size_t i = 0; i < n * k; ++i) {
        const std::uint8_t c = (p.codes[i / 2] >> (i % 2 ? 4 : 0)) & 0x0fu;
        if (c >= m) throw CorruptionError("code nibble " + std::to_string(c) + " >= M=" + std::to_string(m));
        q.codes.codes[i] = c;
    }
    if ((n * k) % 2 != 0 && (p.codes.back() >> 4) != 0) throw CorruptionError("nonzero padding nibble in codes");
    return q;
}

// ---------------------------------------------------------------------------
// Container I/O

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void align() { out_.resize(pad16(out_.size()), 0); }
    std::size_t size() const noexcept { return out_.size(); }
    std::vector<std::uint8_t>& buffer() noexcept { return out_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (n > b_.size() - pos_) {
            throw CorruptionError(std::string("truncated stream reading ") + what + " at byte " + std::to_string(pos_));
        }
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint64_t le(std::size_t n, const char* what) {
        const auto s = take(n, what);
        std::uint64_t v = 0;
        for (std::size_t i = n; i-- > 0;) v = (v << 8) | s[i];
        return v;
    }
    void align(const char* what) {
        const auto pad = take(pad16(pos_) - pos_, what);
        for (auto c : pad) {
            if (c != 0) throw CorruptionError(std::string("nonzero padding after ") + what);
        }
    }
    std::size_t pos() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
    return static_cast<std::uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

inline void write_u16s(ByteWriter& w, std::span<const std::uint16_t> v) {
    for (auto x : v) w.u16(x);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const PackedModel& model) {
    detail::ByteWriter w;
    w.bytes({reinterpret_cast<const std::uint8_t*>(kPackMagic), sizeof kPackMagic});
    w.u16(kPackVersion);
    w.u32(static_cast<std::uint32_t>(model.layers.size()));
    w.align();

    std::set<std::string> names;
    for (const auto& [name, p] : model.layers) {
        if (!names.insert(name).second) throw ValidationError("duplicate layer name '" + name + "'");
        if (name.size() > 0xffff) throw ValidationError("layer name too long");
        detail::validate_header(p.header);
        const PackedHeader& h = p.header;
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
        w.u8(static_cast<std::uint8_t>(h.format));
        w.u32(h.rows);
        w.u32(h.cols);
        w.u16(h.g);
        w.u16(h.S);
        w.u8(h.m);
        w.u8(h.flags());

        detail::ByteWriter sections;
        detail::write_u16s(sections, p.codebooks);
        sections.align();
        detail::write_u16s(sections, p.scales);
        sections.align();
        sections.bytes(p.codes);
        sections.align();
        if (h.has_bitset()) {
            sections.bytes(p.bitset);
            sections.align();
        }
        w.u32(detail::crc32_of(sections.buffer()));
        w.align();
        w.bytes(sections.buffer());
    }
    return std::move(w.buffer());
}

inline PackedModel parse_packed_model(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    const auto magic = r.take(sizeof kPackMagic, "magic");
    if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kPackMagic))) {
        throw CorruptionError("bad magic: not an .aaacq file");
    }
    const auto version = r.le(2, "version");
    if (version != kPackVersion) throw CorruptionError("unsupported .aaacq version " + std::to_string(version));
    const auto count = r.le(4, "layer count");
    r.align("file header");

    PackedModel model;
    std::set<std::string> names;
    for (std::uint64_t li = 0; li < count; ++li) {
        const auto name_len = r.le(2, "name length");
        const auto name_bytes = r.take(name_len, "layer name");
        std::string name(name_bytes.begin(), name_bytes.end());
        if (!names.insert(name).second) throw CorruptionError("duplicate layer name '" + name + "'");

        PackedHeader h;
        const auto fmt = r.le(1, "format");
        if (fmt > 1) throw CorruptionError("unknown format kind " + std::to_string(fmt));
        h.format = static_cast<FormatKind>(fmt);
        h.rows = static_cast<std::uint32_t>(r.le(4, "N"));
        h.cols = static_cast<std::uint32_t>(r.le(4, "K"));
        h.g = static_cast<std::uint16_t>(r.le(2, "g"));
        h.S = static_cast<std::uint16_t>(r.le(2, "S"));
        h.m = static_cast<std::uint8_t>(r.le(1, "M"));
        const auto flags = static_cast<std::uint8_t>(r.le(1, "flags"));
        const auto method = (flags >> 1) & 0x3u;
        if ((flags & 0xf0u) != 0 || method > 2) throw CorruptionError("unknown flag bits in layer '" + name + "'");
        h.method = static_cast<Method>(method);
        h.e4m3_scales = (flags & kFlagE4m3) != 0;
        try {
            detail::validate_header(h);
        } catch (const Error& e) {
            throw CorruptionError("layer '" + name + "': " + e.what());
        }
        if (((flags & kFlagBitset) != 0) != h.has_bitset()) {
            throw CorruptionError("layer '" + name + "': bitset flag disagrees with S and g");
        }
        const auto crc = static_cast<std::uint32_t>(r.le(4, "crc"));
        r.align("layer header");

        const PackedSize sz = packed_size(h, name.size());
        const std::size_t section_bytes = sz.record() - pad16(sz.name + sz.header);
        const auto sections = r.take(section_bytes, "layer sections");
        if (detail::crc32_of(sections) != crc) throw CorruptionError("CRC mismatch in layer '" + name + "'");

        detail::ByteReader s(sections);
        PackedLayer p;
        p.header = h;
        for (std::size_t i = 0; i < 2 * std::size_t{h.m}; ++i) p.codebooks.push_back(static_cast<std::uint16_t>(s.le(2, "codebooks")));
        s.align("codebooks");
        for (std::size_t i = 0; i < h.scale_groups(); ++i) p.scales.push_back(static_cast<std::uint16_t>(s.le(2, "scales")));
        s.align("scales");
        const auto codes = s.take(sz.codes, "codes");
        p.codes.assign(codes.begin(), codes.end());
        s.align("codes");
        if (h.has_bitset()) {
            const auto bits = s.take(sz.bitset, "bitset");
            p.bitset.assign(bits.begin(), bits.end());
            s.align("bitset");
        }
        model.layers.emplace_back(std::move(name), std::move(p));
    }
    if (!r.done()) throw CorruptionError("trailing bytes after the last layer");
    return model;
}

}  // namespace aaac

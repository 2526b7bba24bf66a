// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Base-format scalar tables, per-group absmax scales and the low-precision
// rounding helpers (BF16, FP16 decode/encode, FP8 E4M3).

#pragma once

#include <algorithm>
#include <bit>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aaac/codebook.hpp"
#include "aaac/error.hpp"
#include "aaac/tensor.hpp"

namespace aaac {

enum class FormatKind : std::uint8_t { nvfp4 = 0, int4 = 1 };

enum class ScaleMode : std::uint8_t { exact_bf16 = 0, emulate_e4m3 = 1 };

inline std::string_view to_string(FormatKind kind) noexcept {
    return kind == FormatKind::nvfp4 ? "nvfp4" : "int4";
}

inline std::string_view to_string(ScaleMode mode) noexcept {
    return mode == ScaleMode::exact_bf16 ? "exact-bf16" : "emulate-e4m3";
}

inline std::optional<FormatKind> parse_format(std::string_view s) noexcept {
    if (s == "nvfp4" || s == "fp4") return FormatKind::nvfp4;
    if (s == "int4") return FormatKind::int4;
    return std::nullopt;
}

inline std::optional<ScaleMode> parse_scale_mode(std::string_view s) noexcept {
    if (s == "exact-bf16") return ScaleMode::exact_bf16;
    if (s == "emulate-e4m3") return ScaleMode::emulate_e4m3;
    return std::nullopt;
}

/// Number of table entries M: 15 distinct E2M1 values, 16 INT4 levels.
constexpr std::size_t table_size(FormatKind kind) noexcept {
    return kind == FormatKind::nvfp4 ? 15 : 16;
}

constexpr std::size_t default_group_size(FormatKind kind) noexcept {
    return kind == FormatKind::nvfp4 ? 16 : 128;
}

/// Largest |entry| of the base table; absmax scaling maps the group maximum here.
constexpr float max_magnitude(FormatKind kind) noexcept {
    return kind == FormatKind::nvfp4 ? 6.0f : 8.0f;
}

inline Codebook base_table(FormatKind kind) {
    if (kind == FormatKind::nvfp4) {
        return Codebook{-6.0f, -4.0f, -3.0f, -2.0f, -1.5f, -1.0f, -0.5f, 0.0f,
                        0.5f,  1.0f,  1.5f,  2.0f,  3.0f,  4.0f,  6.0f};
    }
    std::vector<float> grid;
    for (int v = -8; v <= 7; ++v) grid.push_back(static_cast<float>(v));
    return Codebook(std::move(grid));
}

// ---------------------------------------------------------------------------
// BF16

inline std::uint16_t to_bf16_bits(float x) noexcept {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    if ((bits & 0x7fffffffu) > 0x7f800000u) return static_cast<std::uint16_t>((bits >> 16) | 0x40u);
    const std::uint32_t lsb = (bits >> 16) & 1u;
    bits += 0x7fffu + lsb;
    return static_cast<std::uint16_t>(bits >> 16);
}

inline float from_bf16_bits(std::uint16_t bits) noexcept {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

/// Nearest BF16 value, ties to even.
inline float round_bf16(float x) noexcept { return from_bf16_bits(to_bf16_bits(x)); }

// ---------------------------------------------------------------------------
// FP16 (IEEE binary16), used only for archive I/O.

inline float from_f16_bits(std::uint16_t h) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    const std::uint32_t mant = h & 0x3ffu;
    if (exp == 0) {
        const float mag = std::ldexp(static_cast<float>(mant), -24);
        return std::bit_cast<float>(std::bit_cast<std::uint32_t>(mag) | sign);
    }
    if (exp == 0x1f) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
    return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

inline std::uint16_t to_f16_bits(float f) noexcept {
    std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const auto sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
    x &= 0x7fffffffu;
    if (x >= 0x7f800000u) return static_cast<std::uint16_t>(sign | 0x7c00u | (x > 0x7f800000u ? 0x200u : 0u));
    if (x >= 0x477ff000u) return static_cast<std::uint16_t>(sign | 0x7c00u);  // rounds past 65504
    if (x < 0x38800000u) {
        // Subnormal half: scale by 2^24 (exact) and round the integer mantissa.
        const float mag = std::bit_cast<float>(x) * 16777216.0f;
        return static_cast<std::uint16_t>(sign | static_cast<std::uint32_t>(std::nearbyint(mag)));
    }
    const std::uint32_t odd = (x >> 13) & 1u;
    x += 0xfffu + odd;
    x -= (127u - 15u) << 23;
    return static_cast<std::uint16_t>(sign | (x >> 13));
}

// ---------------------------------------------------------------------------
// FP8 E4M3 (bias 7, 3 mantissa bits, no infinities, max finite 448)

inline constexpr double kE4m3Max = 448.0;
inline constexpr double kE4m3MinSubnormal = 0.001953125;  // 2^-9
inline constexpr double kE4m3MinNormal = 0.015625;        // 2^-6

/// Nearest E4M3 magnitude for x >= 0, ties to even; saturates at 448.
inline double round_e4m3(double x) noexcept {
    if (!(x > 0.0)) return 0.0;
    if (x >= kE4m3Max) return kE4m3Max;
    int e = 0;
    std::frexp(x, &e);
    const int exponent = std::max(e - 1, -6);
    const double quantum = std::ldexp(1.0, exponent - 3);
    return std::min(std::nearbyint(x / quantum) * quantum, kE4m3Max);
}

// ---------------------------------------------------------------------------
// Scales

/// One positive scale per group of `group_size` contiguous in-row weights.
struct ScaleVector {
    std::size_t rows = 0;
    std::size_t groups_per_row = 0;
    std::size_t group_size = 0;
    std::vector<float> values;

    float at(std::size_t row, std::size_t col) const noexcept {
        return values[row * groups_per_row + col / group_size];
    }

    friend bool operator==(const ScaleVector&, const ScaleVector&) = default;
};

inline void require_divisible(std::size_t cols, std::size_t group, std::string_view what) {
    if (group == 0) throw LayoutError(std::string(what) + " must be positive");
    if (cols % group != 0) {
        throw LayoutError("row width " + std::to_string(cols) + " is not divisible by " +
                          std::string(what) + " " + std::to_string(group));
    }
}

/// Absmax scales: s = max|w| / max|entry|, floored at the smallest normal
/// value so every scale stays strictly positive. Emulate-e4m3 mode snaps the
/// result onto the positive E4M3 range.
inline ScaleVector compute_scales(const WeightMatrix& w, FormatKind format, std::size_t g,
                                  ScaleMode mode = ScaleMode::exact_bf16) {
    require_divisible(w.cols(), g, "scale group size g");
    ScaleVector out{w.rows(), w.cols() / g, g, {}};
    out.values.reserve(w.rows() * out.groups_per_row);
    const float top = max_magnitude(format);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const auto row = w.row(r);
        for (std::size_t gi = 0; gi < out.groups_per_row; ++gi) {
            float absmax = 0.0f;
            for (std::size_t k = gi * g; k < (gi + 1) * g; ++k) absmax = std::max(absmax, std::abs(row[k]));
            float s = std::max(absmax / top, FLT_MIN);
            if (mode == ScaleMode::emulate_e4m3) {
                s = static_cast<float>(std::clamp(round_e4m3(s), kE4m3MinSubnormal, kE4m3Max));
            }
            out.values.push_back(s);
        }
    }
    return out;
}

/// Scales as stored in the packed container (BF16 magnitudes). All quantizers
/// normalize by these so that packed and in-memory dequantization agree exactly.
inline ScaleVector storage_scales(ScaleVector scales) {
    for (float& s : scales.values) s = std::max(round_bf16(s), FLT_MIN);
    return scales;
}

}  // namespace aaac

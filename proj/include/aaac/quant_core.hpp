// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Nearest-entry reconstruction, the round-to-nearest and IF4 baselines, and
// table-driven dequantization shared by every method.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aaac/codebook.hpp"
#include "aaac/error.hpp"
#include "aaac/grids.hpp"
#include "aaac/tensor.hpp"

namespace aaac {

enum class Method : std::uint8_t { rtn = 0, if4 = 1, aaac = 2 };

inline std::string_view to_string(Method m) noexcept {
    switch (m) {
        case Method::rtn: return "rtn";
        case Method::if4: return "if4";
        case Method::aaac: return "aaac";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s) noexcept {
    if (s == "rtn") return Method::rtn;
    if (s == "if4") return Method::if4;
    if (s == "aaac") return Method::aaac;
    return std::nullopt;
}

/// N x K codes, one byte each in memory.
struct CodeMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> codes;

    std::uint8_t operator()(std::size_t r, std::size_t c) const noexcept { return codes[r * cols + c]; }

    friend bool operator==(const CodeMatrix&, const CodeMatrix&) = default;
};

/// One table-choice bit per group of `group_size` contiguous in-row weights.
struct SelectionMap {
    std::size_t rows = 0;
    std::size_t groups_per_row = 0;
    std::size_t group_size = 0;
    std::vector<std::uint8_t> bits;

    SelectionMap() = default;
    SelectionMap(std::size_t n, std::size_t k, std::size_t s)
        : rows(n), groups_per_row(k / s), group_size(s), bits(n * (k / s), 0) {}

    std::uint8_t at(std::size_t row, std::size_t col) const noexcept {
        return bits[row * groups_per_row + col / group_size];
    }
    std::size_t count() const noexcept { return bits.size(); }

    friend bool operator==(const SelectionMap&, const SelectionMap&) = default;
};

struct Recon {
    std::size_t code = 0;
    float value = 0.0f;
};

/// Nearest entry of a sorted table; ties (including duplicate entries) go to
/// the lowest index. Agrees with an exhaustive argmin over |x - table[i]|.
inline Recon recon(const Codebook& table, float x) noexcept {
    const auto e = table.entries();
    const auto dist = [&](std::size_t i) { return std::abs(static_cast<double>(x) - static_cast<double>(e[i])); };
    const std::size_t hi = static_cast<std::size_t>(std::lower_bound(e.begin(), e.end(), x) - e.begin());
    std::size_t best = 0;
    if (hi == e.size()) {
        best = hi - 1;
    } else if (hi == 0) {
        best = 0;
    } else {
        best = dist(hi - 1) <= dist(hi) ? hi - 1 : hi;
    }
    while (best > 0 && dist(best - 1) == dist(best)) --best;
    return {best, e[best]};
}

/// Output of any quantizer: codes index T0 or T1 per selection group, and
/// dequantization is table[code] * scale. Single-table methods set T0 == T1
/// and leave every selection bit at 0.
struct QuantizedLayer {
    Method method = Method::rtn;
    FormatKind format = FormatKind::nvfp4;
    Codebook t0;
    Codebook t1;
    SelectionMap selection;
    CodeMatrix codes;
    ScaleVector scales;

    std::size_t rows() const noexcept { return codes.rows; }
    std::size_t cols() const noexcept { return codes.cols; }
    std::size_t table_size() const noexcept { return t0.size(); }
    const Codebook& table(std::uint8_t sel) const noexcept { return sel ? t1 : t0; }

    friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

/// w / s elementwise under the group scales.
inline WeightMatrix normalize(const WeightMatrix& w, const ScaleVector& scales) {
    WeightMatrix out(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) = w(r, c) / scales.at(r, c);
    }
    return out;
}

inline WeightMatrix dequantize(const CodeMatrix& codes, const ScaleVector& scales, const Codebook& t0,
                               const Codebook& t1, const SelectionMap& selection) {
    if (scales.rows != codes.rows || scales.groups_per_row * scales.group_size != codes.cols ||
        selection.rows != codes.rows || selection.groups_per_row * selection.group_size != codes.cols ||
        codes.codes.size() != codes.rows * codes.cols) {
        throw LayoutError("dequantize: codes, scales and selection shapes disagree");
    }
    WeightMatrix out(codes.rows, codes.cols);
    for (std::size_t r = 0; r < codes.rows; ++r) {
        for (std::size_t c = 0; c < codes.cols; ++c) {
            const Codebook& table = selection.at(r, c) ? t1 : t0;
            const std::uint8_t code = codes(r, c);
            if (code >= table.size()) {
                throw CorruptionError("code " + std::to_string(code) + " at (" + std::to_string(r) + ", " +
                                      std::to_string(c) + ") exceeds table size " + std::to_string(table.size()));
            }
            out(r, c) = table[code] * scales.at(r, c);
        }
    }
    return out;
}

inline WeightMatrix dequantize(const QuantizedLayer& q) {
    return dequantize(q.codes, q.scales, q.t0, q.t1, q.selection);
}

/// Round-to-nearest under the fixed base table with absmax group scales.
inline QuantizedLayer rtn_quantize(const WeightMatrix& w, FormatKind format, std::size_t g,
                                   ScaleMode mode = ScaleMode::exact_bf16) {
    QuantizedLayer q;
    q.method = Method::rtn;
    q.format = format;
    q.t0 = base_table(format);
    q.t1 = q.t0;
    q.scales = storage_scales(compute_scales(w, format, g, mode));
    q.selection = SelectionMap(w.rows(), w.cols(), g);
    q.codes = {w.rows(), w.cols(), std::vector<std::uint8_t>(w.size())};
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            q.codes.codes[r * w.cols() + c] =
                static_cast<std::uint8_t>(recon(q.t0, w(r, c) / q.scales.at(r, c)).code);
        }
    }
    return q;
}

/// FP4 table widened to 16 entries by repeating its maximum; the duplicate is
/// never selected because ties resolve to the lower index.
inline Codebook if4_fp4_table() {
    const auto fp4 = base_table(FormatKind::nvfp4);
    std::vector<float> e(fp4.entries().begin(), fp4.entries().end());
    e.push_back(e.back());
    return Codebook(std::move(e));
}

/// INT4 grid expressed in FP4-normalized units: k * 6/8, so that an FP4 absmax
/// scale applied to it reproduces the INT4 absmax quantizer.
inline Codebook if4_int4_table() {
    std::vector<float> e;
    for (int v = -8; v <= 7; ++v) e.push_back(static_cast<float>(v) * 0.75f);
    return Codebook(std::move(e));
}

/// IF4: per scale group, quantize with FP4 and with scaled INT4 and keep the
/// one with lower squared error in de-normalized units (ties keep FP4). The
/// selection bit records the choice (1 = INT4).
inline QuantizedLayer if4_quantize(const WeightMatrix& w, std::size_t g, ScaleMode mode = ScaleMode::exact_bf16) {
    QuantizedLayer q;
    q.method = Method::if4;
    q.format = FormatKind::nvfp4;
    q.t0 = if4_fp4_table();
    q.t1 = if4_int4_table();
    q.scales = storage_scales(compute_scales(w, FormatKind::nvfp4, g, mode));
    q.selection = SelectionMap(w.rows(), w.cols(), g);
    q.codes = {w.rows(), w.cols(), std::vector<std::uint8_t>(w.size())};

    std::vector<std::uint8_t> codes_fp4(g), codes_int4(g);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t gi = 0; gi < q.scales.groups_per_row; ++gi) {
            const float s = q.scales.values[r * q.scales.groups_per_row + gi];
            double err_fp4 = 0.0, err_int4 = 0.0;
            for (std::size_t j = 0; j < g; ++j) {
                const float x = w(r, gi * g + j);
                const Recon a = recon(q.t0, x / s);
                const Recon b = recon(q.t1, x / s);
                codes_fp4[j] = static_cast<std::uint8_t>(a.code);
                codes_int4[j] = static_cast<std::uint8_t>(b.code);
                const double da = static_cast<double>(x) - static_cast<double>(a.value * s);
                const double db = static_cast<double>(x) - static_cast<double>(b.value * s);
                err_fp4 += da * da;
                err_int4 += db * db;
            }
            const bool use_int4 = err_int4 < err_fp4;
            q.selection.bits[r * q.selection.groups_per_row + gi] = use_int4 ? 1 : 0;
            std::copy(use_int4 ? codes_int4.begin() : codes_fp4.begin(), use_int4 ? codes_int4.end() : codes_fp4.end(),
                      q.codes.codes.begin() + static_cast<std::ptrdiff_t>(r * w.cols() + gi * g));
        }
    }
    return q;
}

}  // namespace aaac

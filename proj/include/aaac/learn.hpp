// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Activation-aware adaptive codebooks: learns two scalar tables per layer by
// alternating a per-group table assignment with importance-weighted scalar
// k-means on each table, then encodes every selection group against the table
// it picked.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aaac/codebook.hpp"
#include "aaac/error.hpp"
#include "aaac/grids.hpp"
#include "aaac/quant_core.hpp"
#include "aaac/tensor.hpp"

namespace aaac {

/// Per-column importance I_k = sum_t X[t,k]^2, one entry per input column.
struct ImportanceVector {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    bool all_zero() const noexcept {
        return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
    }
    static ImportanceVector uniform(std::size_t k) { return {std::vector<double>(k, 1.0)}; }

    friend bool operator==(const ImportanceVector&, const ImportanceVector&) = default;
};

inline ImportanceVector importance(const ActivationMatrix& x) {
    ImportanceVector out{std::vector<double>(x.cols(), 0.0)};
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto row = x.row(t);
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const double v = row[k];
            out.values[k] += v * v;
        }
    }
    return out;
}

struct AaacConfig {
    FormatKind format = FormatKind::nvfp4;
    std::size_t g = 16;  // scale group
    std::size_t S = 16;  // selection group
    std::size_t n_outer = 3;
    std::size_t n_inner = 10;
    ScaleMode scale_mode = ScaleMode::exact_bf16;

    /// Defaults for a format: g = S = 16 for NVFP4, g = S = 128 for INT4.
    static AaacConfig for_format(FormatKind f) {
        AaacConfig c;
        c.format = f;
        c.g = default_group_size(f);
        c.S = c.g;
        return c;
    }

    void validate() const {
        if (g == 0 || S == 0) throw LayoutError("group sizes must be positive");
        if (S > g) {
            throw UnsupportedConfigError("selection group S=" + std::to_string(S) + " larger than scale group g=" +
                                         std::to_string(g) + " is not supported");
        }
        if (g % S != 0) {
            throw UnsupportedConfigError("selection group S=" + std::to_string(S) + " must divide g=" +
                                         std::to_string(g));
        }
        if (g > 0xffff) throw UnsupportedConfigError("scale group size must fit in 16 bits");
        if (n_outer == 0 || n_inner == 0) throw ValidationError("iteration counts must be >= 1");
    }

    void validate(std::size_t cols) const {
        validate();
        require_divisible(cols, g, "scale group size g");
        require_divisible(cols, S, "selection group size S");
    }
};

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

// Linear interpolation between order statistics at fractional position
// num / den (in units of sorted indices).
inline float interpolated_order_statistic(std::span<const float> sorted, double num, double den) {
    const double pos = num / den;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    const double a = sorted[lo];
    const double b = sorted[lo + 1];
    return static_cast<float>(a + frac * (b - a));
}

}  // namespace detail

/// Quantile initialization over all normalized weights of the layer.
/// T0 takes M evenly spaced quantiles from the minimum to the maximum; T1 is
/// shifted forward by half a step (delta = 1 / (2(M-1))) and also ends at the
/// maximum.
inline std::pair<Codebook, Codebook> init_tables(std::span<const float> w_norm, std::size_t m) {
    if (w_norm.empty()) throw ValidationError("init_tables: no weights to take quantiles of");
    if (m < 2 || m > kMaxCodebookEntries) throw ValidationError("init_tables: table size must be in [2, 16]");
    std::vector<float> sorted(w_norm.begin(), w_norm.end());
    std::sort(sorted.begin(), sorted.end());

    // Positions are kept as exact integer ratios so that q = 1 lands on the
    // last order statistic without rounding drift.
    const double n1 = static_cast<double>(sorted.size() - 1);
    const double m1 = static_cast<double>(m - 1);
    std::vector<float> t0(m), t1(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double di = static_cast<double>(i);
        t0[i] = detail::interpolated_order_statistic(sorted, di * n1, m1);
        t1[i] = detail::interpolated_order_statistic(sorted, n1 * (m1 + (2.0 * m1 - 1.0) * di), 2.0 * m1 * m1);
    }
    return {Codebook(std::move(t0)), Codebook(std::move(t1))};
}

// ---------------------------------------------------------------------------
// Assignment

namespace detail {

inline double group_error(std::span<const float> w, std::span<const double> imp, const Codebook& table,
                          bool weighted) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double d = static_cast<double>(w[j]) - static_cast<double>(recon(table, w[j]).value);
        acc += (weighted ? imp[j] : 1.0) * d * d;
    }
    return acc;
}

}  // namespace detail

/// Picks, per selection group of S weights, the table with the lower
/// importance-weighted squared error (ties pick T0). Groups whose total
/// importance is zero are compared unweighted.
inline SelectionMap select_tables(const WeightMatrix& w_norm, std::span<const double> importance,
                                  const Codebook& t0, const Codebook& t1, std::size_t S) {
    require_divisible(w_norm.cols(), S, "selection group size S");
    if (importance.size() != w_norm.cols()) throw LayoutError("importance length does not match weight width");
    SelectionMap sel(w_norm.rows(), w_norm.cols(), S);
    for (std::size_t r = 0; r < w_norm.rows(); ++r) {
        const auto row = w_norm.row(r);
        for (std::size_t j = 0; j < sel.groups_per_row; ++j) {
            const auto w = row.subspan(j * S, S);
            const auto imp = importance.subspan(j * S, S);
            bool weighted = false;
            for (double v : imp) weighted = weighted || v > 0.0;
            const double e0 = detail::group_error(w, imp, t0, weighted);
            const double e1 = detail::group_error(w, imp, t1, weighted);
            sel.bits[r * sel.groups_per_row + j] = e1 < e0 ? 1 : 0;
        }
    }
    return sel;
}

// ---------------------------------------------------------------------------
// Table update

struct WeightedValue {
    float value = 0.0f;
    double importance = 0.0;
};

/// Importance-weighted squared error of members reconstructed under a table.
inline double members_error(const Codebook& table, std::span<const WeightedValue> members) {
    double acc = 0.0;
    for (const auto& m : members) {
        const double d = static_cast<double>(m.value) - static_cast<double>(recon(table, m.value).value);
        acc += m.importance * d * d;
    }
    return acc;
}

/// n_inner weighted Lloyd iterations. Each entry moves to the importance-
/// weighted centroid of its Voronoi cell; cells with zero total importance
/// keep their previous value. The table is re-sorted after every iteration
/// (a kept entry can otherwise land out of order next to a duplicate), and
/// `on_iteration` sees the table after each one.
inline Codebook kmeans_update(Codebook table, std::span<const WeightedValue> members, std::size_t n_inner,
                              const std::function<void(const Codebook&)>& on_iteration = {}) {
    const std::size_t m = table.size();
    std::vector<double> num(m), den(m);
    for (std::size_t it = 0; it < n_inner; ++it) {
        std::fill(num.begin(), num.end(), 0.0);
        std::fill(den.begin(), den.end(), 0.0);
        for (const auto& mem : members) {
            const std::size_t c = recon(table, mem.value).code;
            num[c] += mem.importance * static_cast<double>(mem.value);
            den[c] += mem.importance;
        }
        std::vector<float> next(table.entries().begin(), table.entries().end());
        for (std::size_t i = 0; i < m; ++i) {
            if (den[i] > 0.0) next[i] = static_cast<float>(num[i] / den[i]);
        }
        std::sort(next.begin(), next.end());
        table = Codebook(std::move(next));
        if (on_iteration) on_iteration(table);
    }
    return table;
}

// ---------------------------------------------------------------------------
// Full learner

enum class StepKind : std::uint8_t { assignment, update };

struct TraceStep {
    StepKind kind = StepKind::assignment;
    std::size_t outer = 0;
    std::size_t table = 0;  // update steps only
    std::size_t inner = 0;  // update steps only
    double objective = 0.0;
};

struct AaacResult {
    QuantizedLayer layer;
    /// Weighted objective in normalized units after every assignment and
    /// every inner k-means iteration, before BF16 rounding of the tables.
    std::vector<TraceStep> trace;
    /// Objective of the final (unrounded) tables.
    double pre_rounding_objective = 0.0;
    /// Objective of quantizing every group with the initial quantile table T0.
    double static_table_objective = 0.0;
    /// Objective after BF16 rounding and the final reselection.
    double final_objective = 0.0;
};

/// Importance as used inside the learner: divided by its maximum and held at
/// float precision, so a positive rescaling of I yields the same values. An
/// all-zero (or absent) importance becomes uniform.
inline std::vector<double> working_importance(const ImportanceVector& raw, std::size_t cols) {
    if (raw.size() != cols) throw LayoutError("importance length does not match weight width");
    const double top = raw.values.empty() ? 0.0 : *std::max_element(raw.values.begin(), raw.values.end());
    std::vector<double> out(cols, 1.0);
    if (!(top > 0.0)) return out;
    for (std::size_t k = 0; k < cols; ++k) {
        if (raw.values[k] < 0.0 || !std::isfinite(raw.values[k])) throw ValidationError("importance must be finite and >= 0");
        out[k] = static_cast<double>(static_cast<float>(raw.values[k] / top));
    }
    return out;
}

/// Weighted error of normalized weights under (tables, selection).
inline double selection_objective(const WeightMatrix& w_norm, std::span<const double> imp, const Codebook& t0,
                                  const Codebook& t1, const SelectionMap& sel) {
    double acc = 0.0;
    for (std::size_t r = 0; r < w_norm.rows(); ++r) {
        for (std::size_t c = 0; c < w_norm.cols(); ++c) {
            const float x = w_norm(r, c);
            const double d = static_cast<double>(x) - static_cast<double>(recon(sel.at(r, c) ? t1 : t0, x).value);
            acc += imp[c] * d * d;
        }
    }
    return acc;
}

inline AaacResult learn(const WeightMatrix& w, const ImportanceVector& raw_importance, const AaacConfig& cfg) {
    cfg.validate(w.cols());
    const std::vector<double> imp = working_importance(raw_importance, w.cols());

    AaacResult res;
    QuantizedLayer& q = res.layer;
    q.method = Method::aaac;
    q.format = cfg.format;
    q.scales = storage_scales(compute_scales(w, cfg.format, cfg.g, cfg.scale_mode));
    const WeightMatrix w_norm = normalize(w, q.scales);

    auto [t0, t1] = init_tables(w_norm.data(), table_size(cfg.format));
    {
        const SelectionMap all_t0(w.rows(), w.cols(), cfg.S);
        res.static_table_objective = selection_objective(w_norm, imp, t0, t0, all_t0);
    }

    std::vector<WeightedValue> members[2];
    for (std::size_t outer = 0; outer < cfg.n_outer; ++outer) {
        const SelectionMap sel = select_tables(w_norm, imp, t0, t1, cfg.S);
        members[0].clear();
        members[1].clear();
        for (std::size_t r = 0; r < w.rows(); ++r) {
            for (std::size_t c = 0; c < w.cols(); ++c) members[sel.at(r, c)].push_back({w_norm(r, c), imp[c]});
        }
        double err[2] = {members_error(t0, members[0]), members_error(t1, members[1])};
        res.trace.push_back({StepKind::assignment, outer, 0, 0, err[0] + err[1]});

        for (std::size_t r = 0; r < 2; ++r) {
            Codebook& table = r == 0 ? t0 : t1;
            std::size_t inner = 0;
            table = kmeans_update(table, members[r], cfg.n_inner, [&](const Codebook& current) {
                err[r] = members_error(current, members[r]);
                res.trace.push_back({StepKind::update, outer, r, inner++, err[0] + err[1]});
            });
        }
    }
    res.pre_rounding_objective = res.trace.back().objective;

    const auto to_bf16 = [](const Codebook& t) {
        std::vector<float> e(t.entries().begin(), t.entries().end());
        for (float& v : e) v = round_bf16(v);
        return Codebook(std::move(e));
    };
    q.t0 = to_bf16(t0);
    q.t1 = to_bf16(t1);
    q.selection = select_tables(w_norm, imp, q.t0, q.t1, cfg.S);
    q.codes = {w.rows(), w.cols(), std::vector<std::uint8_t>(w.size())};
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            q.codes.codes[r * w.cols() + c] =
                static_cast<std::uint8_t>(recon(q.table(q.selection.at(r, c)), w_norm(r, c)).code);
        }
    }
    res.final_objective = selection_objective(w_norm, imp, q.t0, q.t1, q.selection);
    return res;
}

/// Learns from a bundle; columns are weighted by the calibration activations
/// when present, uniformly otherwise.
inline AaacResult learn(const LayerBundle& layer, const AaacConfig& cfg) {
    const ImportanceVector imp = layer.activations ? importance(*layer.activations)
                                                   : ImportanceVector::uniform(layer.weights.cols());
    return learn(layer.weights, imp, cfg);
}

/// sum_{n,k} I_k (W[n,k] - W_hat[n,k])^2 in de-normalized units.
inline double weighted_error(const WeightMatrix& w, const WeightMatrix& w_hat, const ImportanceVector& imp) {
    if (w.rows() != w_hat.rows() || w.cols() != w_hat.cols() || imp.size() != w.cols()) {
        throw LayoutError("weighted_error: shapes disagree");
    }
    double acc = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            const double d = static_cast<double>(w(r, c)) - static_cast<double>(w_hat(r, c));
            acc += imp.values[c] * d * d;
        }
    }
    return acc;
}

}  // namespace aaac

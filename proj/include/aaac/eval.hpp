// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Quality metrics, gap recovery, W4A8 activation simulation and the
// method-comparison report.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "aaac/error.hpp"
#include "aaac/grids.hpp"
#include "aaac/learn.hpp"
#include "aaac/packfmt.hpp"
#include "aaac/quant_core.hpp"
#include "aaac/tensor.hpp"

namespace aaac {

// ---------------------------------------------------------------------------
// Metrics

/// (1/T) * sum_t || x_deploy_t W_hat^T - x_ref_t W^T ||^2. With the same
/// activations on both sides this is the plain layer-output MSE.
inline double layer_output_mse(const WeightMatrix& w, const WeightMatrix& w_hat, const ActivationMatrix& x_ref,
                               const ActivationMatrix& x_deploy) {
    if (w.rows() != w_hat.rows() || w.cols() != w_hat.cols() || x_ref.cols() != w.cols() ||
        x_deploy.cols() != w.cols() || x_ref.rows() != x_deploy.rows()) {
        throw LayoutError("layer_output_mse: shapes disagree");
    }
    double total = 0.0;
    for (std::size_t t = 0; t < x_ref.rows(); ++t) {
        const auto xr = x_ref.row(t);
        const auto xd = x_deploy.row(t);
        for (std::size_t n = 0; n < w.rows(); ++n) {
            const auto wr = w.row(n);
            const auto wq = w_hat.row(n);
            double y = 0.0;
            for (std::size_t k = 0; k < w.cols(); ++k) {
                y += static_cast<double>(xd[k]) * wq[k] - static_cast<double>(xr[k]) * wr[k];
            }
            total += y * y;
        }
    }
    return total / static_cast<double>(x_ref.rows());
}

inline double layer_output_mse(const WeightMatrix& w, const WeightMatrix& w_hat, const ActivationMatrix& x) {
    return layer_output_mse(w, w_hat, x, x);
}

inline double mean_squared_error(const WeightMatrix& w, const WeightMatrix& w_hat) {
    if (w.rows() != w_hat.rows() || w.cols() != w_hat.cols()) throw LayoutError("mse: shapes disagree");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = static_cast<double>(w.data()[i]) - static_cast<double>(w_hat.data()[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(w.size());
}

enum class Direction { lower_better, higher_better };

/// Share of the RTN-induced degradation a method removes, in percent.
inline double gap_recovery(double full, double rtn, double method, Direction dir) {
    if (rtn == full) throw UndefinedGapError("gap recovery undefined: RTN metric equals full-precision metric");
    if (dir == Direction::lower_better) return (rtn - method) / (rtn - full) * 100.0;
    return (method - rtn) / (full - rtn) * 100.0;
}

/// Per-tensor FP8 E4M3 fake-quantization with an absmax scale (absmax -> 448).
inline ActivationMatrix simulate_w4a8(const ActivationMatrix& x) {
    float absmax = 0.0f;
    for (float v : x.data()) absmax = std::max(absmax, std::abs(v));
    if (absmax == 0.0f) return x;
    ActivationMatrix out = x;
    const double a = absmax;
    for (float& v : out.data()) {
        const double q = round_e4m3(std::abs(static_cast<double>(v)) * kE4m3Max / a);
        const double back = q * a / kE4m3Max;
        v = static_cast<float>(v < 0.0f ? -back : back);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bits per weight

struct BitsPerWeight {
    double codes = 4.0;
    double scales = 0.0;     // 16/g for BF16 scales
    double selection = 0.0;  // 1/S with a bitset, else 0
    double codebooks = 0.0;  // learned-table bytes amortized over the layer

    double total() const noexcept { return codes + scales + selection + codebooks; }
};

inline BitsPerWeight bits_per_weight(const PackedHeader& h) {
    BitsPerWeight b;
    b.scales = 16.0 / static_cast<double>(h.g);
    b.selection = selection_bpw(h);
    if (h.method == Method::aaac) {
        b.codebooks = static_cast<double>(packed_size(h).codebooks) * 8.0 / static_cast<double>(h.weights());
    }
    return b;
}

inline PackedHeader header_of(const QuantizedLayer& q, ScaleMode mode = ScaleMode::exact_bf16) {
    return {q.format,
            q.method,
            static_cast<std::uint32_t>(q.rows()),
            static_cast<std::uint32_t>(q.cols()),
            static_cast<std::uint16_t>(q.scales.group_size),
            static_cast<std::uint16_t>(q.selection.group_size),
            static_cast<std::uint8_t>(q.table_size()),
            mode == ScaleMode::emulate_e4m3};
}

// ---------------------------------------------------------------------------
// Reports

struct LayerMetrics {
    std::string layer;
    std::string method;
    double mse = 0.0;
    double weighted_error = 0.0;
    std::optional<double> output_mse;  // absent without calibration activations
    BitsPerWeight bpw;
};

struct MethodAggregate {
    std::string method;
    std::size_t layers = 0;
    double mse = 0.0;
    double weighted_error = 0.0;
    std::optional<double> output_mse;
    double bpw = 0.0;
};

struct Recovery {
    std::string method;
    std::optional<double> mse;
    std::optional<double> weighted_error;
    std::optional<double> output_mse;
};

struct EvalReport {
    std::vector<LayerMetrics> rows;         // sorted by method, then layer
    std::vector<MethodAggregate> aggregates;  // arithmetic mean over layers
    std::optional<std::vector<Recovery>> recovery;  // vs RTN, full precision = 0 error
};

/// Metrics of one reconstruction. Importance for the weighted error comes from
/// `x_ref` (unit importance without activations); `x_deploy`, when given,
/// replaces the activations on the quantized side of the output error.
inline LayerMetrics measure_layer(const std::string& layer, Method method, const WeightMatrix& w,
                                  const WeightMatrix& w_hat, const std::optional<ActivationMatrix>& x_ref,
                                  const BitsPerWeight& bpw, const std::optional<ActivationMatrix>& x_deploy = {}) {
    LayerMetrics m;
    m.layer = layer;
    m.method = std::string(to_string(method));
    m.mse = mean_squared_error(w, w_hat);
    const ImportanceVector imp = x_ref ? importance(*x_ref) : ImportanceVector::uniform(w.cols());
    m.weighted_error = weighted_error(w, w_hat, imp);
    if (x_ref) m.output_mse = layer_output_mse(w, w_hat, *x_ref, x_deploy ? *x_deploy : *x_ref);
    m.bpw = bpw;
    return m;
}

inline void finalize_report(EvalReport& report) {
    std::sort(report.rows.begin(), report.rows.end(), [](const LayerMetrics& a, const LayerMetrics& b) {
        return std::tie(a.method, a.layer) < std::tie(b.method, b.layer);
    });
    report.aggregates.clear();
    for (const auto& row : report.rows) {
        if (report.aggregates.empty() || report.aggregates.back().method != row.method) {
            report.aggregates.push_back({row.method, 0, 0.0, 0.0, 0.0, 0.0});
        }
        auto& a = report.aggregates.back();
        ++a.layers;
        a.mse += row.mse;
        a.weighted_error += row.weighted_error;
        a.bpw += row.bpw.total();
        if (row.output_mse && a.output_mse) {
            *a.output_mse += *row.output_mse;
        } else {
            a.output_mse.reset();
        }
    }
    for (auto& a : report.aggregates) {
        const double n = static_cast<double>(a.layers);
        a.mse /= n;
        a.weighted_error /= n;
        a.bpw /= n;
        if (a.output_mse) *a.output_mse /= n;
    }

    report.recovery.reset();
    const auto rtn = std::find_if(report.aggregates.begin(), report.aggregates.end(),
                                  [](const MethodAggregate& a) { return a.method == "rtn"; });
    if (rtn == report.aggregates.end() || report.aggregates.size() < 2) return;
    const auto recover = [](std::optional<double> base, std::optional<double> method) -> std::optional<double> {
        if (!base || !method || *base == 0.0) return std::nullopt;
        return gap_recovery(0.0, *base, *method, Direction::lower_better);
    };
    report.recovery.emplace();
    for (const auto& a : report.aggregates) {
        if (a.method == "rtn") continue;
        report.recovery->push_back({a.method, recover(rtn->mse, a.mse), recover(rtn->weighted_error, a.weighted_error),
                                    recover(rtn->output_mse, a.output_mse)});
    }
}

struct CompareConfig {
    AaacConfig aaac;  // format, g, S, iterations and scale mode for every method
    std::size_t threads = 1;
};

inline QuantizedLayer quantize_with(Method method, const LayerBundle& layer, const AaacConfig& cfg) {
    switch (method) {
        case Method::rtn: return rtn_quantize(layer.weights, cfg.format, cfg.g, cfg.scale_mode);
        case Method::if4: return if4_quantize(layer.weights, cfg.g, cfg.scale_mode);
        case Method::aaac: return learn(layer, cfg).layer;
    }
    throw ValidationError("unknown method");
}

/// Runs `fn(i)` for i in [0, count) on up to `threads` workers. The first
/// exception (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    std::vector<std::exception_ptr> errors(count);
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline std::vector<Method> parse_methods(const std::string& csv) {
    std::vector<Method> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto m = parse_method(item);
        if (!m) throw ValidationError("unknown method '" + item + "' (supported: rtn, if4, aaac)");
        if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
    }
    if (out.empty()) throw ValidationError("no methods given (supported: rtn, if4, aaac)");
    return out;
}

inline EvalReport compare(const std::vector<LayerBundle>& bundles, const std::vector<Method>& methods,
                          const CompareConfig& cfg) {
    cfg.aaac.validate();
    const std::size_t jobs = bundles.size() * methods.size();
    std::vector<LayerMetrics> rows(jobs);
    parallel_for(jobs, cfg.threads, [&](std::size_t i) {
        const LayerBundle& b = bundles[i / methods.size()];
        const Method method = methods[i % methods.size()];
        try {
            const QuantizedLayer q = quantize_with(method, b, cfg.aaac);
            rows[i] = measure_layer(b.name, method, b.weights, dequantize(q), b.activations,
                                    bits_per_weight(header_of(q, cfg.aaac.scale_mode)));
        } catch (const Error& e) {
            throw Error("layer '" + b.name + "' (" + std::string(to_string(method)) + "): " + e.what());
        }
    });
    EvalReport report;
    report.rows = std::move(rows);
    finalize_report(report);
    return report;
}

/// Metrics of a packed model against its source archive. Every packed layer
/// must have a source layer of the same name and shape. With `w4a8`, the
/// quantized side of the output error sees FP8-simulated activations.
inline EvalReport evaluate_packed(const PackedModel& model, const std::vector<LayerBundle>& bundles, bool w4a8,
                                  std::size_t threads = 1) {
    std::map<std::string, const LayerBundle*> by_name;
    for (const auto& b : bundles) by_name[b.name] = &b;
    std::vector<const LayerBundle*> sources;
    for (const auto& [name, p] : model.layers) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw PairingError(name, "packed layer has no source layer in the archive");
        if (it->second->weights.rows() != p.header.rows || it->second->weights.cols() != p.header.cols) {
            throw PairingError(name, "packed shape does not match the archive");
        }
        sources.push_back(it->second);
    }
    std::vector<LayerMetrics> rows(model.layers.size());
    parallel_for(rows.size(), threads, [&](std::size_t i) {
        const auto& [name, p] = model.layers[i];
        const LayerBundle& b = *sources[i];
        std::optional<ActivationMatrix> deploy;
        if (w4a8 && b.activations) deploy = simulate_w4a8(*b.activations);
        rows[i] = measure_layer(name, p.header.method, b.weights, dequantize(unpack(p)), b.activations,
                                bits_per_weight(p.header), deploy);
    });
    EvalReport report;
    report.rows = std::move(rows);
    finalize_report(report);
    return report;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9e", v);
    return buf;
}

inline std::string fmt_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline std::string fmt_short(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6e", *v);
    return buf;
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace detail

inline void write_csv(const EvalReport& r, std::ostream& os) {
    os << "method,layer,mse,weighted_error,output_mse,bpw,bpw_codes,bpw_scales,bpw_selection,bpw_codebooks\n";
    for (const auto& m : r.rows) {
        os << m.method << ',' << m.layer << ',' << detail::fmt_double(m.mse) << ','
           << detail::fmt_double(m.weighted_error) << ',' << (m.output_mse ? detail::fmt_double(*m.output_mse) : "")
           << ',' << detail::fmt_fixed(m.bpw.total(), 4) << ',' << detail::fmt_fixed(m.bpw.codes, 4) << ','
           << detail::fmt_fixed(m.bpw.scales, 4) << ',' << detail::fmt_fixed(m.bpw.selection, 4) << ','
           << detail::fmt_fixed(m.bpw.codebooks, 4) << '\n';
    }
}

inline void write_text(const EvalReport& r, std::ostream& os) {
    char line[256];
    std::snprintf(line, sizeof line, "%-6s %-24s %16s %16s %16s %8s\n", "method", "layer", "mse", "weighted_err",
                  "output_mse", "bpw");
    os << line;
    for (const auto& m : r.rows) {
        std::snprintf(line, sizeof line, "%-6s %-24s %16.6e %16.6e %16s %8.4f\n", m.method.c_str(), m.layer.c_str(),
                      m.mse, m.weighted_error, detail::fmt_short(m.output_mse).c_str(),
                      m.bpw.total());
        os << line;
    }
    os << "\nmean over layers\n";
    for (const auto& a : r.aggregates) {
        std::snprintf(line, sizeof line, "%-6s %-24s %16.6e %16.6e %16s %8.4f\n", a.method.c_str(),
                      ("(" + std::to_string(a.layers) + " layers)").c_str(), a.mse, a.weighted_error,
                      detail::fmt_short(a.output_mse).c_str(), a.bpw);
        os << line;
    }
    if (r.recovery) {
        os << "\ngap recovery vs rtn (%)\n";
        const auto pct = [](const std::optional<double>& v) { return v ? detail::fmt_fixed(*v, 1) : std::string("-"); };
        for (const auto& rec : *r.recovery) {
            std::snprintf(line, sizeof line, "%-6s mse %8s  weighted %8s  output %8s\n", rec.method.c_str(),
                          pct(rec.mse).c_str(), pct(rec.weighted_error).c_str(), pct(rec.output_mse).c_str());
            os << line;
        }
    }
}

inline nlohmann::json to_json(const EvalReport& r) {
    using nlohmann::json;
    json rows = json::array();
    for (const auto& m : r.rows) {
        rows.push_back({{"method", m.method},
                        {"layer", m.layer},
                        {"mse", m.mse},
                        {"weighted_error", m.weighted_error},
                        {"output_mse", detail::opt_json(m.output_mse)},
                        {"bpw",
                         {{"total", m.bpw.total()},
                          {"codes", m.bpw.codes},
                          {"scales", m.bpw.scales},
                          {"selection", m.bpw.selection},
                          {"codebooks", m.bpw.codebooks}}}});
    }
    json aggs = json::array();
    for (const auto& a : r.aggregates) {
        aggs.push_back({{"method", a.method},
                        {"layers", a.layers},
                        {"mse", a.mse},
                        {"weighted_error", a.weighted_error},
                        {"output_mse", detail::opt_json(a.output_mse)},
                        {"bpw", a.bpw}});
    }
    json out = {{"rows", rows}, {"aggregates", aggs}};
    if (r.recovery) {
        json rec = json::array();
        for (const auto& x : *r.recovery) {
            rec.push_back({{"method", x.method},
                           {"mse", detail::opt_json(x.mse)},
                           {"weighted_error", detail::opt_json(x.weighted_error)},
                           {"output_mse", detail::opt_json(x.output_mse)}});
        }
        out["recovery"] = rec;
    }
    return out;
}

}  // namespace aaac

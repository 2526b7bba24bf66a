// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `aaacq` tool. Argument parsing lives in
// tools/aaacq.cpp; everything here takes resolved options and writes results
// to files or the given streams. Timings and progress go to `log` only, so
// outputs depend on nothing but inputs and flags.

#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aaac/error.hpp"
#include "aaac/eval.hpp"
#include "aaac/learn.hpp"
#include "aaac/packfmt.hpp"
#include "aaac/quant_core.hpp"
#include "aaac/safetensors.hpp"
#include "aaac/tensor_io.hpp"

namespace aaac::cli {

enum class ReportFormat { text, csv, json };

inline std::optional<ReportFormat> parse_report_format(std::string_view s) {
    if (s == "text") return ReportFormat::text;
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    return std::nullopt;
}

/// `--threads` unless AAAC_THREADS is set; 0 means available parallelism.
inline std::size_t resolve_threads(std::size_t flag) {
    if (const char* env = std::getenv("AAAC_THREADS"); env && *env) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end && *end == '\0' && v > 0) return v;
        throw ValidationError("AAAC_THREADS must be a positive integer");
    }
    if (flag > 0) return flag;
    return std::max(1u, std::thread::hardware_concurrency());
}

inline void emit_report(const EvalReport& report, ReportFormat fmt, std::ostream& out) {
    switch (fmt) {
        case ReportFormat::text: write_text(report, out); break;
        case ReportFormat::csv: write_csv(report, out); break;
        case ReportFormat::json: out << to_json(report).dump(2) << '\n'; break;
    }
}

inline void emit_report(const EvalReport& report, ReportFormat fmt, const std::string& path, std::ostream& stdout_) {
    if (path.empty()) {
        emit_report(report, fmt, stdout_);
        return;
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ValidationError("cannot open '" + path + "' for writing");
    emit_report(report, fmt, f);
}

inline void ensure_readable(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read '" + path + "'");
}

inline void ensure_writable(const std::string& path) {
    if (path.empty()) throw ValidationError("an output path is required");
    std::ofstream f(path, std::ios::binary | std::ios::app);
    if (!f) throw ValidationError("cannot write '" + path + "'");
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    SynthSpec spec;
    std::size_t layers = 2;
    safetensors::Dtype dtype = safetensors::Dtype::f32;
    std::string out;
};

/// Seed of layer i in a multi-layer synthetic archive (splitmix64 of seed, i).
inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t i) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(i) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::vector<LayerBundle> synth_bundles(const SynthSpec& spec, std::size_t layers) {
    if (layers == 0) throw ValidationError("synth: --layers must be >= 1");
    std::vector<LayerBundle> out;
    for (std::size_t i = 0; i < layers; ++i) {
        SynthSpec s = spec;
        s.seed = layer_seed(spec.seed, i);
        char name[32];
        std::snprintf(name, sizeof name, "layer_%03zu", i);
        s.name = layers == 1 && !spec.name.empty() && spec.name != "layer" ? spec.name : name;
        out.push_back(synth_layer(s));
    }
    return out;
}

inline int cmd_synth(const SynthOptions& opt, std::ostream& log) {
    ensure_writable(opt.out);
    const auto bundles = synth_bundles(opt.spec, opt.layers);
    save_tensor_archive(opt.out, bundles, opt.dtype);
    log << "synth: wrote " << bundles.size() << " layer(s) (" << to_string(opt.spec.kind) << ", N=" << opt.spec.rows
        << ", K=" << opt.spec.cols << ", T=" << opt.spec.tokens << ") to " << opt.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeOptions {
    std::string archive;
    std::string out;
    Method method = Method::aaac;
    AaacConfig cfg = AaacConfig::for_format(FormatKind::nvfp4);
    std::size_t threads = 0;
};

inline int cmd_quantize(const QuantizeOptions& opt, std::ostream& log) {
    ensure_readable(opt.archive);
    ensure_writable(opt.out);
    opt.cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto bundles = load_tensor_archive(opt.archive);

    PackedModel model;
    model.layers.resize(bundles.size());
    std::vector<std::string> summaries(bundles.size());
    parallel_for(bundles.size(), resolve_threads(opt.threads), [&](std::size_t i) {
        const LayerBundle& b = bundles[i];
        try {
            std::ostringstream line;
            QuantizedLayer q;
            if (opt.method == Method::aaac) {
                AaacResult r = learn(b, opt.cfg);
                line << "objective " << r.static_table_objective << " (quantile init) -> " << r.pre_rounding_objective
                     << " (learned) -> " << r.final_objective << " (bf16 tables)";
                q = std::move(r.layer);
            } else {
                q = quantize_with(opt.method, b, opt.cfg);
            }
            const ImportanceVector imp =
                b.activations ? importance(*b.activations) : ImportanceVector::uniform(b.weights.cols());
            line << (line.tellp() > 0 ? ", " : "") << "weighted error " << weighted_error(b.weights, dequantize(q), imp);
            model.layers[i] = {b.name, pack(q, opt.cfg.scale_mode)};
            summaries[i] = line.str();
        } catch (const Error& e) {
            throw Error("layer '" + b.name + "': " + e.what());
        }
    });
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        log << "quantize [" << to_string(opt.method) << "] " << bundles[i].name << ": " << summaries[i] << '\n';
    }
    safetensors::write_file(opt.out, serialize(model));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << "quantize: " << bundles.size() << " layer(s) -> " << opt.out << " in " << secs << " s\n";
    return 0;
}

// ---------------------------------------------------------------------------
// dequantize

struct DequantizeOptions {
    std::string pack;
    std::string out;
    safetensors::Dtype dtype = safetensors::Dtype::f32;
};

inline PackedModel load_packed_model(const std::string& path) {
    return parse_packed_model(safetensors::read_file(path));
}

inline int cmd_dequantize(const DequantizeOptions& opt, std::ostream& log) {
    ensure_readable(opt.pack);
    ensure_writable(opt.out);
    const PackedModel model = load_packed_model(opt.pack);
    std::vector<LayerBundle> bundles;
    for (const auto& [name, p] : model.layers) bundles.emplace_back(name, dequantize(unpack(p)));
    save_tensor_archive(opt.out, bundles, opt.dtype);
    log << "dequantize: " << bundles.size() << " layer(s) -> " << opt.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// eval / compare

struct EvalOptions {
    std::string pack;
    std::string archive;
    bool w4a8 = false;
    ReportFormat format = ReportFormat::text;
    std::string out;  // stdout when empty
    std::size_t threads = 0;
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& log) {
    ensure_readable(opt.pack);
    ensure_readable(opt.archive);
    const auto start = std::chrono::steady_clock::now();
    const PackedModel model = load_packed_model(opt.pack);
    const auto bundles = load_tensor_archive(opt.archive);
    const EvalReport report = evaluate_packed(model, bundles, opt.w4a8, resolve_threads(opt.threads));
    emit_report(report, opt.format, opt.out, out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << "eval: " << report.rows.size() << " layer(s)" << (opt.w4a8 ? " with FP8 activations" : "") << " in "
        << secs << " s\n";
    return 0;
}

struct CompareOptions {
    std::string archive;  // synthesized from `synth` when empty
    SynthOptions synth;
    std::vector<Method> methods{Method::rtn, Method::if4, Method::aaac};
    AaacConfig cfg = AaacConfig::for_format(FormatKind::nvfp4);
    ReportFormat format = ReportFormat::text;
    std::string out;
    std::size_t threads = 0;
};

inline int cmd_compare(const CompareOptions& opt, std::ostream& out, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<LayerBundle> bundles;
    if (!opt.archive.empty()) {
        ensure_readable(opt.archive);
        bundles = load_tensor_archive(opt.archive);
    } else {
        bundles = synth_bundles(opt.synth.spec, opt.synth.layers);
    }
    const EvalReport report = compare(bundles, opt.methods, {opt.cfg, resolve_threads(opt.threads)});
    emit_report(report, opt.format, opt.out, out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << "compare: " << bundles.size() << " layer(s) x " << opt.methods.size() << " method(s) in " << secs << " s\n";
    return 0;
}

}  // namespace aaac::cli

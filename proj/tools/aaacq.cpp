// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// aaacq: synthesize layer archives, quantize them (RTN, IF4 or AAAC) into
// .aaacq packs, dequantize packs, and evaluate or compare methods.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aaac/cli.hpp"

namespace {

using namespace aaac;

struct ConfigFlags {
    std::string method = "aaac";
    std::string format = "nvfp4";
    std::optional<std::size_t> g;
    std::optional<std::size_t> S;
    std::size_t iters_outer = 3;
    std::size_t iters_inner = 10;
    std::string scale_mode = "exact-bf16";

    void add(CLI::App* app, bool with_method) {
        if (with_method) app->add_option("--method", method, "rtn | if4 | aaac")->capture_default_str();
        app->add_option("--format", format, "base format: nvfp4 | int4")->capture_default_str();
        app->add_option("-g,--group", g, "scale group size (default 16 for nvfp4, 128 for int4)");
        app->add_option("-S,--select", S, "selection group size (default: g)");
        app->add_option("--iters-outer", iters_outer, "outer (assignment) iterations")->capture_default_str();
        app->add_option("--iters-inner", iters_inner, "inner k-means iterations")->capture_default_str();
        app->add_option("--scale-mode", scale_mode, "exact-bf16 | emulate-e4m3")->capture_default_str();
    }

    AaacConfig resolve() const {
        const auto f = parse_format(format);
        if (!f) throw ValidationError("unknown format '" + format + "' (supported: nvfp4, int4)");
        const auto mode = parse_scale_mode(scale_mode);
        if (!mode) throw ValidationError("unknown scale mode '" + scale_mode + "' (supported: exact-bf16, emulate-e4m3)");
        AaacConfig cfg = AaacConfig::for_format(*f);
        if (g) cfg.g = *g;
        cfg.S = S ? *S : cfg.g;
        cfg.n_outer = iters_outer;
        cfg.n_inner = iters_inner;
        cfg.scale_mode = *mode;
        cfg.validate();
        return cfg;
    }

    Method resolve_method() const {
        const auto m = parse_method(method);
        if (!m) throw ValidationError("unknown method '" + method + "' (supported: rtn, if4, aaac)");
        return *m;
    }
};

struct SynthFlags {
    std::string kind = "mixture";
    std::size_t rows = 64, cols = 256, tokens = 64, layers = 2;
    std::uint64_t seed = 0;
    double scale = 1.0;
    std::vector<double> mix_p{0.5, 0.5};
    std::vector<double> mix_sigma{1.0, 5.0};
    std::string config;

    void add(CLI::App* app) {
        app->add_option("--kind", kind, "gaussian | laplace | mixture")->capture_default_str();
        app->add_option("-N,--rows", rows, "output features per layer")->capture_default_str();
        app->add_option("-K,--cols", cols, "input features per layer")->capture_default_str();
        app->add_option("-T,--tokens", tokens, "calibration tokens per layer")->capture_default_str();
        app->add_option("--layers", layers, "number of layers")->capture_default_str();
        app->add_option("--seed", seed, "random seed")->capture_default_str();
        app->add_option("--scale", scale, "gaussian std-dev / laplace diversity")->capture_default_str();
        app->add_option("--mix-p", mix_p, "mixture component weights")->delimiter(',');
        app->add_option("--mix-sigma", mix_sigma, "mixture component std-devs")->delimiter(',');
        app->add_option("--config", config, "JSON synth config (keys kind,N,K,T,seed,scale,p,sigmas)");
    }

    cli::SynthOptions resolve() const {
        cli::SynthOptions o;
        if (!config.empty()) {
            std::ifstream f(config);
            if (!f) throw ValidationError("cannot read synth config '" + config + "'");
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(f);
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError(std::string("synth config: ") + e.what());
            }
            o.spec = synth_spec_from_json(j);
            if (j.contains("layers")) o.layers = j["layers"].get<std::size_t>();
            else o.layers = layers;
            return o;
        }
        const auto k = parse_distribution(kind);
        if (!k) throw ValidationError("unknown distribution '" + kind + "' (supported: gaussian, laplace, mixture)");
        o.spec.kind = *k;
        o.spec.rows = rows;
        o.spec.cols = cols;
        o.spec.tokens = tokens;
        o.spec.seed = seed;
        o.spec.scale = scale;
        o.spec.mixture_weights = mix_p;
        o.spec.mixture_sigmas = mix_sigma;
        o.spec.validate();
        o.layers = layers;
        return o;
    }
};

safetensors::Dtype parse_dtype_flag(const std::string& s) {
    if (s == "f32") return safetensors::Dtype::f32;
    if (s == "f16") return safetensors::Dtype::f16;
    if (s == "bf16") return safetensors::Dtype::bf16;
    throw ValidationError("unknown dtype '" + s + "' (supported: f32, f16, bf16)");
}

struct ReportFlags {
    bool json = false;
    bool csv = false;
    std::string out;

    void add(CLI::App* app) {
        app->add_flag("--json", json, "emit the full report as JSON");
        app->add_flag("--csv", csv, "emit one CSV row per layer x method");
        app->add_option("-o,--out", out, "write the report here instead of stdout");
    }

    cli::ReportFormat format() const {
        return json ? cli::ReportFormat::json : csv ? cli::ReportFormat::csv : cli::ReportFormat::text;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aaacq: activation-aware adaptive-codebook 4-bit weight quantization"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic layer archive (safetensors)");
    SynthFlags synth_flags;
    synth_flags.add(synth);
    std::string synth_out, synth_dtype = "f32";
    synth->add_option("-o,--out", synth_out, "output .safetensors path")->required();
    synth->add_option("--dtype", synth_dtype, "f32 | f16 | bf16")->capture_default_str();

    // quantize
    auto* quantize = app.add_subcommand("quantize", "quantize every layer of an archive into an .aaacq pack");
    ConfigFlags quant_flags;
    quant_flags.add(quantize, true);
    std::string quant_in, quant_out;
    std::size_t quant_threads = 0;
    quantize->add_option("archive", quant_in, "input .safetensors archive")->required();
    quantize->add_option("-o,--out", quant_out, "output .aaacq path")->required();
    quantize->add_option("--threads", quant_threads, "worker threads (0 = all cores; AAAC_THREADS overrides)");

    // dequantize
    auto* dequant = app.add_subcommand("dequantize", "expand an .aaacq pack into f32 weights (safetensors)");
    std::string deq_in, deq_out, deq_dtype = "f32";
    dequant->add_option("pack", deq_in, "input .aaacq pack")->required();
    dequant->add_option("-o,--out", deq_out, "output .safetensors path")->required();
    dequant->add_option("--dtype", deq_dtype, "f32 | f16 | bf16")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "measure a pack against its source archive");
    std::string eval_pack, eval_archive;
    bool eval_w4a8 = false;
    std::size_t eval_threads = 0;
    ReportFlags eval_report;
    eval->add_option("pack", eval_pack, ".aaacq pack")->required();
    eval->add_option("archive", eval_archive, "source .safetensors archive")->required();
    eval->add_flag("--w4a8", eval_w4a8, "simulate per-tensor FP8 (E4M3) activations");
    eval->add_option("--threads", eval_threads, "worker threads (0 = all cores; AAAC_THREADS overrides)");
    eval_report.add(eval);

    // compare
    auto* cmp = app.add_subcommand("compare", "quantize with several methods and compare errors");
    ConfigFlags cmp_flags;
    cmp_flags.add(cmp, false);
    SynthFlags cmp_synth;
    cmp_synth.add(cmp);
    std::string cmp_archive, cmp_methods = "rtn,if4,aaac";
    std::size_t cmp_threads = 0;
    ReportFlags cmp_report;
    cmp->add_option("--archive", cmp_archive, "input archive (default: synthesize from the synth flags)");
    cmp->add_option("--methods", cmp_methods, "comma-separated subset of rtn,if4,aaac")->capture_default_str();
    cmp->add_option("--threads", cmp_threads, "worker threads (0 = all cores; AAAC_THREADS overrides)");
    cmp_report.add(cmp);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            cli::SynthOptions opt = synth_flags.resolve();
            opt.out = synth_out;
            opt.dtype = parse_dtype_flag(synth_dtype);
            return cli::cmd_synth(opt, std::cerr);
        }
        if (quantize->parsed()) {
            cli::QuantizeOptions opt;
            opt.archive = quant_in;
            opt.out = quant_out;
            opt.method = quant_flags.resolve_method();
            opt.cfg = quant_flags.resolve();
            opt.threads = quant_threads;
            return cli::cmd_quantize(opt, std::cerr);
        }
        if (dequant->parsed()) {
            return cli::cmd_dequantize({deq_in, deq_out, parse_dtype_flag(deq_dtype)}, std::cerr);
        }
        if (eval->parsed()) {
            cli::EvalOptions opt{eval_pack, eval_archive, eval_w4a8, eval_report.format(), eval_report.out, eval_threads};
            return cli::cmd_eval(opt, std::cout, std::cerr);
        }
        if (cmp->parsed()) {
            cli::CompareOptions opt;
            opt.archive = cmp_archive;
            opt.methods = parse_methods(cmp_methods);
            opt.cfg = cmp_flags.resolve();
            if (cmp_archive.empty()) opt.synth = cmp_synth.resolve();
            opt.format = cmp_report.format();
            opt.out = cmp_report.out;
            opt.threads = cmp_threads;
            return cli::cmd_compare(opt, std::cout, std::cerr);
        }
    } catch (const aaac::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Layer archives and synthetic calibration data.
//
// An archive is a safetensors file in which `<layer>.weight` holds the N x K
// weight matrix and the optional `<layer>.calib` holds calibration inputs of
// width K. Leading dimensions of a calib tensor are collapsed into tokens.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aaac/error.hpp"
#include "aaac/safetensors.hpp"
#include "aaac/tensor.hpp"

namespace aaac {

inline constexpr std::string_view kWeightSuffix = ".weight";
inline constexpr std::string_view kCalibSuffix = ".calib";

namespace detail {

inline bool strip_suffix(std::string_view name, std::string_view suffix, std::string& stem) {
    if (name.size() <= suffix.size() || name.substr(name.size() - suffix.size()) != suffix) return false;
    stem = std::string(name.substr(0, name.size() - suffix.size()));
    return true;
}

}  // namespace detail

/// Pairs `.weight`/`.calib` tensors into bundles, ordered by layer name.
/// Tensors with other suffixes are ignored.
inline std::vector<LayerBundle> bundles_from_tensors(std::vector<safetensors::Tensor> tensors) {
    std::map<std::string, safetensors::Tensor> weights;
    std::map<std::string, safetensors::Tensor> calibs;
    for (auto& t : tensors) {
        std::string stem;
        if (detail::strip_suffix(t.name, kWeightSuffix, stem)) {
            if (t.shape.size() != 2) {
                throw ValidationError("tensor '" + t.name + "' must be 2-D, got rank " + std::to_string(t.shape.size()));
            }
            weights.emplace(stem, std::move(t));
        } else if (detail::strip_suffix(t.name, kCalibSuffix, stem)) {
            if (t.shape.size() < 2) {
                throw ValidationError("tensor '" + t.name + "' must have rank >= 2, got " + std::to_string(t.shape.size()));
            }
            calibs.emplace(stem, std::move(t));
        }
    }
    for (const auto& [stem, _] : calibs) {
        if (!weights.contains(stem)) throw PairingError(stem, "calibration tensor has no matching weight");
    }

    std::vector<LayerBundle> out;
    for (auto& [stem, w] : weights) {
        try {
            WeightMatrix wm(w.shape[0], w.shape[1], std::move(w.values));
            std::optional<ActivationMatrix> x;
            if (auto it = calibs.find(stem); it != calibs.end()) {
                const auto& shape = it->second.shape;
                const std::size_t k = shape.back();
                if (k != wm.cols()) {
                    throw PairingError(stem, "calib width " + std::to_string(k) + " != weight width " +
                                                 std::to_string(wm.cols()));
                }
                x.emplace(it->second.numel() / k, k, std::move(it->second.values));
            }
            out.emplace_back(stem, std::move(wm), std::move(x));
        } catch (const ValidationError& e) {
            throw ValidationError("layer '" + stem + "': " + e.what());
        }
    }
    return out;
}

inline std::vector<LayerBundle> parse_tensor_archive(std::span<const std::uint8_t> bytes) {
    return bundles_from_tensors(safetensors::parse(bytes));
}

inline std::vector<LayerBundle> load_tensor_archive(const std::string& path) {
    const auto bytes = safetensors::read_file(path);
    return parse_tensor_archive(bytes);
}

inline std::vector<std::uint8_t> serialize_tensor_archive(std::span<const LayerBundle> bundles,
                                                          safetensors::Dtype dtype = safetensors::Dtype::f32) {
    std::vector<safetensors::Tensor> tensors;
    for (const auto& b : bundles) {
        const auto& w = b.weights;
        tensors.push_back({b.name + std::string(kWeightSuffix), dtype, {w.rows(), w.cols()},
                           {w.data().begin(), w.data().end()}});
        if (b.activations) {
            const auto& x = *b.activations;
            tensors.push_back({b.name + std::string(kCalibSuffix), dtype, {x.rows(), x.cols()},
                               {x.data().begin(), x.data().end()}});
        }
    }
    return safetensors::serialize(tensors);
}

inline void save_tensor_archive(const std::string& path, std::span<const LayerBundle> bundles,
                                safetensors::Dtype dtype = safetensors::Dtype::f32) {
    safetensors::write_file(path, serialize_tensor_archive(bundles, dtype));
}

// ---------------------------------------------------------------------------
// Synthetic layers

enum class Distribution { gaussian, laplace, mixture };

inline std::string_view to_string(Distribution d) noexcept {
    switch (d) {
        case Distribution::gaussian: return "gaussian";
        case Distribution::laplace: return "laplace";
        case Distribution::mixture: return "mixture";
    }
    return "?";
}

inline std::optional<Distribution> parse_distribution(std::string_view s) noexcept {
    if (s == "gaussian") return Distribution::gaussian;
    if (s == "laplace") return Distribution::laplace;
    if (s == "mixture") return Distribution::mixture;
    return std::nullopt;
}

struct SynthSpec {
    Distribution kind = Distribution::gaussian;
    std::size_t rows = 64;    // N
    std::size_t cols = 256;   // K
    std::size_t tokens = 64;  // T
    std::uint64_t seed = 0;
    double scale = 1.0;  // gaussian std-dev or laplace diversity b
    std::vector<double> mixture_weights{0.5, 0.5};
    std::vector<double> mixture_sigmas{1.0, 5.0};
    std::string name = "layer";

    void validate() const {
        if (rows == 0 || cols == 0 || tokens == 0) throw ValidationError("synth: N, K and T must all be >= 1");
        if (!(scale > 0.0) || !std::isfinite(scale)) throw ValidationError("synth: scale must be positive");
        if (kind != Distribution::mixture) return;
        if (mixture_weights.empty() || mixture_weights.size() != mixture_sigmas.size()) {
            throw ValidationError("synth: mixture weights and sigmas must be non-empty and equally long");
        }
        double total = 0.0;
        for (double p : mixture_weights) {
            if (!(p >= 0.0)) throw ValidationError("synth: mixture weights must be non-negative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-6) throw ValidationError("synth: mixture weights must sum to 1");
        for (double s : mixture_sigmas) {
            if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("synth: mixture sigmas must be positive");
        }
    }
};

/// Reads a synth spec from JSON: {"kind","N","K","T","seed","scale","p","sigmas","name"};
/// absent keys keep their defaults.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec spec;
    try {
        if (j.contains("kind")) {
            auto kind = parse_distribution(j.at("kind").get<std::string>());
            if (!kind) throw ValidationError("synth: unknown distribution kind");
            spec.kind = *kind;
        }
        if (j.contains("N")) spec.rows = j.at("N").get<std::size_t>();
        if (j.contains("K")) spec.cols = j.at("K").get<std::size_t>();
        if (j.contains("T")) spec.tokens = j.at("T").get<std::size_t>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("scale")) spec.scale = j.at("scale").get<double>();
        if (j.contains("p")) spec.mixture_weights = j.at("p").get<std::vector<double>>();
        if (j.contains("sigmas")) spec.mixture_sigmas = j.at("sigmas").get<std::vector<double>>();
        if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("synth config: ") + e.what());
    }
    spec.validate();
    return spec;
}

namespace detail {

// Samplers are written against raw 64-bit engine output so that a seed yields
// the same bytes with every standard library.
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double laplace(double b) {
        const double u = uniform() - 0.5;
        return -b * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace detail

/// Deterministic synthetic layer. Activation column k is N(0, v_k) with v_k
/// log-uniform in [0.1, 10], which makes per-column importance non-uniform.
inline LayerBundle synth_layer(const SynthSpec& spec) {
    spec.validate();
    detail::SynthRng rng(spec.seed);

    std::vector<float> w(spec.rows * spec.cols);
    for (float& v : w) {
        double x = 0.0;
        switch (spec.kind) {
            case Distribution::gaussian: x = spec.scale * rng.normal(); break;
            case Distribution::laplace: x = rng.laplace(spec.scale); break;
            case Distribution::mixture: {
                double u = rng.uniform();
                std::size_t c = 0;
                while (c + 1 < spec.mixture_weights.size() && u >= spec.mixture_weights[c]) {
                    u -= spec.mixture_weights[c];
                    ++c;
                }
                x = spec.mixture_sigmas[c] * rng.normal();
                break;
            }
        }
        v = static_cast<float>(x);
    }

    std::vector<double> col_std(spec.cols);
    for (double& s : col_std) s = std::sqrt(std::pow(10.0, 2.0 * rng.uniform() - 1.0));
    std::vector<float> x(spec.tokens * spec.cols);
    for (std::size_t t = 0; t < spec.tokens; ++t) {
        for (std::size_t k = 0; k < spec.cols; ++k) {
            x[t * spec.cols + k] = static_cast<float>(col_std[k] * rng.normal());
        }
    }
    return LayerBundle(spec.name, WeightMatrix(spec.rows, spec.cols, std::move(w)),
                       ActivationMatrix(spec.tokens, spec.cols, std::move(x)));
}

}  // namespace aaac

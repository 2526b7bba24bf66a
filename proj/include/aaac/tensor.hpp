// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aaac/error.hpp"

namespace aaac {

struct WeightTag {};
struct ActivationTag {};

// Dense row-major float32 matrix. The tag keeps weights (N x K) and
// calibration activations (T x K) from being swapped by accident.
template <typename Tag>
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows_ == 0 || cols_ == 0) {
            throw ValidationError("matrix must have at least one row and one column");
        }
        if (data_.size() != rows_ * cols_) {
            throw ValidationError("matrix data size " + std::to_string(data_.size()) +
                                  " does not match shape " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
        }
        for (float v : data_) {
            if (!std::isfinite(v)) throw ValidationError("matrix contains a non-finite value");
        }
    }

    // Zero-filled.
    DenseMatrix(std::size_t rows, std::size_t cols)
        : DenseMatrix(rows, cols, std::vector<float>(rows * cols, 0.0f)) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

    std::span<const float> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// W in R^{N x K}: rows are output features, columns input features.
using WeightMatrix = DenseMatrix<WeightTag>;
/// X in R^{T x K}: one row per calibration token.
using ActivationMatrix = DenseMatrix<ActivationTag>;

struct LayerBundle {
    std::string name;
    WeightMatrix weights;
    std::optional<ActivationMatrix> activations;

    LayerBundle() = default;
    LayerBundle(std::string n, WeightMatrix w, std::optional<ActivationMatrix> x = std::nullopt)
        : name(std::move(n)), weights(std::move(w)), activations(std::move(x)) {
        if (activations && activations->cols() != weights.cols()) {
            throw PairingError(name, "activation width " + std::to_string(activations->cols()) +
                                         " != weight width " + std::to_string(weights.cols()));
        }
    }

    friend bool operator==(const LayerBundle&, const LayerBundle&) = default;
};

}  // namespace aaac

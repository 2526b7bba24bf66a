// Copyright (c) 2026, The AAAC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "aaac/error.hpp"

namespace aaac {

inline constexpr std::size_t kMaxCodebookEntries = 16;

// Scalar reconstruction table in normalized units. Entries are non-decreasing;
// duplicates are legal (BF16 rounding of learned tables can merge entries).
class Codebook {
public:
    Codebook() = default;

    explicit Codebook(std::vector<float> entries) : entries_(std::move(entries)) { validate(); }
    Codebook(std::initializer_list<float> entries) : entries_(entries) { validate(); }

    std::size_t size() const noexcept { return entries_.size(); }
    float operator[](std::size_t i) const noexcept { return entries_[i]; }
    std::span<const float> entries() const noexcept { return entries_; }
    float front() const noexcept { return entries_.front(); }
    float back() const noexcept { return entries_.back(); }

    friend bool operator==(const Codebook&, const Codebook&) = default;

private:
    void validate() const {
        if (entries_.empty() || entries_.size() > kMaxCodebookEntries) {
            throw ValidationError("codebook must have 1.." + std::to_string(kMaxCodebookEntries) +
                                  " entries, got " + std::to_string(entries_.size()));
        }
        for (float v : entries_) {
            if (!std::isfinite(v)) throw ValidationError("codebook entry is not finite");
        }
        if (!std::is_sorted(entries_.begin(), entries_.end())) {
            throw ValidationError("codebook entries must be non-decreasing");
        }
    }

    std::vector<float> entries_;
};

}  // namespace aaac

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fuselave/seq_layout.hpp"

namespace fuselave {

// Block-interval attention mask: per query, the sorted disjoint half-open
// ranges of permitted key indices. The dense form expands to exactly the
// same pairs.
struct AttentionMask {
    int length = 0;
    std::vector<std::vector<std::pair<int, int>>> intervals;

    bool allowed(int q, int k) const {
        for (const auto& [s, e] : intervals[q])
            if (k >= s && k < e) return true;
        return false;
    }

    std::vector<uint8_t> dense() const {
        std::vector<uint8_t> d(static_cast<size_t>(length) * length, 0);
        for (int q = 0; q < length; ++q)
            for (const auto& [s, e] : intervals[q])
                for (int k = s; k < e; ++k) d[static_cast<size_t>(q) * length + k] = 1;
        return d;
    }

    long pair_count() const {
        long n = 0;
        for (const auto& row : intervals)
            for (const auto& [s, e] : row) n += e - s;
        return n;
    }
};

struct MaskRules {
    // Table-6 ablation arm: lets text queries attend clean VAE tokens of
    // earlier images (used when the ViT branch is disabled).
    bool text_sees_clean_vae = false;
};

// Attention policy, evaluated per (query, key) pair. Both tokens must share
// a sample. Text rows are token-causal (self included); within-image blocks
// are bidirectional; noisy queries see strictly earlier context plus their
// own block and nothing of their own image's clean copies.
bool pair_allowed(const TokenMeta& q, int q_idx, const TokenMeta& k, int k_idx,
                  const MaskRules& rules = {});

// Block-structured mask construction (the production path).
AttentionMask build_mask(const std::vector<TokenMeta>& metas, const MaskRules& rules = {});

// Per-pair brute force over the same policy; test oracle only.
AttentionMask oracle_mask(const std::vector<TokenMeta>& metas, const MaskRules& rules = {});

}  // namespace fuselave

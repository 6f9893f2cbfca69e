// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fuselave/ectf_mask.hpp"
#include "fuselave/seq_layout.hpp"

namespace fuselave {

// One entry of a layout description: a text run or an image grid.
struct LayoutDescItem {
    bool is_image = false;
    int count = 0;  // text token count
    int grid_h = 0;
    int grid_w = 0;
};

// "t3,i2x2,t2,i4x4" -> items. Counts must be positive.
std::vector<LayoutDescItem> parse_layout_desc(const std::string& desc);

// Metas in training layout order (text runs; images expand to vs, ViT block,
// VAE block, ve, and a noisy block when requested), with position IDs
// assigned. No payloads; mask tooling and pair counting only.
std::vector<TokenMeta> synthetic_layout_metas(const std::vector<LayoutDescItem>& items, bool ectf,
                                              bool dual_encoder = true);

struct BenchRow {
    int n_text = 0;
    int images = 0;   // T
    int grid = 0;     // g tokens per image
    long ectf_tokens = 0;
    long ectf_pairs = 0;
    long baseline_tokens = 0;  // summed over the T prefix passes
    long baseline_pairs = 0;
    double pair_ratio = 0.0;  // baseline / ECTF
};

// Attention-pair accounting: one ECTF pass versus the last-image-supervised
// baseline that reruns a growing prefix once per image.
BenchRow bench_ectf_case(int n_text, int images, int grid_tokens);
std::vector<BenchRow> bench_ectf(const std::vector<int>& image_counts,
                                 const std::vector<int>& grid_sizes, int n_text);

std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace fuselave

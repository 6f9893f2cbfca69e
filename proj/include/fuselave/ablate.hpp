// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fuselave/evaluate.hpp"
#include "fuselave/train.hpp"

namespace fuselave {

// One experiment arm over the three ablation axes.
struct AblateArm {
    std::string name;
    RopeScheme rope = RopeScheme::ILRoPE;
    bool dual_branch = true;   // deep-fusion vs shared parameters
    bool dual_encoder = true;  // VAE+ViT vs VAE-only (VAE visible to text)
};

// The four reference arms: A = MRoPE/shared/VAE-only through D = full stack.
std::vector<AblateArm> default_ablation_grid();

struct AblateRow {
    std::string name;
    double final_flow_smoothed = 0.0;  // mean flow loss over the last window
    double final_ntp_smoothed = 0.0;
    double i2t_exact = 0.0;
    double t2i_full = 0.0;
    uint64_t corpus_hash = 0;
};

// Runs every arm at a fixed budget on a shared corpus and reports final
// smoothed losses plus eval metrics per arm.
std::vector<AblateRow> ablate(const std::vector<AblateArm>& arms, const ModelConfig& base_model,
                              const TrainConfig& budget, const LayoutConfig& base_layout,
                              const std::vector<InterleavedSample>& train_records,
                              const std::vector<InterleavedSample>& eval_records,
                              const EvalConfig& ecfg, const CheckpointExtra& extra,
                              uint64_t corpus_hash);

std::string ablate_table(const std::vector<AblateRow>& rows);

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fuselave/bench.hpp"
#include "fuselave/checkpoint.hpp"
#include "fuselave/corpus.hpp"
#include "fuselave/sampler.hpp"

namespace fuselave {

struct EvalConfig {
    int n_per_task = 100;  // cap per task
    uint64_t seed = 99;
    CfgParams cfg;
    OdeConfig ode;
    MaskRules mask_rules;
    bool quiet = false;
};

struct EvalReport {
    // text-to-image, classified by the pixel oracle
    int n_t2i = 0;
    double t2i_full = 0.0;
    double t2i_shape = 0.0;
    double t2i_color = 0.0;
    double t2i_cell = 0.0;
    // image-to-text
    int n_i2t = 0;
    double i2t_exact = 0.0;
    double i2t_token_acc = 0.0;
    // instructed editing
    int n_edit = 0;
    double edit_consistency = 0.0;
    // losses on the eval split at this checkpoint
    double eval_ntp_loss = 0.0;
    double eval_flow_loss = 0.0;
    // efficiency accounting table
    std::vector<BenchRow> ectf_bench;
};

EvalReport evaluate(FusionModelParams& params, const std::vector<InterleavedSample>& eval_records,
                    const LayoutConfig& lcfg, const ToyVae& vae, const ToyViT& vit,
                    const CheckpointExtra& extra, const EvalConfig& ecfg);

std::string report_json(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace fuselave

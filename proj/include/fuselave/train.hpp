// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fuselave/checkpoint.hpp"
#include "fuselave/corpus.hpp"
#include "fuselave/fusion_net.hpp"
#include "fuselave/objective.hpp"

namespace fuselave {

struct MetricRow {
    int step = 0;
    double ntp_loss = 0.0;
    double flow_loss = 0.0;
    double combined = 0.0;
    double lr = 0.0;
    long tokens_text = 0;
    long tokens_flow = 0;
};

struct TrainConfig {
    uint64_t seed = 7;
    int steps = 1500;
    int warmup = 100;
    double lr = 2e-3;
    double lr_min_frac = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    double lambda_ntp = 1.0;  // text-loss weight in the combined objective
    int batch_tokens = 512;
    int max_len = 256;
    int shards = 1;  // simulated data-parallel rank count
    bool ectf = true;
    // per-step task sampling probabilities
    double mix_t2i = 0.4;
    double mix_i2t = 0.2;
    double mix_edit = 0.3;
    double mix_text = 0.1;
    // condition dropout for guidance training (image-target tasks)
    double p_drop_empty = 0.1;
    double p_drop_image_only = 0.1;
    int log_every = 25;
    int ckpt_every = 0;   // 0: final checkpoint only
    std::string out_dir;  // empty: nothing written to disk
    MaskRules mask_rules;
    bool quiet = false;
};

struct TrainResult {
    std::unique_ptr<FusionModelParams> params;
    std::vector<MetricRow> metrics;
    std::string final_ckpt;  // empty when out_dir is empty
};

// Adam with warmup+cosine schedule over the combined NTP+flow objective,
// globally normalized across the simulated shards (Proxy reduction, whose
// gradient equals the ideal global-batch gradient).
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const LayoutConfig& lcfg,
                  const std::vector<InterleavedSample>& records, const ToyVae& vae,
                  const ToyViT& vit, const CheckpointExtra& extra);

// Flow-path pretest: fits the velocity field of an 8-mode 2D Gaussian
// mixture (each point a one-token image) and measures how many Euler-
// integrated samples land within 3 sigma of a mode center.
struct ToyFlowResult {
    double hit_rate = 0.0;
    int n_samples = 0;
    double sigma = 0.0;
};
ToyFlowResult toy_flow_pretest(uint64_t seed, int train_steps = 1200, int n_eval = 2000,
                               int ode_steps = 50);

}  // namespace fuselave

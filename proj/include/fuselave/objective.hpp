// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fuselave/common.hpp"
#include "fuselave/tensor.hpp"

namespace fuselave {

enum class TimestepDist { Uniform, LogitNormal };

// One flow timestep. Uniform on [0,1) by default; logit-normal is the
// alternative distribution used in related flow-matching setups.
double sample_timestep(Rng& rng, TimestepDist dist = TimestepDist::Uniform);

// x_t = t*x + (1-t)*eps, elementwise. t must lie in [0,1].
std::vector<double> flow_forward(const std::vector<double>& x,
                                 const std::vector<double>& eps, double t);

// Weighted mean over tokens of the squared L2 distance between predicted and
// target velocity rows. Zero exactly when v_pred equals x - eps.
double flow_loss(const Tensor& v_pred, const Tensor& x, const Tensor& eps,
                 const std::vector<double>& weights);

// Weighted mean cross-entropy over rows of `logits` against `targets`.
// Rows with weight 0 contribute nothing.
double ntp_loss(const Tensor& logits, const std::vector<int>& targets,
                const std::vector<double>& weights);

// lambda * ntp + flow.
double combined_loss(double ntp, double flow, double lambda);

struct RankShard {
    int rank = 0;
    std::vector<double> losses;
    std::vector<double> weights;
};

enum class ReduceMode { Ideal, PerRank, Proxy };

struct ReducedLoss {
    double value = 0.0;
    // dvalue/dL_i per shard, aligned with shard token order. This is what the
    // optimizer chains through; Proxy's coefficients equal Ideal's gradient.
    std::vector<std::vector<double>> dloss;
};

// Global-batch loss reduction across simulated ranks.
//   Ideal:   sum_n sum_i w*L / sum_n sum_i w
//   PerRank: (1/N) sum_n (sum_i w*L / sum_i w)          (biased)
//   Proxy:   (1/N) sum_n (sum_i w*L / ((1/N) sum_m sum_i w))
ReducedLoss reduce_global(const std::vector<RankShard>& shards, ReduceMode mode);

}  // namespace fuselave

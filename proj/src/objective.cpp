// SPDX-License-Identifier: Apache-2.0
#include "fuselave/objective.hpp"

#include <cmath>

namespace fuselave {

double sample_timestep(Rng& rng, TimestepDist dist) {
    if (dist == TimestepDist::Uniform) return rng.uniform();
    const double z = rng.normal();
    return 1.0 / (1.0 + std::exp(-z));
}

std::vector<double> flow_forward(const std::vector<double>& x,
                                 const std::vector<double>& eps, double t) {
    check(x.size() == eps.size(), "flow_forward: shape mismatch");
    check(t >= 0.0 && t <= 1.0, "flow_forward: t outside [0,1]");
    std::vector<double> xt(x.size());
    for (size_t i = 0; i < x.size(); ++i) xt[i] = t * x[i] + (1.0 - t) * eps[i];
    return xt;
}

double flow_loss(const Tensor& v_pred, const Tensor& x, const Tensor& eps,
                 const std::vector<double>& weights) {
    check(v_pred.rows == x.rows && v_pred.cols == x.cols, "flow_loss: shape mismatch");
    check(x.rows == eps.rows && x.cols == eps.cols, "flow_loss: shape mismatch");
    check(static_cast<size_t>(v_pred.rows) == weights.size(), "flow_loss: weight count mismatch");
    double wsum = 0.0, acc = 0.0;
    for (int i = 0; i < v_pred.rows; ++i) {
        if (weights[i] == 0.0) continue;
        const double* vp = v_pred.row(i);
        const double* xr = x.row(i);
        const double* er = eps.row(i);
        double sq = 0.0;
        for (int c = 0; c < v_pred.cols; ++c) {
            const double d = vp[c] - (xr[c] - er[c]);
            sq += d * d;
        }
        acc += weights[i] * sq;
        wsum += weights[i];
    }
    check(wsum > 0.0, "flow_loss: empty supervised set with nonzero flow weight");
    return acc / wsum;
}

double ntp_loss(const Tensor& logits, const std::vector<int>& targets,
                const std::vector<double>& weights) {
    check(static_cast<size_t>(logits.rows) == targets.size(), "ntp_loss: target count mismatch");
    check(targets.size() == weights.size(), "ntp_loss: weight count mismatch");
    double wsum = 0.0, acc = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        if (weights[i] == 0.0) continue;
        check(targets[i] >= 0 && targets[i] < logits.cols, "ntp_loss: target out of vocab");
        const double* z = logits.row(i);
        double mx = z[0];
        for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, z[c]);
        double lse = 0.0;
        for (int c = 0; c < logits.cols; ++c) lse += std::exp(z[c] - mx);
        acc += weights[i] * (std::log(lse) + mx - z[targets[i]]);
        wsum += weights[i];
    }
    check(wsum > 0.0, "ntp_loss: no supervised positions");
    return acc / wsum;
}

double combined_loss(double ntp, double flow, double lambda) {
    check(std::isfinite(ntp) && std::isfinite(flow), "combined_loss: non-finite component");
    return lambda * ntp + flow;
}

ReducedLoss reduce_global(const std::vector<RankShard>& shards, ReduceMode mode) {
    check(!shards.empty(), "reduce_global: need at least one shard");
    const int n_ranks = static_cast<int>(shards.size());
    double total_w = 0.0;
    for (const auto& s : shards) {
        check(s.losses.size() == s.weights.size(), "reduce_global: shard loss/weight mismatch");
        for (double w : s.weights) total_w += w;
    }
    check(total_w > 0.0, "reduce_global: all-zero weights");

    ReducedLoss out;
    out.dloss.resize(shards.size());
    for (size_t n = 0; n < shards.size(); ++n) out.dloss[n].assign(shards[n].losses.size(), 0.0);

    if (mode == ReduceMode::Ideal) {
        double num = 0.0;
        for (const auto& s : shards)
            for (size_t i = 0; i < s.losses.size(); ++i) num += s.weights[i] * s.losses[i];
        out.value = num / total_w;
        for (size_t n = 0; n < shards.size(); ++n)
            for (size_t i = 0; i < shards[n].losses.size(); ++i)
                out.dloss[n][i] = shards[n].weights[i] / total_w;
        return out;
    }

    if (mode == ReduceMode::PerRank) {
        double acc = 0.0;
        for (size_t n = 0; n < shards.size(); ++n) {
            const auto& s = shards[n];
            double wn = 0.0, num = 0.0;
            for (size_t i = 0; i < s.losses.size(); ++i) {
                wn += s.weights[i];
                num += s.weights[i] * s.losses[i];
            }
            check(wn > 0.0, "reduce_global: rank with all-zero weights in PerRank mode");
            acc += num / wn;
            for (size_t i = 0; i < s.losses.size(); ++i)
                out.dloss[n][i] = s.weights[i] / (wn * n_ranks);
        }
        out.value = acc / n_ranks;
        return out;
    }

    // Proxy: per-rank numerators normalized by the all-reduced mean weight sum.
    const double mean_w = total_w / n_ranks;
    double acc = 0.0;
    for (size_t n = 0; n < shards.size(); ++n) {
        const auto& s = shards[n];
        double num = 0.0;
        for (size_t i = 0; i < s.losses.size(); ++i) num += s.weights[i] * s.losses[i];
        acc += num / mean_w;
        for (size_t i = 0; i < s.losses.size(); ++i)
            out.dloss[n][i] = s.weights[i] / (mean_w * n_ranks);
    }
    out.value = acc / n_ranks;
    return out;
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#include "fuselave/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fuselave/sampler.hpp"

namespace fuselave {

namespace {

class Adam {
  public:
    Adam(FusionModelParams& params, double b1, double b2, double eps)
        : b1_(b1), b2_(b2), eps_(eps) {
        for (const auto& p : params.params) {
            m_.emplace_back(p->value.rows, p->value.cols);
            v_.emplace_back(p->value.rows, p->value.cols);
        }
    }

    void step(FusionModelParams& params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params.params.size(); ++i) {
            auto& p = *params.params[i];
            double* m = m_[i].data.data();
            double* v = v_[i].data.data();
            for (size_t j = 0; j < p.value.size(); ++j) {
                const double g = p.grad.data[j];
                m[j] = b1_ * m[j] + (1.0 - b1_) * g;
                v[j] = b2_ * v[j] + (1.0 - b2_) * g * g;
                p.value.data[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
            }
        }
    }

  private:
    double b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

double lr_at(const TrainConfig& cfg, int step) {
    if (cfg.steps <= 0) return cfg.lr;
    if (step < cfg.warmup) return cfg.lr * (step + 1) / std::max(1, cfg.warmup);
    const int span = std::max(1, cfg.steps - cfg.warmup);
    const double progress = static_cast<double>(step - cfg.warmup) / span;
    const double lo = cfg.lr * cfg.lr_min_frac;
    return lo + 0.5 * (1.0 + std::cos(3.141592653589793 * progress)) * (cfg.lr - lo);
}

// Per-token supervision info gathered from one packed sequence.
struct SeqLosses {
    std::vector<double> ntp_losses, ntp_weights;
    std::vector<double> flow_losses, flow_weights;
};

}  // namespace

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const LayoutConfig& lcfg,
                  const std::vector<InterleavedSample>& records, const ToyVae& vae,
                  const ToyViT& vit, const CheckpointExtra& extra) {
    check(tcfg.shards >= 1, "train: shards must be >= 1");
    check(!records.empty(), "train: empty corpus");

    std::vector<std::vector<const InterleavedSample*>> pools(4);
    for (const auto& rec : records) pools[static_cast<int>(record_task(rec))].push_back(&rec);
    const double mix[4] = {tcfg.mix_text, tcfg.mix_t2i, tcfg.mix_i2t, tcfg.mix_edit};
    double mix_total = 0.0;
    for (int t = 0; t < 4; ++t)
        if (!pools[t].empty()) mix_total += mix[t];
    check(mix_total > 0.0, "train: no records for any task with nonzero mix weight");

    TrainResult result;
    result.params = std::make_unique<FusionModelParams>(mcfg);
    FusionModelParams& params = *result.params;
    if (!tcfg.quiet)
        std::cout << "model parameters: " << params.param_count() << "\n";

    Adam adam(params, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps);

    std::ofstream csv;
    if (!tcfg.out_dir.empty()) {
        std::filesystem::create_directories(tcfg.out_dir);
        csv.open(tcfg.out_dir + "/metrics.csv", std::ios::app);
        csv << "step,ntp_loss,flow_loss,combined,lr,tokens_text,tokens_flow\n";
    }

    auto save = [&](const std::string& tag) -> std::string {
        if (tcfg.out_dir.empty()) return {};
        const std::string path = tcfg.out_dir + "/ckpt_" + tag + ".flck";
        save_checkpoint(path, params, extra);
        return path;
    };

    for (int step = 0; step < tcfg.steps; ++step) {
        Rng rng = Rng(tcfg.seed).fork(0x57e9).fork(step);

        // Draw the global batch; the shard split happens afterwards so the
        // batch itself never depends on the shard count.
        std::vector<PackedSequence> batch;
        int tokens = 0;
        while (tokens < tcfg.batch_tokens) {
            double u = rng.uniform() * mix_total;
            int task = 0;
            for (int t = 0; t < 4; ++t) {
                if (pools[t].empty()) continue;
                u -= mix[t];
                task = t;
                if (u <= 0.0) break;
            }
            const auto& pool = pools[task];
            const InterleavedSample& rec = *pool[rng.below(pool.size())];
            PackedSequence seq =
                layout_training_sequence(rec, tcfg.ectf, rng.fork(0xa0c + tokens), vae, vit, lcfg);
            const TaskKind kind = static_cast<TaskKind>(task);
            if (kind == TaskKind::T2I || kind == TaskKind::Edit) {
                const double d = rng.uniform();
                if (d < tcfg.p_drop_empty)
                    seq = strip_to_noisy(seq);
                else if (d < tcfg.p_drop_empty + tcfg.p_drop_image_only)
                    seq = drop_text_context(seq);
            }
            if (seq.length() > tcfg.max_len) continue;  // oversized layout, redraw
            tokens += seq.length();
            batch.push_back(std::move(seq));
        }
        std::vector<PackedSequence> packed = pack_samples(batch, tcfg.max_len);

        // Global weight sums per loss group; the per-token gradient scale
        // w/(N * mean_w) is computed from these totals (N * mean_w == total
        // exactly for power-of-two N), making trajectories shard-invariant.
        double w_text_total = 0.0, w_flow_total = 0.0;
        long tokens_text = 0, tokens_flow = 0;
        for (const auto& seq : packed) {
            int ti = 0;
            for (size_t i = 0; i < seq.metas.size(); ++i) {
                if (seq.metas[i].cls == ModalityClass::Text) {
                    if (seq.ntp_targets[ti] >= 0) {
                        w_text_total += seq.loss_weights[i];
                        ++tokens_text;
                    }
                    ++ti;
                } else if (seq.metas[i].cls == ModalityClass::VaeNoisy) {
                    w_flow_total += seq.loss_weights[i];
                    ++tokens_flow;
                }
            }
        }

        params.zero_grads();

        // Shards hold contiguous runs of packed sequences.
        const int n_shards = tcfg.shards;
        std::vector<RankShard> ntp_shards(n_shards), flow_shards(n_shards);
        for (int n = 0; n < n_shards; ++n) ntp_shards[n].rank = flow_shards[n].rank = n;
        const size_t per_shard = (packed.size() + n_shards - 1) / n_shards;

        for (size_t si = 0; si < packed.size(); ++si) {
            const PackedSequence& seq = packed[si];
            const int shard = static_cast<int>(si / per_shard);
            const AttentionMask mask = build_mask(seq.metas, tcfg.mask_rules);
            Graph graph;
            ForwardNodes nodes = forward_graph(graph, seq, mask, params);

            // NTP: cross-entropy rows seeded with their global scale.
            const Tensor& logits = *nodes.text_logits->val;
            Tensor& dlogits = *nodes.text_logits->grad;
            int ti = 0;
            for (size_t i = 0; i < seq.metas.size(); ++i) {
                if (seq.metas[i].cls != ModalityClass::Text) continue;
                const int target = seq.ntp_targets[ti];
                if (target >= 0 && w_text_total > 0.0) {
                    check(target < logits.cols, "train: NTP target out of vocab");
                    const double w = seq.loss_weights[i];
                    const double* z = logits.row(ti);
                    double mx = z[0];
                    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, z[c]);
                    double lse = 0.0;
                    for (int c = 0; c < logits.cols; ++c) lse += std::exp(z[c] - mx);
                    const double loss = std::log(lse) + mx - z[target];
                    ntp_shards[shard].losses.push_back(loss);
                    ntp_shards[shard].weights.push_back(w);
                    const double scale = tcfg.lambda_ntp * w / w_text_total;
                    double* dz = dlogits.row(ti);
                    for (int c = 0; c < logits.cols; ++c)
                        dz[c] = scale * (std::exp(z[c] - mx) / lse - (c == target ? 1.0 : 0.0));
                }
                ++ti;
            }

            // Flow: squared-error rows.
            const Tensor& vel = *nodes.velocity->val;
            Tensor& dvel = *nodes.velocity->grad;
            int ni = 0;
            for (size_t i = 0; i < seq.metas.size(); ++i) {
                if (seq.metas[i].cls != ModalityClass::VaeNoisy) continue;
                const double w = seq.loss_weights[i];
                if (w_flow_total > 0.0) {
                    const double* vp = vel.row(ni);
                    const double* tgt = seq.flow_targets.row(ni);
                    double sq = 0.0;
                    const double scale = w / w_flow_total;
                    double* dv = dvel.row(ni);
                    for (int c = 0; c < vel.cols; ++c) {
                        const double diff = vp[c] - tgt[c];
                        sq += diff * diff;
                        dv[c] = scale * 2.0 * diff;
                    }
                    flow_shards[shard].losses.push_back(sq);
                    flow_shards[shard].weights.push_back(w);
                }
                ++ni;
            }

            graph.backward();
        }

        const double ntp_val =
            w_text_total > 0.0 ? reduce_global(ntp_shards, ReduceMode::Proxy).value : 0.0;
        const double flow_val =
            w_flow_total > 0.0 ? reduce_global(flow_shards, ReduceMode::Proxy).value : 0.0;
        const double combined = combined_loss(ntp_val, flow_val, tcfg.lambda_ntp);
        if (!std::isfinite(combined))
            throw DivergenceError("train: non-finite loss at step " + std::to_string(step));

        const double lr = lr_at(tcfg, step);
        adam.step(params, lr);

        MetricRow row{step, ntp_val, flow_val, combined, lr, tokens_text, tokens_flow};
        result.metrics.push_back(row);
        if (csv.is_open()) {
            csv << step << ',' << ntp_val << ',' << flow_val << ',' << combined << ',' << lr << ','
                << tokens_text << ',' << tokens_flow << '\n';
        }
        if (!tcfg.quiet && tcfg.log_every > 0 &&
            (step % tcfg.log_every == 0 || step + 1 == tcfg.steps)) {
            std::cout << "step " << step << "  ntp " << ntp_val << "  flow " << flow_val
                      << "  combined " << combined << "  lr " << lr << "\n";
        }
        if (tcfg.ckpt_every > 0 && (step + 1) % tcfg.ckpt_every == 0 && step + 1 < tcfg.steps)
            save("step" + std::to_string(step + 1));
    }

    result.final_ckpt = save("final");
    return result;
}

namespace {

PackedSequence noisy_points_sequence(const Tensor& noisy, const Tensor& targets,
                                     const std::vector<double>& tsteps) {
    PackedSequence seq;
    const int n = noisy.rows;
    seq.noisy_vae_latents = noisy;
    seq.flow_targets = targets;
    seq.noise_eps = Tensor(n, noisy.cols);
    for (int b = 0; b < n; ++b) {
        TokenMeta m;
        m.cls = ModalityClass::VaeNoisy;
        m.image_index = 0;
        m.sample_id = b;
        m.has_flow_loss = true;
        seq.metas.push_back(m);
        ImageInfo info;
        info.sample_id = b;
        info.image_index = 0;
        info.grid_h = info.grid_w = 1;
        info.timestep = tsteps[b];
        info.has_noisy = true;
        seq.images.push_back(info);
        seq.loss_weights.push_back(1.0);
    }
    assign_position_ids(seq.metas);
    return seq;
}

}  // namespace

ToyFlowResult toy_flow_pretest(uint64_t seed, int train_steps, int n_eval, int ode_steps) {
    constexpr int kModes = 8;
    constexpr double kRadius = 3.0;
    constexpr double kSigma = 0.3;
    double centers[kModes][2];
    for (int k = 0; k < kModes; ++k) {
        const double a = 2.0 * 3.141592653589793 * k / kModes;
        centers[k][0] = kRadius * std::cos(a);
        centers[k][1] = kRadius * std::sin(a);
    }

    ModelConfig mcfg;
    mcfg.layers = 3;
    mcfg.width = 64;
    mcfg.heads = 2;
    mcfg.head_dim = 16;
    mcfg.vocab_size = 8;
    mcfg.latent_dim = 2;
    mcfg.init_seed = seed;
    mcfg.init_sigma = 0.1;
    FusionModelParams params(mcfg);
    Adam adam(params, 0.9, 0.95, 1e-8);

    const int batch = 256;
    TrainConfig sched;
    sched.steps = train_steps;
    sched.warmup = 50;
    sched.lr = 3e-3;
    sched.lr_min_frac = 0.01;

    // Polyak tail average over the final fifth of training; the averaged
    // weights drive sampling.
    std::vector<Tensor> tail_sum;
    for (const auto& p : params.params) tail_sum.emplace_back(p->value.rows, p->value.cols);
    long tail_n = 0;

    for (int step = 0; step < train_steps; ++step) {
        Rng rng = Rng(seed).fork(0x201d).fork(step);
        Tensor noisy(batch, 2), targets(batch, 2);
        std::vector<double> tsteps(batch);
        for (int b = 0; b < batch; ++b) {
            const int mode = static_cast<int>(rng.below(kModes));
            const double x0 = centers[mode][0] + kSigma * rng.normal();
            const double x1 = centers[mode][1] + kSigma * rng.normal();
            const double e0 = rng.normal(), e1 = rng.normal();
            const double t = sample_timestep(rng);
            tsteps[b] = t;
            noisy.at(b, 0) = t * x0 + (1.0 - t) * e0;
            noisy.at(b, 1) = t * x1 + (1.0 - t) * e1;
            targets.at(b, 0) = x0 - e0;
            targets.at(b, 1) = x1 - e1;
        }
        PackedSequence seq = noisy_points_sequence(noisy, targets, tsteps);
        const AttentionMask mask = build_mask(seq.metas);

        params.zero_grads();
        Graph graph;
        ForwardNodes nodes = forward_graph(graph, seq, mask, params);
        const Tensor& vel = *nodes.velocity->val;
        Tensor& dvel = *nodes.velocity->grad;
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < 2; ++c) {
                const double diff = vel.at(b, c) - targets.at(b, c);
                loss += diff * diff;
                dvel.at(b, c) = 2.0 * diff / batch;
            }
        }
        loss /= batch;
        if (!std::isfinite(loss)) throw DivergenceError("toy_flow_pretest: non-finite loss");
        graph.backward();
        adam.step(params, lr_at(sched, step));
        if (step >= train_steps * 4 / 5) {
            for (size_t i = 0; i < params.params.size(); ++i)
                for (size_t j = 0; j < tail_sum[i].size(); ++j)
                    tail_sum[i].data[j] += params.params[i]->value.data[j];
            ++tail_n;
        }
    }
    if (tail_n > 0) {
        for (size_t i = 0; i < params.params.size(); ++i)
            for (size_t j = 0; j < tail_sum[i].size(); ++j)
                params.params[i]->value.data[j] = tail_sum[i].data[j] / tail_n;
    }

    // Sample by integrating the learned field; evaluate mode hits.
    Rng rng = Rng(seed).fork(0x5a3);
    int hits = 0;
    int done = 0;
    while (done < n_eval) {
        const int chunk = std::min(256, n_eval - done);
        Tensor x(chunk, 2);
        for (auto& v : x.data) v = rng.normal();
        std::vector<double> tsteps(chunk, 0.0);
        Tensor zeros(chunk, 2);
        Tensor final_x = integrate_flow(std::move(x), ode_steps, [&](const Tensor& xt, double t) {
            std::fill(tsteps.begin(), tsteps.end(), t);
            PackedSequence seq = noisy_points_sequence(xt, zeros, tsteps);
            const AttentionMask mask = build_mask(seq.metas);
            ForwardOutput out = forward(seq, mask, params);
            return out.velocity;
        });
        for (int b = 0; b < chunk; ++b) {
            double best = 1e18;
            for (int k = 0; k < kModes; ++k) {
                const double d0 = final_x.at(b, 0) - centers[k][0];
                const double d1 = final_x.at(b, 1) - centers[k][1];
                best = std::min(best, d0 * d0 + d1 * d1);
            }
            if (best <= 9.0 * kSigma * kSigma) ++hits;
        }
        done += chunk;
    }

    ToyFlowResult res;
    res.hit_rate = static_cast<double>(hits) / n_eval;
    res.n_samples = n_eval;
    res.sigma = kSigma;
    return res;
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: runs every shipped functional criterion end to end and
// prints one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "fuselave/ablate.hpp"
#include "fuselave/config.hpp"

using namespace fuselave;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// ---- shared helpers -------------------------------------------------------

std::vector<TokenMeta> random_layout(Rng& rng, int max_images, bool pack_two) {
    auto one = [&](int sid) {
        std::vector<LayoutDescItem> items;
        items.push_back({false, 1 + static_cast<int>(rng.below(16)), 0, 0});
        const int n_img = static_cast<int>(rng.below(max_images + 1));
        for (int i = 0; i < n_img; ++i) {
            items.push_back({true, 0, 1 + static_cast<int>(rng.below(5)),
                             1 + static_cast<int>(rng.below(5))});
            if (rng.uniform() < 0.6)
                items.push_back({false, 1 + static_cast<int>(rng.below(10)), 0, 0});
        }
        auto metas = synthetic_layout_metas(items, rng.uniform() < 0.85, rng.uniform() < 0.9);
        for (auto& m : metas) m.sample_id = sid;
        return metas;
    };
    auto metas = one(0);
    if (pack_two) {
        const auto b = one(1);
        metas.insert(metas.end(), b.begin(), b.end());
    }
    return metas;
}

ModelConfig micro_model(uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.head_dim = 8;
    cfg.ffn_mult = 2;
    cfg.vocab_size = 12;
    cfg.latent_dim = 6;
    cfg.tstep_features = 8;
    cfg.init_seed = seed;
    return cfg;
}

PackedSequence random_micro_seq(Rng rng, const ModelConfig& cfg,
                                const std::vector<LayoutDescItem>& desc) {
    PackedSequence seq;
    seq.metas = synthetic_layout_metas(desc, true);
    int n_vit = 0, n_vaec = 0, n_vaen = 0, n_images = 0;
    for (const auto& m : seq.metas) {
        n_vit += (m.cls == ModalityClass::VitClean);
        n_vaec += (m.cls == ModalityClass::VaeClean);
        n_vaen += (m.cls == ModalityClass::VaeNoisy);
        n_images = std::max(n_images, m.image_index + 1);
    }
    seq.vit_features = Tensor(n_vit, cfg.width);
    for (auto& v : seq.vit_features.data) v = rng.normal();
    seq.clean_vae_latents = Tensor(n_vaec, cfg.latent_dim);
    for (auto& v : seq.clean_vae_latents.data) v = rng.normal();
    seq.noisy_vae_latents = Tensor(n_vaen, cfg.latent_dim);
    seq.noise_eps = Tensor(n_vaen, cfg.latent_dim);
    seq.flow_targets = Tensor(n_vaen, cfg.latent_dim);
    std::vector<double> ts(n_images, 1.0);
    for (auto& t : ts) t = 0.1 + 0.8 * rng.uniform();
    int ni = 0;
    for (const auto& m : seq.metas) {
        if (m.cls != ModalityClass::VaeNoisy) continue;
        const double t = ts[m.image_index];
        for (int c = 0; c < cfg.latent_dim; ++c) {
            const double x = rng.normal(), e = rng.normal();
            seq.noisy_vae_latents.at(ni, c) = t * x + (1 - t) * e;
            seq.noise_eps.at(ni, c) = e;
            seq.flow_targets.at(ni, c) = x - e;
        }
        ++ni;
    }
    for (int i = 0; i < n_images; ++i) {
        ImageInfo info;
        info.sample_id = 0;
        info.image_index = i;
        info.grid_h = info.grid_w = 1;
        info.timestep = ts[i];
        info.has_noisy = true;
        seq.images.push_back(info);
    }
    int last_text = -1;
    for (size_t i = 0; i < seq.metas.size(); ++i)
        if (seq.metas[i].cls == ModalityClass::Text) last_text = static_cast<int>(i);
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        if (seq.metas[i].cls != ModalityClass::Text) continue;
        seq.text_ids.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
        const bool sup = static_cast<int>(i) != last_text;
        seq.ntp_targets.push_back(sup ? static_cast<int>(rng.below(cfg.vocab_size)) : -1);
        seq.metas[i].has_ntp_loss = sup;
    }
    seq.loss_weights.assign(seq.metas.size(), 0.0);
    for (size_t i = 0; i < seq.metas.size(); ++i)
        if (seq.metas[i].has_ntp_loss || seq.metas[i].has_flow_loss) seq.loss_weights[i] = 1.0;
    return seq;
}

double combined_value(const PackedSequence& seq, const AttentionMask& mask,
                      FusionModelParams& params, double lambda) {
    ForwardOutput out = forward(seq, mask, params);
    double ce = 0, wce = 0, mse = 0, wmse = 0;
    int ti = 0, ni = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        const auto& m = seq.metas[i];
        if (m.cls == ModalityClass::Text) {
            const int target = seq.ntp_targets[ti];
            if (target >= 0) {
                const double* z = out.text_logits.row(ti);
                double mx = z[0];
                for (int c = 1; c < out.text_logits.cols; ++c) mx = std::max(mx, z[c]);
                double lse = 0;
                for (int c = 0; c < out.text_logits.cols; ++c) lse += std::exp(z[c] - mx);
                ce += seq.loss_weights[i] * (std::log(lse) + mx - z[target]);
                wce += seq.loss_weights[i];
            }
            ++ti;
        } else if (m.cls == ModalityClass::VaeNoisy) {
            const double* v = out.velocity.row(ni);
            const double* tg = seq.flow_targets.row(ni);
            double sq = 0;
            for (int c = 0; c < out.velocity.cols; ++c) {
                const double d = v[c] - tg[c];
                sq += d * d;
            }
            mse += seq.loss_weights[i] * sq;
            wmse += seq.loss_weights[i];
            ++ni;
        }
    }
    double loss = 0;
    if (wce > 0) loss += lambda * ce / wce;
    if (wmse > 0) loss += mse / wmse;
    return loss;
}

void combined_backward(const PackedSequence& seq, const AttentionMask& mask,
                       FusionModelParams& params, double lambda) {
    double wce = 0, wmse = 0;
    int ti = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        const auto& m = seq.metas[i];
        if (m.cls == ModalityClass::Text) {
            if (seq.ntp_targets[ti] >= 0) wce += seq.loss_weights[i];
            ++ti;
        } else if (m.cls == ModalityClass::VaeNoisy) {
            wmse += seq.loss_weights[i];
        }
    }
    Graph graph;
    ForwardNodes nodes = forward_graph(graph, seq, mask, params);
    const Tensor& logits = *nodes.text_logits->val;
    Tensor& dlogits = *nodes.text_logits->grad;
    ti = 0;
    int ni = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        const auto& m = seq.metas[i];
        if (m.cls == ModalityClass::Text) {
            const int target = seq.ntp_targets[ti];
            if (target >= 0 && wce > 0) {
                const double w = seq.loss_weights[i];
                const double* z = logits.row(ti);
                double mx = z[0];
                for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, z[c]);
                double lse = 0;
                for (int c = 0; c < logits.cols; ++c) lse += std::exp(z[c] - mx);
                double* dz = dlogits.row(ti);
                for (int c = 0; c < logits.cols; ++c)
                    dz[c] = lambda * w / wce * (std::exp(z[c] - mx) / lse - (c == target ? 1 : 0));
            }
            ++ti;
        } else if (m.cls == ModalityClass::VaeNoisy) {
            const Tensor& vel = *nodes.velocity->val;
            Tensor& dvel = *nodes.velocity->grad;
            const double w = seq.loss_weights[i];
            const double* v = vel.row(ni);
            const double* tg = seq.flow_targets.row(ni);
            double* dv = dvel.row(ni);
            for (int c = 0; c < vel.cols; ++c) dv[c] = w / wmse * 2.0 * (v[c] - tg[c]);
            ++ni;
        }
    }
    graph.backward();
}

// ---- criteria -------------------------------------------------------------

bool c01_mask_oracle(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(1001);
    int checked = 0;
    for (int it = 0; it < 1000; ++it) {
        const auto metas = random_layout(rng, 4, it % 2 == 1);
        if (metas.size() > 512) continue;
        MaskRules rules;
        rules.text_sees_clean_vae = (it % 7 == 0);
        if (build_mask(metas, rules).dense() != oracle_mask(metas, rules).dense()) {
            detail = "mismatch at layout " + std::to_string(it);
            return false;
        }
        ++checked;
    }
    const double secs = seconds_since(t0);
    detail = std::to_string(checked) + " layouts, " + std::to_string(secs) + "s";
    return checked >= 900 && secs < 60.0;
}

bool c02_ectf_no_leak(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(1002);
    double max_diff = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        FusionModelParams params(micro_model(3000 + inst));
        const auto seq = random_micro_seq(
            rng.fork(inst), params.config,
            {{false, 2, 0, 0}, {true, 0, 2, 2}, {false, 2, 0, 0}, {true, 0, 1, 2}});
        const ForwardOutput full = forward(seq, build_mask(seq.metas), params);
        std::vector<char> keep(seq.metas.size(), 1);
        for (size_t i = 0; i < seq.metas.size(); ++i)
            if (seq.metas[i].cls == ModalityClass::VaeNoisy) keep[i] = 0;
        const PackedSequence clean = filter_tokens(seq, keep);
        const ForwardOutput sub = forward(clean, build_mask(clean.metas), params);
        int j = 0;
        for (size_t i = 0; i < seq.metas.size(); ++i) {
            if (!keep[i]) continue;
            for (int c = 0; c < params.config.width; ++c)
                max_diff = std::max(max_diff,
                                    std::abs(sub.hidden.at(j, c) - full.hidden.at((int)i, c)));
            ++j;
        }
    }
    detail = "20 instances, max |delta| = " + std::to_string(max_diff) + ", " +
             std::to_string(seconds_since(t0)) + "s";
    return max_diff <= 1e-6 && seconds_since(t0) < 60.0;
}

bool c03_train_infer_consistency(std::string& detail) {
    Rng rng(1003);
    double max_diff = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        FusionModelParams params(micro_model(4000 + inst));
        const auto seq = random_micro_seq(
            rng.fork(inst), params.config,
            {{false, 3, 0, 0}, {true, 0, 2, 2}, {false, 1, 0, 0}, {true, 0, 2, 2}});
        const ForwardOutput full = forward(seq, build_mask(seq.metas), params);
        const int target_image = 1;
        long t_img = -1;
        for (const auto& m : seq.metas)
            if (m.image_index == target_image && m.cls == ModalityClass::VaeClean) t_img = m.t;
        std::vector<char> keep(seq.metas.size(), 0);
        for (size_t i = 0; i < seq.metas.size(); ++i) {
            const auto& m = seq.metas[i];
            if (m.cls != ModalityClass::VaeNoisy && m.t < t_img) keep[i] = 1;
            if (m.cls == ModalityClass::VaeNoisy && m.image_index == target_image) keep[i] = 1;
        }
        const PackedSequence prefix = filter_tokens(seq, keep);
        const ForwardOutput sub = forward(prefix, build_mask(prefix.metas), params);
        int j = 0;
        for (size_t i = 0; i < seq.metas.size(); ++i) {
            if (!keep[i]) continue;
            if (seq.metas[i].cls == ModalityClass::VaeNoisy)
                for (int c = 0; c < params.config.width; ++c)
                    max_diff = std::max(max_diff,
                                        std::abs(sub.hidden.at(j, c) - full.hidden.at((int)i, c)));
            ++j;
        }
    }
    detail = "20 instances, max |delta| = " + std::to_string(max_diff);
    return max_diff <= 1e-6;
}

bool c04_rope(std::string& detail) {
    const auto il = allocate_frequencies({128, 10000.0, RopeScheme::ILRoPE});
    for (int i = 0; i < 64; ++i) {
        const RopeAxis want = i < 48 ? static_cast<RopeAxis>(i % 3) : RopeAxis::T;
        if (il.axis[i] != want) {
            detail = "ILRoPE table wrong at pair " + std::to_string(i);
            return false;
        }
    }
    const auto mr = allocate_frequencies({128, 10000.0, RopeScheme::MRoPE});
    for (int i = 0; i < 64; ++i) {
        const RopeAxis want = i < 16 ? RopeAxis::T : i < 40 ? RopeAxis::H : RopeAxis::W;
        if (mr.axis[i] != want) {
            detail = "MRoPE table wrong at pair " + std::to_string(i);
            return false;
        }
    }
    Rng rng(1004);
    double worst_rel = 0.0, worst_norm = 0.0;
    for (int it = 0; it < 1000; ++it) {
        const auto& alloc = (it % 2) ? il : mr;
        std::vector<double> q(128), k(128);
        for (auto& v : q) v = rng.normal();
        for (auto& v : k) v = rng.normal();
        std::array<long, 3> p{}, p2{}, sft{};
        for (int a = 0; a < 3; ++a) {
            p[a] = static_cast<long>(rng.below(128));
            p2[a] = static_cast<long>(rng.below(128));
            sft[a] = static_cast<long>(rng.below(128));
        }
        const auto rq = apply_rope(q, p, alloc);
        double nq = 0, nq0 = 0, base = 0, shifted = 0;
        for (int i = 0; i < 128; ++i) {
            nq += rq[i] * rq[i];
            nq0 += q[i] * q[i];
        }
        worst_norm = std::max(worst_norm, std::abs(std::sqrt(nq) - std::sqrt(nq0)) /
                                              std::max(1.0, std::sqrt(nq0)));
        const auto rk = apply_rope(k, p2, alloc);
        for (int i = 0; i < 128; ++i) base += rq[i] * rk[i];
        const std::array<long, 3> ps{p[0] + sft[0], p[1] + sft[1], p[2] + sft[2]};
        const std::array<long, 3> p2s{p2[0] + sft[0], p2[1] + sft[1], p2[2] + sft[2]};
        const auto rqs = apply_rope(q, ps, alloc);
        const auto rks = apply_rope(k, p2s, alloc);
        for (int i = 0; i < 128; ++i) shifted += rqs[i] * rks[i];
        worst_rel = std::max(worst_rel, std::abs(base - shifted) / std::max(1.0, std::abs(base)));
    }
    detail = "tables exact; rel-pos err " + std::to_string(worst_rel) + ", norm err " +
             std::to_string(worst_norm);
    return worst_rel <= 1e-5 && worst_norm <= 1e-5;
}

bool c05_cfg(std::string& detail) {
    const CfgParams shipped{};
    if (shipped.gamma != 7.5 || shipped.gamma_img != 1.5) {
        detail = "shipped defaults are not gamma=7.5 gamma_img=1.5";
        return false;
    }
    const RunConfig def = default_config();
    if (def.sample_cfg.gamma != 7.5 || def.sample_cfg.gamma_img != 1.5) {
        detail = "run-config defaults are not gamma=7.5 gamma_img=1.5";
        return false;
    }
    Rng rng(1005);
    double worst = 0.0;
    for (int it = 0; it < 500; ++it) {
        std::vector<double> vf(16), vi(16), vu(16);
        for (int i = 0; i < 16; ++i) {
            vf[i] = rng.normal();
            vi[i] = rng.normal();
            vu[i] = rng.normal();
        }
        const double gamma = rng.uniform(0.0, 12.0);
        const auto out = guided_velocity(vf, vi, vu, {gamma, gamma});
        for (int i = 0; i < 16; ++i) {
            const double two = gamma * (vf[i] - vu[i]) + vu[i];
            worst = std::max(worst, std::abs(out[i] - two) / std::max(1.0, std::abs(two)));
        }
    }
    detail = "degeneracy rel err " + std::to_string(worst);
    return worst <= 1e-12;
}

bool c06_gbrl(std::string& detail) {
    Rng rng(1006);
    double worst_val = 0.0, worst_grad = 0.0;
    for (int n_ranks : {1, 2, 4, 8}) {
        for (int rep = 0; rep < 30; ++rep) {
            std::vector<RankShard> shards(n_ranks);
            std::vector<std::vector<double>> coef(n_ranks);
            for (int n = 0; n < n_ranks; ++n) {
                shards[n].rank = n;
                const int len = 1 + static_cast<int>(rng.below(64));
                for (int i = 0; i < len; ++i) {
                    const double c = rng.uniform(-2, 2);
                    coef[n].push_back(c);
                    shards[n].losses.push_back(c * 0.9);
                    shards[n].weights.push_back(rng.uniform(0.01, 10.0));
                }
            }
            const auto ideal = reduce_global(shards, ReduceMode::Ideal);
            const auto proxy = reduce_global(shards, ReduceMode::Proxy);
            worst_val = std::max(worst_val, std::abs(proxy.value - ideal.value) /
                                                std::max(1.0, std::abs(ideal.value)));
            double gi = 0, gp = 0;
            for (int n = 0; n < n_ranks; ++n)
                for (size_t i = 0; i < coef[n].size(); ++i) {
                    gi += ideal.dloss[n][i] * coef[n][i];
                    gp += proxy.dloss[n][i] * coef[n][i];
                }
            worst_grad = std::max(worst_grad, std::abs(gp - gi) / std::max(1.0, std::abs(gi)));
        }
    }
    if (worst_val > 1e-8 || worst_grad > 1e-8) {
        detail = "Proxy/Ideal drift: val " + std::to_string(worst_val) + " grad " +
                 std::to_string(worst_grad);
        return false;
    }

    // documented PerRank bias witness
    std::vector<RankShard> biased(2);
    biased[0] = {0, {1.0}, {1.0}};
    biased[1] = {1, {0.0}, {3.0}};
    const double gap = std::abs(reduce_global(biased, ReduceMode::PerRank).value -
                                reduce_global(biased, ReduceMode::Ideal).value);
    if (gap <= 0.1) {
        detail = "PerRank bias witness too small: " + std::to_string(gap);
        return false;
    }

    // end-to-end trajectory equality after 200 steps
    CorpusConfig cc;
    cc.seed = 2024;
    cc.n_t2i = 24;
    cc.n_i2t = 12;
    cc.n_edit = 8;
    cc.n_text = 6;
    const auto records = gen_corpus_records(cc, false);
    ModelConfig mcfg;
    mcfg.layers = 2;
    mcfg.width = 32;
    mcfg.heads = 2;
    mcfg.head_dim = 16;
    mcfg.vocab_size = Vocabulary::instance().size();
    mcfg.latent_dim = 48;
    mcfg.init_seed = 11;
    TrainConfig tcfg;
    tcfg.steps = 200;
    tcfg.warmup = 20;
    tcfg.batch_tokens = 160;
    tcfg.max_len = 192;
    tcfg.quiet = true;
    LayoutConfig lcfg = default_config().layout;
    ToyVae vae(4, 81);
    ToyViT vit(4, mcfg.width, 82);
    CheckpointExtra extra;
    TrainConfig one = tcfg;
    one.shards = 1;
    TrainConfig four = tcfg;
    four.shards = 4;
    const auto a = train(mcfg, one, lcfg, records, vae, vit, extra);
    const auto b = train(mcfg, four, lcfg, records, vae, vit, extra);
    double max_diff = 0.0;
    for (size_t p = 0; p < a.params->params.size(); ++p)
        for (size_t j = 0; j < a.params->params[p]->value.size(); ++j)
            max_diff = std::max(max_diff, std::abs(a.params->params[p]->value.data[j] -
                                                   b.params->params[p]->value.data[j]));
    detail = "proxy==ideal (" + std::to_string(worst_val) + "), witness gap " +
             std::to_string(gap) + ", 200-step N1-vs-N4 param drift " + std::to_string(max_diff);
    return max_diff <= 1e-8;
}

bool c07_gradcheck(std::string& detail) {
    FusionModelParams params(micro_model(77));
    const auto seq = random_micro_seq(Rng(1007), params.config,
                                      {{false, 3, 0, 0}, {true, 0, 2, 2}, {false, 2, 0, 0}});
    const AttentionMask mask = build_mask(seq.metas);
    params.zero_grads();
    combined_backward(seq, mask, params, 1.0);
    const double h = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    for (auto& p : params.params) {
        double num = 0, den = 0;
        for (size_t j = 0; j < p->value.size(); ++j) {
            const double orig = p->value.data[j];
            p->value.data[j] = orig + h;
            const double up = combined_value(seq, mask, params, 1.0);
            p->value.data[j] = orig - h;
            const double dn = combined_value(seq, mask, params, 1.0);
            p->value.data[j] = orig;
            const double fd = (up - dn) / (2 * h);
            const double diff = p->grad.data[j] - fd;
            num += diff * diff;
            den += fd * fd;
        }
        const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-10);
        if (rel > worst) {
            worst = rel;
            worst_name = p->name;
        }
    }
    detail = "worst group " + worst_name + " rel err " + std::to_string(worst);
    return worst <= 1e-4;
}

bool c08_flow_sanity(std::string& detail) {
    const auto t0 = Clock::now();
    // exact zero at the oracle velocity
    Tensor x(2, 3), eps(2, 3), oracle(2, 3);
    Rng rng(1008);
    for (size_t i = 0; i < x.size(); ++i) {
        x.data[i] = rng.normal();
        eps.data[i] = rng.normal();
        oracle.data[i] = x.data[i] - eps.data[i];
    }
    if (flow_loss(oracle, x, eps, {1.0, 2.0}) != 0.0) {
        detail = "flow_loss at oracle velocity is not exactly zero";
        return false;
    }
    const ToyFlowResult toy = toy_flow_pretest(4242, 1200, 2000, 50);
    const double secs = seconds_since(t0);
    detail = std::to_string(toy.hit_rate * 100) + "% of " + std::to_string(toy.n_samples) +
             " within 3 sigma, " + std::to_string(secs) + "s";
    return toy.hit_rate >= 0.95 && secs < 300.0;
}

bool c09_desk_scale(std::string& detail) {
    const std::string dir = "acceptance_artifacts";
    fs::create_directories(dir);
    RunConfig cfg = default_config();
    cfg.train.out_dir = dir + "/run";
    cfg.train.quiet = true;
    cfg.eval.quiet = true;

    std::cout << "  [c09] generating corpus..." << std::endl;
    gen_corpus(cfg.corpus, dir + "/data");
    const auto train_records = read_dataset(dir + "/data/train.flv");
    const auto eval_records = read_dataset(dir + "/data/eval.flv");

    ToyVae vae(cfg.extra.patch_size, cfg.extra.vae_seed);
    ToyViT vit(cfg.extra.patch_size, cfg.model.width, cfg.extra.vit_seed);

    std::cout << "  [c09] untrained baseline eval..." << std::endl;
    FusionModelParams init_params(cfg.model);
    EvalConfig base_cfg = cfg.eval;
    base_cfg.n_per_task = 40;
    const EvalReport baseline = evaluate(init_params, eval_records, cfg.layout, vae, vit,
                                         cfg.extra, base_cfg);

    std::cout << "  [c09] training (default config)..." << std::endl;
    const auto t0 = Clock::now();
    const TrainResult run =
        train(cfg.model, cfg.train, cfg.layout, train_records, vae, vit, cfg.extra);
    const double train_secs = seconds_since(t0);
    std::cout << "  [c09] training took " << train_secs << "s" << std::endl;

    std::cout << "  [c09] evaluating trained model..." << std::endl;
    const EvalReport rep =
        evaluate(*run.params, eval_records, cfg.layout, vae, vit, cfg.extra, cfg.eval);

    std::ostringstream os;
    os << "t2i " << rep.t2i_full << " (n=" << rep.n_t2i << "), i2t " << rep.i2t_exact
       << " (n=" << rep.n_i2t << "), edit " << rep.edit_consistency << ", untrained t2i "
       << baseline.t2i_full << ", train " << train_secs << "s";
    detail = os.str();
    return rep.t2i_full >= 0.90 && rep.i2t_exact >= 0.95 && rep.n_t2i >= 100 &&
           rep.n_i2t >= 100 && baseline.t2i_full < 0.15 && train_secs <= 1800.0;
}

bool c10_ectf_efficiency(std::string& detail) {
    auto closed_form = [](long n, long T, long g) {
        auto A = [&](long k) { return n + 2 * (k - 1) + 1 + g * (k - 1); };
        auto B = [&](long k) { return n + 2 * (k - 1) + 1 + g * k; };
        auto C = [&](long k) { return n + 2 * (k - 1) + 1 + 2 * g * k; };
        auto D = [&](long k) { return n + 2 * (k - 1) + 2 + g * k; };
        auto E = [&](long k) { return n + 2 * (k - 1) + 1 + 2 * g * (k - 1) + g; };
        const long text = n * (n + 1) / 2;
        long ectf = text;
        for (long k = 1; k <= T; ++k) ectf += A(k) + g * B(k) + g * C(k) + D(k) + g * E(k);
        long base = 0;
        for (long k = 1; k <= T; ++k) {
            long pass = text;
            for (long j = 1; j <= k; ++j) pass += A(j) + g * B(j) + g * C(j) + D(j);
            pass += g * E(k);
            base += pass;
        }
        return std::make_pair(ectf, base);
    };
    std::ostringstream os;
    for (int g : {16, 64}) {
        double prev = 0.0;
        for (int T : {1, 2, 4, 8}) {
            const BenchRow row = bench_ectf_case(32, T, g);
            const auto [ectf, base] = closed_form(32, T, g);
            if (row.ectf_pairs != ectf || row.baseline_pairs != base) {
                detail = "closed-form mismatch at T=" + std::to_string(T) +
                         " g=" + std::to_string(g);
                return false;
            }
            if (T == 1 && row.baseline_pairs != row.ectf_pairs) {
                detail = "T=1 ratio must be exactly 1";
                return false;
            }
            if (row.pair_ratio <= prev) {
                detail = "ratio not strictly increasing in T at g=" + std::to_string(g);
                return false;
            }
            prev = row.pair_ratio;
        }
        os << "g=" << g << " ratios up to " << prev << "; ";
    }
    detail = os.str() + "closed form exact";
    return true;
}

bool c11_routing_and_adaln(std::string& detail) {
    // routing isolation, exact
    FusionModelParams params(micro_model(501));
    const auto text_seq = random_micro_seq(Rng(1011), params.config, {{false, 7, 0, 0}});
    const AttentionMask tmask = build_mask(text_seq.metas);
    const ForwardOutput before = forward(text_seq, tmask, params);
    Rng rng(1012);
    for (auto& p : params.params) {
        const bool visualish = p->name.find(".vis.") != std::string::npos ||
                               p->name.find("adaln") != std::string::npos ||
                               p->name.find("tstep") != std::string::npos ||
                               p->name.find("vae_in") != std::string::npos ||
                               p->name.find("vel.") != std::string::npos;
        if (visualish)
            for (auto& v : p->value.data) v += rng.normal();
    }
    const ForwardOutput after = forward(text_seq, tmask, params);
    for (size_t i = 0; i < before.text_logits.size(); ++i) {
        if (before.text_logits.data[i] != after.text_logits.data[i]) {
            detail = "visual-parameter perturbation leaked into text logits";
            return false;
        }
    }

    // AdaLN-Zero identity at init, exact
    FusionModelParams fresh(micro_model(502));
    const auto seq = random_micro_seq(Rng(1013), fresh.config,
                                      {{false, 3, 0, 0}, {true, 0, 2, 2}, {false, 1, 0, 0}});
    const ForwardOutput out = forward(seq, build_mask(seq.metas), fresh);
    Tensor cin(seq.clean_vae_latents.rows, fresh.config.width);
    matmul_acc(seq.clean_vae_latents.data.data(), fresh.vae_in_w->value.data.data(),
               cin.data.data(), cin.rows, fresh.config.latent_dim, fresh.config.width);
    Tensor nin(seq.noisy_vae_latents.rows, fresh.config.width);
    matmul_acc(seq.noisy_vae_latents.data.data(), fresh.vae_in_w->value.data.data(),
               nin.data.data(), nin.rows, fresh.config.latent_dim, fresh.config.width);
    int ci = 0, ni = 0;
    for (int i = 0; i < seq.length(); ++i) {
        const auto cls = seq.metas[i].cls;
        if (cls == ModalityClass::VaeClean) {
            for (int c = 0; c < fresh.config.width; ++c)
                if (out.hidden.at(i, c) != cin.at(ci, c) + fresh.vae_in_b->value.data[c]) {
                    detail = "clean VAE token not identity at init";
                    return false;
                }
            ++ci;
        } else if (cls == ModalityClass::VaeNoisy) {
            for (int c = 0; c < fresh.config.width; ++c)
                if (out.hidden.at(i, c) != nin.at(ni, c) + fresh.vae_in_b->value.data[c]) {
                    detail = "noisy VAE token not identity at init";
                    return false;
                }
            ++ni;
        }
    }
    detail = "routing isolation and AdaLN-Zero identity hold exactly";
    return true;
}

bool c12_determinism(std::string& detail) {
    const std::string dir = "acceptance_artifacts/determinism";
    fs::create_directories(dir);
    CorpusConfig cc;
    cc.seed = 555;
    cc.n_t2i = 30;
    cc.n_i2t = 15;
    cc.n_edit = 10;
    cc.n_text = 5;
    gen_corpus(cc, dir + "/a");
    gen_corpus(cc, dir + "/b");
    if (slurp(dir + "/a/train.flv") != slurp(dir + "/b/train.flv") ||
        slurp(dir + "/a/eval.flv") != slurp(dir + "/b/eval.flv")) {
        detail = "corpus files differ between runs";
        return false;
    }

    ModelConfig mcfg;
    mcfg.layers = 2;
    mcfg.width = 32;
    mcfg.heads = 2;
    mcfg.head_dim = 16;
    mcfg.vocab_size = Vocabulary::instance().size();
    mcfg.latent_dim = 48;
    mcfg.init_seed = 8;
    FusionModelParams params(mcfg);
    LayoutConfig lcfg = default_config().layout;
    ToyVae vae(4, 81);
    ToyViT vit(4, 32, 82);
    InterleavedSample prompt;
    prompt.items.push_back(
        TextSpan{{Vocabulary::instance().bos(), Vocabulary::instance().id("a"),
                  Vocabulary::instance().id("red"), Vocabulary::instance().id("square"),
                  Vocabulary::instance().vision_start()}});
    GenerationLimits limits;
    limits.seed = 999;
    limits.max_images = 2;
    limits.max_total_tokens = 256;
    OdeConfig ode{12};
    const auto a = generate_interleaved(prompt, params, vae, vit, lcfg, CfgParams{}, ode, limits,
                                        4, 4);
    const auto b = generate_interleaved(prompt, params, vae, vit, lcfg, CfgParams{}, ode, limits,
                                        4, 4);
    if (a.transcript_text != b.transcript_text) {
        detail = "generation transcripts differ between runs";
        return false;
    }
    if (a.new_images.size() != b.new_images.size()) {
        detail = "image counts differ between runs";
        return false;
    }
    for (size_t i = 0; i < a.new_images.size(); ++i)
        if (a.new_images[i].rgb != b.new_images[i].rgb) {
            detail = "generated image bytes differ between runs";
            return false;
        }
    detail = "corpus bytes and generation transcripts identical across runs";
    return true;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "mask oracle equivalence (1000 random layouts)", c01_mask_oracle},
        {2, "ECTF no-leak at network level", c02_ectf_no_leak},
        {3, "training/inference consistency of noisy blocks", c03_train_infer_consistency},
        {4, "IL-RoPE allocation tables and rotation properties", c04_rope},
        {5, "multi-modal CFG degeneracy and shipped defaults", c05_cfg},
        {6, "global batch reduced loss: proxy, witness, trajectories", c06_gbrl},
        {7, "analytic vs finite-difference gradients", c07_gradcheck},
        {8, "flow sanity: oracle zero and 8-mode 2D flow", c08_flow_sanity},
        {9, "desk-scale functional thresholds", c09_desk_scale},
        {10, "ECTF attention-pair efficiency accounting", c10_ectf_efficiency},
        {11, "routing isolation and AdaLN-Zero identity", c11_routing_and_adaln},
        {12, "seeded determinism of corpus and generation", c12_determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] C%02d %s — %s\n", ok ? "PASS" : "FAIL", c.id, c.name, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fuselave/bench.hpp"
#include "fuselave/fusion_net.hpp"
#include "fuselave/glyph.hpp"
#include "fuselave/sampler.hpp"

using namespace fuselave;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.head_dim = 8;
    cfg.ffn_mult = 2;
    cfg.vocab_size = 12;
    cfg.latent_dim = 6;
    cfg.tstep_features = 8;
    cfg.init_seed = 99;
    return cfg;
}

// Random packed sequence straight from synthetic metas (no encoders).
PackedSequence random_micro_seq(Rng rng, const ModelConfig& cfg,
                                const std::vector<LayoutDescItem>& desc, bool ectf = true) {
    PackedSequence seq;
    seq.metas = synthetic_layout_metas(desc, ectf);

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

    std::vector<double> tsteps(n_images, 1.0);
    for (int i = 0; i < n_images; ++i) tsteps[i] = 0.1 + 0.8 * rng.uniform();

    // noisy payload mirrors a clean latent row of the same image cell when
    // one exists; otherwise it is free noise
    int ni = 0;
    for (const auto& m : seq.metas) {
        if (m.cls != ModalityClass::VaeNoisy) continue;
        const double t = tsteps[m.image_index];
        for (int c = 0; c < cfg.latent_dim; ++c) {
            const double x = rng.normal();
            const double e = rng.normal();
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
        info.grid_h = 1;
        info.grid_w = 1;
        info.timestep = tsteps[i];
        info.has_noisy = true;
        seq.images.push_back(info);
    }

    int last_text = -1;
    for (size_t i = 0; i < seq.metas.size(); ++i)
        if (seq.metas[i].cls == ModalityClass::Text) last_text = static_cast<int>(i);
    int ti = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        if (seq.metas[i].cls != ModalityClass::Text) continue;
        seq.text_ids.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
        const bool supervised = static_cast<int>(i) != last_text;
        seq.ntp_targets.push_back(supervised ? static_cast<int>(rng.below(cfg.vocab_size)) : -1);
        seq.metas[i].has_ntp_loss = supervised;
        ++ti;
    }
    (void)ti;
    seq.loss_weights.assign(seq.metas.size(), 0.0);
    for (size_t i = 0; i < seq.metas.size(); ++i)
        if (seq.metas[i].has_ntp_loss || seq.metas[i].has_flow_loss) seq.loss_weights[i] = 1.0;
    return seq;
}

// Combined weighted-mean loss, value only.
double combined_value(const PackedSequence& seq, const AttentionMask& mask,
                      FusionModelParams& params, double lambda) {
    ForwardOutput out = forward(seq, mask, params);
    double ce = 0.0, wce = 0.0, mse = 0.0, wmse = 0.0;
    int ti = 0, ni = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        const auto& m = seq.metas[i];
        if (m.cls == ModalityClass::Text) {
            const int target = seq.ntp_targets[ti];
            if (target >= 0) {
                const double* z = out.text_logits.row(ti);
                double mx = z[0];
                for (int c = 1; c < out.text_logits.cols; ++c) mx = std::max(mx, z[c]);
                double lse = 0.0;
                for (int c = 0; c < out.text_logits.cols; ++c) lse += std::exp(z[c] - mx);
                ce += seq.loss_weights[i] * (std::log(lse) + mx - z[target]);
                wce += seq.loss_weights[i];
            }
            ++ti;
        } else if (m.cls == ModalityClass::VaeNoisy) {
            const double* v = out.velocity.row(ni);
            const double* tg = seq.flow_targets.row(ni);
            double sq = 0.0;
            for (int c = 0; c < out.velocity.cols; ++c) {
                const double d = v[c] - tg[c];
                sq += d * d;
            }
            mse += seq.loss_weights[i] * sq;
            wmse += seq.loss_weights[i];
            ++ni;
        }
    }
    double loss = 0.0;
    if (wce > 0) loss += lambda * ce / wce;
    if (wmse > 0) loss += mse / wmse;
    return loss;
}

// Same loss with analytic gradients accumulated into params.
double combined_backward(const PackedSequence& seq, const AttentionMask& mask,
                         FusionModelParams& params, double lambda) {
    double wce = 0.0, wmse = 0.0;
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
    double loss = 0.0;
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
                double lse = 0.0;
                for (int c = 0; c < logits.cols; ++c) lse += std::exp(z[c] - mx);
                loss += lambda * w * (std::log(lse) + mx - z[target]) / wce;
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
            double sq = 0.0;
            for (int c = 0; c < vel.cols; ++c) {
                const double d = v[c] - tg[c];
                sq += d * d;
                dv[c] = w / wmse * 2.0 * d;
            }
            loss += w * sq / wmse;
            ++ni;
        }
    }
    graph.backward();
    return loss;
}

}  // namespace

TEST_SUITE("fusion_net") {

TEST_CASE("toy VAE decode inverts encode on glyph renders") {
    ToyVae vae(4, 21);
    Rng rng(5);
    double max_err = 0.0;
    for (int it = 0; it < 100; ++it) {
        GlyphScene scene;
        scene.shapes.push_back({static_cast<ShapeKind>(rng.below(3)),
                                static_cast<GlyphColor>(rng.below(5)),
                                static_cast<int>(rng.below(4))});
        const Image img = render_scene(scene, 16);
        const Tensor latents = vae.encode(img);
        const Image back = vae.decode(latents, 4, 4);
        REQUIRE(back.rgb.size() == img.rgb.size());
        for (size_t i = 0; i < img.rgb.size(); ++i)
            max_err = std::max(max_err,
                               std::abs(static_cast<double>(img.rgb[i]) - back.rgb[i]) / 255.0);
    }
    CHECK(max_err < 1e-5);
}

TEST_CASE("toy VAE maps the all-zeros image to zero latents") {
    ToyVae vae(4, 21);
    const Tensor latents = vae.encode(Image(8, 8));
    for (double v : latents.data) CHECK(v == 0.0);
}

TEST_CASE("toy VAE basis is orthogonal (transpose inverse)") {
    ToyVae vae(4, 22);
    Rng rng(7);
    Tensor pat(3, vae.latent_dim());
    for (auto& v : pat.data) v = rng.uniform();
    const Tensor rt = vae.decode_to_patches(vae.encode_patches(pat));
    for (size_t i = 0; i < pat.size(); ++i)
        CHECK(rt.data[i] == doctest::Approx(pat.data[i]).epsilon(1e-10));
}

TEST_CASE("toy ViT is deterministic and separates colors") {
    ToyViT vit(4, 32, 23);
    GlyphScene red, blue;
    red.shapes.push_back({ShapeKind::Square, GlyphColor::Red, 0});
    blue.shapes.push_back({ShapeKind::Square, GlyphColor::Blue, 0});
    const Tensor a1 = vit.encode(render_scene(red, 16));
    const Tensor a2 = vit.encode(render_scene(red, 16));
    const Tensor b = vit.encode(render_scene(blue, 16));
    REQUIRE(a1.size() == a2.size());
    for (size_t i = 0; i < a1.size(); ++i) CHECK(a1.data[i] == a2.data[i]);
    double dist = 0.0;
    for (size_t i = 0; i < a1.size(); ++i) {
        const double d = a1.data[i] - b.data[i];
        dist += d * d;
    }
    CHECK(dist > 1e-6);
}

TEST_CASE("timestep embedding is deterministic, finite, in-range checked, non-constant") {
    FusionModelParams params(micro_config());
    const auto e0 = timestep_embedding(params, 0.0);
    const auto e0b = timestep_embedding(params, 0.0);
    const auto e1 = timestep_embedding(params, 1.0);
    CHECK(e0 == e0b);
    double diff = 0.0;
    for (size_t i = 0; i < e0.size(); ++i) {
        CHECK(std::isfinite(e0[i]));
        CHECK(std::isfinite(e1[i]));
        diff += std::abs(e0[i] - e1[i]);
    }
    CHECK(diff > 0.0);
    CHECK_THROWS(timestep_embedding(params, -0.1));
    CHECK_THROWS(timestep_embedding(params, 1.1));
}

TEST_CASE("AdaLN-Zero: visual tokens pass through every block unchanged at init") {
    const ModelConfig cfg = micro_config();
    FusionModelParams params(cfg);
    const PackedSequence seq = random_micro_seq(
        Rng(31), cfg, {{false, 3, 0, 0}, {true, 0, 2, 2}, {false, 1, 0, 0}}, true);
    const AttentionMask mask = build_mask(seq.metas);
    const ForwardOutput out = forward(seq, mask, params);

    // expected inputs: latents * W_in + b, bitwise
    Tensor cin(seq.clean_vae_latents.rows, cfg.width);
    matmul_acc(seq.clean_vae_latents.data.data(), params.vae_in_w->value.data.data(),
               cin.data.data(), cin.rows, cfg.latent_dim, cfg.width);
    Tensor nin(seq.noisy_vae_latents.rows, cfg.width);
    matmul_acc(seq.noisy_vae_latents.data.data(), params.vae_in_w->value.data.data(),
               nin.data.data(), nin.rows, cfg.latent_dim, cfg.width);
    int ci = 0, nix = 0;
    for (int i = 0; i < seq.length(); ++i) {
        if (seq.metas[i].cls == ModalityClass::VaeClean) {
            for (int c = 0; c < cfg.width; ++c)
                CHECK(out.hidden.at(i, c) == cin.at(ci, c) + params.vae_in_b->value.data[c]);
            ++ci;
        } else if (seq.metas[i].cls == ModalityClass::VaeNoisy) {
            for (int c = 0; c < cfg.width; ++c)
                CHECK(out.hidden.at(i, c) == nin.at(nix, c) + params.vae_in_b->value.data[c]);
            ++nix;
        }
    }
    // velocity head is zero-initialized, so initial velocities are exactly 0
    for (double v : out.velocity.data) CHECK(v == 0.0);
}

TEST_CASE("routing isolation: visual parameters cannot touch text-only outputs") {
    const ModelConfig cfg = micro_config();
    FusionModelParams params(cfg);
    const PackedSequence seq = random_micro_seq(Rng(37), cfg, {{false, 6, 0, 0}}, true);
    const AttentionMask mask = build_mask(seq.metas);
    const ForwardOutput before = forward(seq, mask, params);

    Rng rng(41);
    for (auto& p : params.params) {
        const bool visualish = p->name.find(".vis.") != std::string::npos ||
                               p->name.find("adaln") != std::string::npos ||
                               p->name.find("tstep") != std::string::npos ||
                               p->name.find("vae_in") != std::string::npos ||
                               p->name.find("vel.") != std::string::npos;
        if (visualish)
            for (auto& v : p->value.data) v += rng.normal();
    }
    const ForwardOutput after = forward(seq, mask, params);
    REQUIRE(before.text_logits.size() == after.text_logits.size());
    for (size_t i = 0; i < before.text_logits.size(); ++i)
        CHECK(before.text_logits.data[i] == after.text_logits.data[i]);
}

TEST_CASE("ECTF non-influence: deleting noisy blocks leaves clean states bit-identical") {
    const ModelConfig cfg = micro_config();
    Rng rng(43);
    for (int inst = 0; inst < 5; ++inst) {
        ModelConfig c = cfg;
        c.init_seed = 1000 + inst;
        FusionModelParams params(c);
        const PackedSequence seq = random_micro_seq(
            rng.fork(inst), c, {{false, 2, 0, 0}, {true, 0, 2, 2}, {false, 2, 0, 0}, {true, 0, 1, 2}},
            true);
        const AttentionMask mask = build_mask(seq.metas);
        const ForwardOutput full = forward(seq, mask, params);

        std::vector<char> keep(seq.metas.size(), 1);
        for (size_t i = 0; i < seq.metas.size(); ++i)
            if (seq.metas[i].cls == ModalityClass::VaeNoisy) keep[i] = 0;
        const PackedSequence clean = filter_tokens(seq, keep);
        const AttentionMask cmask = build_mask(clean.metas);
        const ForwardOutput sub = forward(clean, cmask, params);

        int j = 0;
        for (size_t i = 0; i < seq.metas.size(); ++i) {
            if (!keep[i]) continue;
            for (int c2 = 0; c2 < cfg.width; ++c2)
                CHECK(sub.hidden.at(j, c2) == full.hidden.at(static_cast<int>(i), c2));
            ++j;
        }
    }
}

TEST_CASE("training/inference consistency for noisy-block states") {
    const ModelConfig cfg = micro_config();
    Rng rng(47);
    for (int inst = 0; inst < 5; ++inst) {
        ModelConfig c = cfg;
        c.init_seed = 2000 + inst;
        FusionModelParams params(c);
        const PackedSequence seq = random_micro_seq(
            rng.fork(inst), c, {{false, 3, 0, 0}, {true, 0, 2, 2}, {false, 1, 0, 0}, {true, 0, 2, 2}},
            true);
        const AttentionMask mask = build_mask(seq.metas);
        const ForwardOutput full = forward(seq, mask, params);

        const int target_image = 1;
        long t_img = -1;
        for (const auto& m : seq.metas)
            if (m.image_index == target_image && m.cls == ModalityClass::VaeClean) t_img = m.t;
        REQUIRE(t_img > 0);

        std::vector<char> keep(seq.metas.size(), 0);
        for (size_t i = 0; i < seq.metas.size(); ++i) {
            const auto& m = seq.metas[i];
            if (m.cls != ModalityClass::VaeNoisy && m.t < t_img) keep[i] = 1;
            if (m.cls == ModalityClass::VaeNoisy && m.image_index == target_image) keep[i] = 1;
        }
        const PackedSequence prefix = filter_tokens(seq, keep);
        const AttentionMask pmask = build_mask(prefix.metas);
        const ForwardOutput sub = forward(prefix, pmask, params);

        int j = 0;
        for (size_t i = 0; i < seq.metas.size(); ++i) {
            if (!keep[i]) continue;
            if (seq.metas[i].cls == ModalityClass::VaeNoisy) {
                for (int c2 = 0; c2 < cfg.width; ++c2)
                    CHECK(std::abs(sub.hidden.at(j, c2) - full.hidden.at(static_cast<int>(i), c2)) <=
                          1e-6);
            }
            ++j;
        }
    }
}

TEST_CASE("analytic gradients match central finite differences on the micro-model") {
    const ModelConfig cfg = micro_config();
    FusionModelParams params(cfg);
    const PackedSequence seq = random_micro_seq(
        Rng(53), cfg, {{false, 3, 0, 0}, {true, 0, 2, 2}, {false, 2, 0, 0}}, true);
    const AttentionMask mask = build_mask(seq.metas);
    const double lambda = 1.0;

    params.zero_grads();
    combined_backward(seq, mask, params, lambda);

    const double h = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    for (auto& p : params.params) {
        double num = 0.0, den = 0.0;
        for (size_t j = 0; j < p->value.size(); ++j) {
            const double orig = p->value.data[j];
            p->value.data[j] = orig + h;
            const double up = combined_value(seq, mask, params, lambda);
            p->value.data[j] = orig - h;
            const double dn = combined_value(seq, mask, params, lambda);
            p->value.data[j] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double diff = p->grad.data[j] - fd;
            num += diff * diff;
            den += fd * fd;
        }
        const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-10);
        if (rel > worst) {
            worst = rel;
            worst_name = p->name;
        }
        CHECK_MESSAGE(rel <= 1e-4, p->name, " rel err ", rel);
    }
    MESSAGE("worst group: ", worst_name, " rel ", worst);
}

TEST_CASE("forward rejects mismatched masks and missing timesteps") {
    const ModelConfig cfg = micro_config();
    FusionModelParams params(cfg);
    PackedSequence seq = random_micro_seq(Rng(59), cfg, {{false, 2, 0, 0}, {true, 0, 1, 2}}, true);
    const AttentionMask mask = build_mask(seq.metas);
    AttentionMask bad = mask;
    bad.length -= 1;
    bad.intervals.pop_back();
    CHECK_THROWS(forward(seq, bad, params));

    seq.images.clear();  // timestep lookup must now fail
    CHECK_THROWS(forward(seq, mask, params));
}

TEST_CASE("shared-branch mode (no deep fusion) still runs and modulates VAE rows") {
    ModelConfig cfg = micro_config();
    cfg.dual_branch = false;
    FusionModelParams params(cfg);
    const PackedSequence seq = random_micro_seq(
        Rng(61), cfg, {{false, 2, 0, 0}, {true, 0, 2, 2}}, true);
    const AttentionMask mask = build_mask(seq.metas);
    const ForwardOutput out = forward(seq, mask, params);
    CHECK(out.hidden.rows == seq.length());
    for (double v : out.hidden.data) CHECK(std::isfinite(v));
    // no visual-branch tensors exist in shared mode
    for (const auto& p : params.params) CHECK(p->name.find(".vis.") == std::string::npos);

    // gradient check covers the shared path too
    params.zero_grads();
    combined_backward(seq, mask, params, 1.0);
    const double h = 1e-3;
    for (auto& p : params.params) {
        double num = 0.0, den = 0.0;
        for (size_t j = 0; j < p->value.size(); j += 7) {  // strided spot check
            const double orig = p->value.data[j];
            p->value.data[j] = orig + h;
            const double up = combined_value(seq, mask, params, 1.0);
            p->value.data[j] = orig - h;
            const double dn = combined_value(seq, mask, params, 1.0);
            p->value.data[j] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double diff = p->grad.data[j] - fd;
            num += diff * diff;
            den += fd * fd;
        }
        const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-10);
        CHECK_MESSAGE(rel <= 1e-4, p->name, " rel err ", rel);
    }
}

}  // TEST_SUITE

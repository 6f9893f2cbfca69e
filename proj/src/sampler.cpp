// SPDX-License-Identifier: Apache-2.0
#include "fuselave/sampler.hpp"

#include <cmath>
#include <sstream>

namespace fuselave {

std::vector<double> guided_velocity(const std::vector<double>& v_full,
                                    const std::vector<double>& v_img,
                                    const std::vector<double>& v_uncond, const CfgParams& cfg) {
    check(v_full.size() == v_img.size() && v_full.size() == v_uncond.size(),
          "guided_velocity: shape mismatch");
    std::vector<double> out(v_full.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = cfg.gamma * (v_full[i] - v_img[i]) + cfg.gamma_img * (v_img[i] - v_uncond[i]) +
                 v_uncond[i];
    }
    return out;
}

Tensor guided_velocity(const Tensor& v_full, const Tensor& v_img, const Tensor& v_uncond,
                       const CfgParams& cfg) {
    check(v_full.rows == v_img.rows && v_full.cols == v_img.cols &&
              v_full.rows == v_uncond.rows && v_full.cols == v_uncond.cols,
          "guided_velocity: shape mismatch");
    Tensor out(v_full.rows, v_full.cols);
    for (size_t i = 0; i < out.size(); ++i) {
        out.data[i] = cfg.gamma * (v_full.data[i] - v_img.data[i]) +
                      cfg.gamma_img * (v_img.data[i] - v_uncond.data[i]) + v_uncond.data[i];
    }
    return out;
}

PackedSequence filter_tokens(const PackedSequence& seq, const std::vector<char>& keep) {
    check(keep.size() == seq.metas.size(), "filter_tokens: keep size mismatch");
    PackedSequence out;
    out.images = seq.images;
    int n_text = 0, n_vit = 0, n_vaec = 0, n_vaen = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        if (!keep[i]) continue;
        switch (seq.metas[i].cls) {
            case ModalityClass::Text: ++n_text; break;
            case ModalityClass::VitClean: ++n_vit; break;
            case ModalityClass::VaeClean: ++n_vaec; break;
            case ModalityClass::VaeNoisy: ++n_vaen; break;
        }
    }
    (void)n_text;
    out.vit_features = Tensor(n_vit, seq.vit_features.cols);
    out.clean_vae_latents = Tensor(n_vaec, seq.clean_vae_latents.cols);
    out.noisy_vae_latents = Tensor(n_vaen, seq.noisy_vae_latents.cols);
    out.noise_eps = Tensor(n_vaen, seq.noise_eps.cols);
    out.flow_targets = Tensor(n_vaen, seq.flow_targets.cols);

    int ti = 0, vi = 0, ci = 0, ni = 0;
    int to = 0, vo = 0, co = 0, no = 0;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        const auto& m = seq.metas[i];
        const bool k = keep[i] != 0;
        switch (m.cls) {
            case ModalityClass::Text:
                if (k) {
                    out.text_ids.push_back(seq.text_ids[ti]);
                    out.ntp_targets.push_back(seq.ntp_targets[ti]);
                }
                ++ti;
                (void)to;
                break;
            case ModalityClass::VitClean:
                if (k) std::copy_n(seq.vit_features.row(vi), seq.vit_features.cols,
                                   out.vit_features.row(vo++));
                ++vi;
                break;
            case ModalityClass::VaeClean:
                if (k) std::copy_n(seq.clean_vae_latents.row(ci), seq.clean_vae_latents.cols,
                                   out.clean_vae_latents.row(co++));
                ++ci;
                break;
            case ModalityClass::VaeNoisy:
                if (k) {
                    std::copy_n(seq.noisy_vae_latents.row(ni), seq.noisy_vae_latents.cols,
                                out.noisy_vae_latents.row(no));
                    std::copy_n(seq.noise_eps.row(ni), seq.noise_eps.cols, out.noise_eps.row(no));
                    std::copy_n(seq.flow_targets.row(ni), seq.flow_targets.cols,
                                out.flow_targets.row(no));
                    ++no;
                }
                ++ni;
                break;
        }
        if (k) {
            out.metas.push_back(m);
            out.loss_weights.push_back(seq.loss_weights.empty() ? 0.0 : seq.loss_weights[i]);
        }
    }
    return out;
}

PackedSequence drop_text_context(const PackedSequence& seq) {
    const int L = seq.length();
    std::vector<char> keep(L, 0);
    auto is_clean_visual = [&](int i) {
        return i >= 0 && i < L &&
               (seq.metas[i].cls == ModalityClass::VitClean ||
                seq.metas[i].cls == ModalityClass::VaeClean);
    };
    for (int i = 0; i < L; ++i) {
        if (seq.metas[i].cls != ModalityClass::Text) {
            keep[i] = 1;
        } else {
            // vision specials hug their image block
            keep[i] = is_clean_visual(i - 1) || is_clean_visual(i + 1);
        }
    }
    return filter_tokens(seq, keep);
}

ConditionVariants build_condition_variants(const PackedSequence& history) {
    for (const auto& m : history.metas)
        check(m.cls != ModalityClass::VaeNoisy, "build_condition_variants: noisy token in history");
    ConditionVariants v;
    v.full = history;
    v.image_only = drop_text_context(history);
    return v;
}

Tensor integrate_flow(Tensor x0, int steps,
                      const std::function<Tensor(const Tensor&, double)>& velocity) {
    check(steps >= 1, "integrate_flow: steps must be >= 1");
    const double dt = 1.0 / steps;
    Tensor x = std::move(x0);
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        Tensor v = velocity(x, t);
        check(v.rows == x.rows && v.cols == x.cols, "integrate_flow: velocity shape mismatch");
        for (size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(v.data[i]))
                throw DivergenceError("integrate_flow: non-finite velocity");
            x.data[i] += dt * v.data[i];
        }
    }
    return x;
}

// Context + generation block at one flow time; noisy latents are the current
// ODE state.
PackedSequence with_generation_block(const PackedSequence& ctx,
                                     const std::vector<TokenMeta>& gen_metas, const Tensor& x,
                                     int image_index, int grid_h, int grid_w, double t) {
    PackedSequence seq = ctx;
    for (const auto& m : gen_metas) seq.metas.push_back(m);
    seq.noisy_vae_latents = x;
    seq.noise_eps = Tensor(x.rows, x.cols);
    seq.flow_targets = Tensor(x.rows, x.cols);
    seq.loss_weights.resize(seq.metas.size(), 0.0);
    ImageInfo info;
    info.sample_id = 0;
    info.image_index = image_index;
    info.grid_h = grid_h;
    info.grid_w = grid_w;
    info.timestep = t;
    info.has_noisy = true;
    seq.images.push_back(info);
    return seq;
}

SampleImageResult sample_image(const PackedSequence& history, FusionModelParams& params,
                               const ToyVae& vae, const CfgParams& cfg, const OdeConfig& ode,
                               int grid_h, int grid_w, Rng rng, const MaskRules& rules) {
    check(grid_h >= 1 && grid_w >= 1, "sample_image: invalid grid");
    for (const auto& m : history.metas) {
        check(m.cls != ModalityClass::VaeNoisy, "sample_image: history must be clean");
        check(m.sample_id == 0, "sample_image: history must be a single sample");
    }

    int image_index = 0;
    for (const auto& m : history.metas) image_index = std::max(image_index, m.image_index + 1);

    // Position IDs for the generation block come from the final transcript:
    // append the block to the full history and re-run assignment.
    std::vector<TokenMeta> gen_metas;
    for (int h = 0; h < grid_h; ++h) {
        for (int w = 0; w < grid_w; ++w) {
            TokenMeta m;
            m.cls = ModalityClass::VaeNoisy;
            m.image_index = image_index;
            m.h = h;
            m.w = w;
            gen_metas.push_back(m);
        }
    }
    {
        std::vector<TokenMeta> all = history.metas;
        all.insert(all.end(), gen_metas.begin(), gen_metas.end());
        assign_position_ids(all);
        std::copy(all.end() - gen_metas.size(), all.end(), gen_metas.begin());
    }

    ConditionVariants variants = build_condition_variants(history);
    PackedSequence empty_ctx;

    const int g = grid_h * grid_w;
    Tensor x(g, vae.latent_dim());
    for (auto& v : x.data) v = rng.normal();

    // Clean context keys/values are independent of the generation block, so
    // each variant's cache is built once and reused across every Euler step.
    GenContext gc_full = build_generation_context(variants.full, gen_metas, params, rules);
    GenContext gc_img = build_generation_context(variants.image_only, gen_metas, params, rules);
    GenContext gc_uncond = build_generation_context(empty_ctx, gen_metas, params, rules);

    Tensor latents = integrate_flow(std::move(x), ode.steps, [&](const Tensor& xt, double t) {
        const Tensor v_full = generation_velocity(gc_full, params, xt, t);
        const Tensor v_img = generation_velocity(gc_img, params, xt, t);
        const Tensor v_uncond = generation_velocity(gc_uncond, params, xt, t);
        return guided_velocity(v_full, v_img, v_uncond, cfg);
    });

    SampleImageResult res;
    res.image = vae.decode(latents, grid_h, grid_w);
    res.latents = std::move(latents);
    return res;
}

namespace {

uint64_t fnv1a(const uint8_t* data, size_t n) {
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

int decode_next_token(const PackedSequence& ctx, FusionModelParams& params,
                      const MaskRules& rules, double temperature, Rng& rng) {
    check(!ctx.metas.empty() && ctx.metas.back().cls == ModalityClass::Text,
          "generate: context must end with a text token");
    const AttentionMask mask = build_mask(ctx.metas, rules);
    ForwardOutput out = forward(ctx, mask, params);
    const int row = out.text_logits.rows - 1;
    const double* z = out.text_logits.row(row);
    const int vocab = out.text_logits.cols;
    if (temperature <= 0.0) {
        int best = 0;
        for (int i = 1; i < vocab; ++i)
            if (z[i] > z[best]) best = i;
        return best;
    }
    double mx = z[0];
    for (int i = 1; i < vocab; ++i) mx = std::max(mx, z[i]);
    std::vector<double> p(vocab);
    double denom = 0.0;
    for (int i = 0; i < vocab; ++i) {
        p[i] = std::exp((z[i] - mx) / temperature);
        denom += p[i];
    }
    double u = rng.uniform() * denom;
    for (int i = 0; i < vocab; ++i) {
        u -= p[i];
        if (u <= 0.0) return i;
    }
    return vocab - 1;
}

void append_text(InterleavedSample& items, int id) {
    if (!items.items.empty()) {
        if (auto* span = std::get_if<TextSpan>(&items.items.back())) {
            span->ids.push_back(id);
            return;
        }
    }
    items.items.push_back(TextSpan{{id}});
}

// Context ending in <|vision_start|>: the layout of the history plus one
// appended start token.
PackedSequence context_with_vision_start(const InterleavedSample& history, const ToyVae& vae,
                                         const ToyViT& vit, const LayoutConfig& lcfg) {
    PackedSequence ctx;
    if (!history.items.empty()) ctx = layout_context(history, vae, vit, lcfg);
    TokenMeta m;
    m.cls = ModalityClass::Text;
    ctx.metas.push_back(m);
    ctx.text_ids.push_back(lcfg.vision_start_id);
    ctx.ntp_targets.push_back(-1);
    ctx.loss_weights.push_back(0.0);
    assign_position_ids(ctx.metas);
    return ctx;
}

}  // namespace

GenerationResult generate_interleaved(const InterleavedSample& prompt, FusionModelParams& params,
                                      const ToyVae& vae, const ToyViT& vit,
                                      const LayoutConfig& lcfg, const CfgParams& cfg,
                                      const OdeConfig& ode, const GenerationLimits& limits,
                                      int gen_grid_h, int gen_grid_w, const MaskRules& rules) {
    check(!prompt.items.empty(), "generate: empty prompt");
    check(limits.max_total_tokens > 0 && limits.max_images > 0, "generate: limits must be positive");

    GenerationResult res;
    res.transcript = prompt;

    // A prompt ending in <|vision_start|> enters image mode immediately; the
    // start token is re-synthesized by the image-mode context builder.
    bool image_mode = false;
    if (auto* span = std::get_if<TextSpan>(&res.transcript.items.back())) {
        if (!span->ids.empty() && span->ids.back() == lcfg.vision_start_id) {
            span->ids.pop_back();
            if (span->ids.empty()) res.transcript.items.pop_back();
            image_mode = true;
        }
    }

    std::ostringstream log;
    for (const auto& item : prompt.items) {
        if (const auto* span = std::get_if<TextSpan>(&item)) {
            log << "prompt text";
            for (int id : span->ids) log << ' ' << id;
            log << '\n';
        } else {
            const auto& img = std::get<ImageItem>(item).image;
            log << "prompt image " << img.height << 'x' << img.width << " #" << std::hex
                << fnv1a(img.rgb.data(), img.rgb.size()) << std::dec << '\n';
        }
    }

    Rng text_rng = Rng(limits.seed).fork(0x7e97);
    int steps = 0;
    int images_done = 0;
    for (;;) {
        if (++steps > limits.max_total_tokens) {
            res.truncated = true;
            break;
        }
        if (image_mode) {
            if (images_done >= limits.max_images) {
                res.truncated = true;
                break;
            }
            PackedSequence ctx = context_with_vision_start(res.transcript, vae, vit, lcfg);
            if (ctx.length() + gen_grid_h * gen_grid_w > limits.max_total_tokens) {
                res.truncated = true;
                break;
            }
            SampleImageResult img = sample_image(ctx, params, vae, cfg, ode, gen_grid_h,
                                                 gen_grid_w, Rng(limits.seed).fork(100 + images_done),
                                                 rules);
            res.transcript.items.push_back(ImageItem{img.image});
            res.new_images.push_back(img.image);
            log << "image " << img.image.height << 'x' << img.image.width << " #" << std::hex
                << fnv1a(img.image.rgb.data(), img.image.rgb.size()) << std::dec << '\n';
            ++images_done;
            image_mode = false;
            continue;
        }

        PackedSequence ctx = layout_context(res.transcript, vae, vit, lcfg);
        if (ctx.length() >= limits.max_total_tokens) {
            res.truncated = true;
            break;
        }
        const int next = decode_next_token(ctx, params, rules, limits.temperature, text_rng);
        if (next == lcfg.vision_start_id) {
            image_mode = true;
            continue;
        }
        log << "text " << next << '\n';
        if (next == lcfg.eos_id) break;
        append_text(res.transcript, next);
        res.new_text_ids.push_back(next);
    }

    res.transcript_text = log.str();
    return res;
}

}  // namespace fuselave

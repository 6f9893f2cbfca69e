// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "fuselave/fusion_net.hpp"

namespace fuselave {

// Dual-coefficient classifier-free guidance. gamma scales the cross-modal
// (text) term, gamma_img the intra-modal (image) term; with gamma_img ==
// gamma this collapses to the single-coefficient form.
struct CfgParams {
    double gamma = 7.5;
    double gamma_img = 1.5;
};

struct OdeConfig {
    int steps = 50;  // uniform Euler steps
};

struct GenerationLimits {
    int max_total_tokens = 2048;
    int max_images = 8;
    double temperature = 0.0;  // 0 = greedy
    uint64_t seed = 0;
};

// gamma*(v_full - v_img) + gamma_img*(v_img - v_uncond) + v_uncond.
std::vector<double> guided_velocity(const std::vector<double>& v_full,
                                    const std::vector<double>& v_img,
                                    const std::vector<double>& v_uncond, const CfgParams& cfg);
Tensor guided_velocity(const Tensor& v_full, const Tensor& v_img, const Tensor& v_uncond,
                       const CfgParams& cfg);

// Keep a token subset of a sequence; metas (including position IDs) and
// per-class payload rows of kept tokens are preserved untouched.
PackedSequence filter_tokens(const PackedSequence& seq, const std::vector<char>& keep);

// Remove Text-class tokens but retain the vision specials directly adjacent
// to image blocks. Shared between condition-variant construction and
// training-time condition dropout.
PackedSequence drop_text_context(const PackedSequence& seq);

struct ConditionVariants {
    PackedSequence full;
    PackedSequence image_only;
    // The unconditional context is empty: the generation block attends only
    // itself.
};

// history must contain no noisy tokens.
ConditionVariants build_condition_variants(const PackedSequence& history);

// Euler integration of dx/dt = velocity(x, t) from t=0 to 1.
Tensor integrate_flow(Tensor x0, int steps,
                      const std::function<Tensor(const Tensor&, double)>& velocity);

// One variant sequence: clean context plus the generation block carrying the
// current ODE state as noisy latents. Reference path for the cached sampler.
PackedSequence with_generation_block(const PackedSequence& ctx,
                                     const std::vector<TokenMeta>& gen_metas, const Tensor& x,
                                     int image_index, int grid_h, int grid_w, double t);

struct SampleImageResult {
    Tensor latents;  // [grid_h*grid_w, latent_dim]
    Image image;
};

// Reverse-time ODE sampling of one image. `history` is the clean context
// (typically ending in <|vision_start|>); three condition variants feed the
// guided velocity at every step. Deterministic per rng.
SampleImageResult sample_image(const PackedSequence& history, FusionModelParams& params,
                               const ToyVae& vae, const CfgParams& cfg, const OdeConfig& ode,
                               int grid_h, int grid_w, Rng rng, const MaskRules& rules = {});

struct GenerationResult {
    InterleavedSample transcript;  // prompt plus generated items
    std::vector<Image> new_images;
    std::vector<int> new_text_ids;
    bool truncated = false;
    std::string transcript_text;  // stable printable form (determinism checks)
};

// Modal-level interleaved generation loop: text decodes token by token;
// emitting <|vision_start|> switches to image mode, after which the sampled
// image is re-encoded and appended as clean blocks and text mode resumes.
GenerationResult generate_interleaved(const InterleavedSample& prompt, FusionModelParams& params,
                                      const ToyVae& vae, const ToyViT& vit,
                                      const LayoutConfig& lcfg, const CfgParams& cfg,
                                      const OdeConfig& ode, const GenerationLimits& limits,
                                      int gen_grid_h, int gen_grid_w, const MaskRules& rules = {});

}  // namespace fuselave

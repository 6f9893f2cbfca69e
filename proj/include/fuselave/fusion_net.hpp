// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fuselave/autograd.hpp"
#include "fuselave/ectf_mask.hpp"
#include "fuselave/il_rope.hpp"
#include "fuselave/seq_layout.hpp"

namespace fuselave {

struct ModelConfig {
    int layers = 4;
    int width = 128;
    int heads = 4;
    int head_dim = 32;
    int ffn_mult = 4;
    int vocab_size = 0;
    int latent_dim = 48;
    int tstep_features = 64;
    RopeScheme rope_scheme = RopeScheme::ILRoPE;
    double rope_base = 10000.0;
    bool dual_branch = true;  // false = single shared parameter set (ablation)
    uint64_t init_seed = 1;
    double init_sigma = 0.02;  // trunk matrix init scale

    int inner_dim() const { return heads * head_dim; }
};

struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;
};

// One routed parameter set: attention projections, FFN, and the RMS gain
// vectors for both sublayers.
struct BranchParams {
    ParamTensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    ParamTensor *w1, *b1, *w2, *b2;
    ParamTensor *g_attn, *g_ffn;
};

// AdaLN conditioning net for one block: (scale, shift, gate) per sublayer,
// applied to VAE-class tokens only. Gate projections start at zero so every
// block is the identity for visual tokens at init.
struct AdaLnParams {
    ParamTensor *scale_attn_w, *scale_attn_b;
    ParamTensor *shift_attn_w, *shift_attn_b;
    ParamTensor *gate_attn_w, *gate_attn_b;
    ParamTensor *scale_ffn_w, *scale_ffn_b;
    ParamTensor *shift_ffn_w, *shift_ffn_b;
    ParamTensor *gate_ffn_w, *gate_ffn_b;
};

struct BlockParams {
    BranchParams text;
    std::optional<BranchParams> visual;
    AdaLnParams adaln;
};

class FusionModelParams {
  public:
    explicit FusionModelParams(const ModelConfig& cfg);

    ModelConfig config;
    std::vector<std::unique_ptr<ParamTensor>> params;  // creation order (checkpoint order)
    FrequencyAllocation rope_alloc;

    ParamTensor* tok_emb;
    ParamTensor *vae_in_w, *vae_in_b;
    ParamTensor *tstep_w1, *tstep_b1, *tstep_w2, *tstep_b2;
    std::vector<BlockParams> blocks;
    ParamTensor* final_gain;
    ParamTensor *head_w, *head_b;
    ParamTensor *vel_w, *vel_b;

    long param_count() const;
    void zero_grads();
    ParamTensor* find(const std::string& name);

  private:
    ParamTensor* add(const std::string& name, int rows, int cols);
};

// Sinusoidal features followed by the learned two-layer map. t must lie in
// [0,1]; clean VAE tokens are conditioned at the clean endpoint t = 1.
std::vector<double> timestep_embedding(const FusionModelParams& params, double t);

struct ForwardNodes {
    Node* hidden = nullptr;       // [L, width], final block output
    Node* text_logits = nullptr;  // [n_text, vocab]
    Node* velocity = nullptr;     // [n_noisy, latent_dim]
};

// Per-layer roped key/value rows, captured for incremental decoding.
struct LayerKV {
    Tensor k;
    Tensor v;
};

// Differentiable forward over one packed sequence. Queries and keys are
// RoPE-rotated per token, tokens route to branches by modality class, and
// VAE tokens are AdaLN-modulated at their image's flow timestep.
ForwardNodes forward_graph(Graph& graph, const PackedSequence& seq, const AttentionMask& mask,
                           FusionModelParams& params, std::vector<LayerKV>* kv_out = nullptr);

struct ForwardOutput {
    Tensor text_logits;
    Tensor velocity;
    Tensor hidden;
};

// Value-only forward.
ForwardOutput forward(const PackedSequence& seq, const AttentionMask& mask,
                      FusionModelParams& params);

// Cached clean context for iterative image sampling. Clean tokens never
// attend the generation block, so their per-layer keys/values equal the ones
// the full-sequence forward would produce and can be computed once.
struct GenContext {
    int ctx_len = 0;
    std::vector<LayerKV> ctx_kv;     // per layer
    std::vector<TokenMeta> gen_metas;  // generation block with final positions
    Tensor gen_cos, gen_sin;           // rope tables for the block
};

GenContext build_generation_context(const PackedSequence& ctx,
                                    const std::vector<TokenMeta>& gen_metas,
                                    FusionModelParams& params, const MaskRules& rules);

// Velocity of the generation block at flow time t given the cached context.
// Matches the full-sequence forward on [context + block] exactly.
Tensor generation_velocity(const GenContext& gc, FusionModelParams& params, const Tensor& x_noisy,
                           double t);

}  // namespace fuselave

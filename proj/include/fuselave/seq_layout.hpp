// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <variant>
#include <vector>

#include "fuselave/common.hpp"
#include "fuselave/encoders.hpp"
#include "fuselave/objective.hpp"
#include "fuselave/tensor.hpp"

namespace fuselave {

// Vision boundary tokens are ordinary Text-class tokens with reserved IDs;
// they take part in NTP like any other text token.
enum class ModalityClass : uint8_t { Text = 0, VitClean = 1, VaeClean = 2, VaeNoisy = 3 };

struct TokenMeta {
    ModalityClass cls = ModalityClass::Text;
    int image_index = -1;  // per-sample image ordinal; -1 for text
    long t = 0;
    long h = 0;
    long w = 0;
    int sample_id = 0;
    bool has_ntp_loss = false;
    bool has_flow_loss = false;
};

struct ImageGrid {
    int pixel_h = 0;
    int pixel_w = 0;
    int patch_size = 0;
    int grid_h = 0;
    int grid_w = 0;
    int latent_dim = 0;
    int tokens() const { return grid_h * grid_w; }
};

struct TextSpan {
    std::vector<int> ids;
};
struct ImageItem {
    Image image;
};
using SampleItem = std::variant<TextSpan, ImageItem>;

struct InterleavedSample {
    std::vector<SampleItem> items;
};

// Per-image bookkeeping inside a packed sequence.
struct ImageInfo {
    int sample_id = 0;
    int image_index = 0;
    int grid_h = 0;
    int grid_w = 0;
    double timestep = 1.0;  // flow time of the noisy block; 1.0 when clean-only
    bool has_noisy = false;
};

// A laid-out training/inference sequence. Class-local payloads are stored
// contiguously in token order: text_ids[j] belongs to the j-th Text token,
// clean_vae_latents.row(j) to the j-th VaeClean token, and so on.
struct PackedSequence {
    std::vector<TokenMeta> metas;
    std::vector<int> text_ids;
    std::vector<int> ntp_targets;  // aligned with text_ids; -1 = unsupervised
    Tensor vit_features;           // [n_vit, vit_dim]
    Tensor clean_vae_latents;      // [n_vae_clean, latent_dim]
    Tensor noisy_vae_latents;      // [n_vae_noisy, latent_dim]
    Tensor noise_eps;              // [n_vae_noisy, latent_dim]
    Tensor flow_targets;           // [n_vae_noisy, latent_dim]
    std::vector<double> loss_weights;  // per token, metas-aligned
    std::vector<ImageInfo> images;

    int length() const { return static_cast<int>(metas.size()); }
    double image_timestep(int sample_id, int image_index) const;
};

struct LayoutConfig {
    int vision_start_id = 2;
    int vision_end_id = 3;
    int eos_id = 1;
    int vocab_size = 0;  // 0 disables the range check
    int max_tokens_per_image = 64;
    bool dual_encoder = true;  // false: no ViT blocks (ablation arm)
    TimestepDist timestep_dist = TimestepDist::Uniform;
};

// Native-resolution patchification. If the token count exceeds max_tokens the
// image is average-pooled by the smallest integer factor that fits, keeping
// the aspect ratio.
std::pair<ImageGrid, Tensor> patchify_native(const Image& img, int patch_size, int max_tokens);

// Expands each image into <|vision_start|>, ViT block, clean-VAE block,
// <|vision_end|>. With ectf=true every image also gets a noisy block right
// after its clean blocks, corrupted at an independently sampled timestep;
// with ectf=false only the final image does.
PackedSequence layout_training_sequence(const InterleavedSample& sample, bool ectf, Rng rng,
                                        const ToyVae& vae, const ToyViT& vit,
                                        const LayoutConfig& cfg);

// Clean-only layout used as generation/inference history. No loss flags.
PackedSequence layout_context(const InterleavedSample& sample, const ToyVae& vae,
                              const ToyViT& vit, const LayoutConfig& cfg);

// The quadratic teacher-forcing baseline: one last-image-supervised pass per
// image prefix of the sample.
std::vector<PackedSequence> layout_lastimage_baseline(const InterleavedSample& sample, Rng rng,
                                                      const ToyVae& vae, const ToyViT& vit,
                                                      const LayoutConfig& cfg);

// Keep only the VaeNoisy tokens of a laid-out sequence (position IDs and
// payloads untouched). Used for unconditional flow training.
PackedSequence strip_to_noisy(const PackedSequence& seq);

// Fill temporal IDs (plus h=w=t for text) over metas in layout order:
// text counts up by one per token, every token of an image shares one
// temporal ID, and the token after an image resumes at image-t + 1.
// Noisy tokens copy the (t,h,w) of their clean counterparts. Grid-local
// h/w of visual tokens must already be set. Pure; restarts per sample_id.
void assign_position_ids(std::vector<TokenMeta>& metas);

// First-fit-decreasing packing; per-sample metas are preserved bit-exactly,
// only sample_id is rewritten.
std::vector<PackedSequence> pack_samples(const std::vector<PackedSequence>& seqs, int max_len);

}  // namespace fuselave

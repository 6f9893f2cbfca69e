// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fuselave/tensor.hpp"

namespace fuselave {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> rgb;

    Image() = default;
    Image(int h, int w) : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, 0) {}
    size_t npixels() const { return static_cast<size_t>(height) * width; }
};

// Flatten an image into per-patch vectors of length 3*p*p, patches in
// row-major grid order, channel values scaled from [0,255] to [0,1].
// Requires exact divisibility.
Tensor image_to_patches(const Image& img, int patch_size);

// Inverse of image_to_patches on continuous patch values; clamps to [0,1]
// and quantizes back to 8 bits.
Image patches_to_image(const Tensor& patches, int grid_h, int grid_w, int patch_size);

// Frozen per-patch orthogonal projection. decode(encode(x)) == x up to
// round-off; the transpose is the exact inverse. Never trained.
class ToyVae {
  public:
    ToyVae(int patch_size, uint64_t seed);

    int patch_size() const { return patch_size_; }
    int latent_dim() const { return latent_dim_; }

    Tensor encode_patches(const Tensor& patches) const;   // [n, 3p^2] -> [n, latent]
    Tensor decode_to_patches(const Tensor& latents) const;

    Tensor encode(const Image& img) const;
    Image decode(const Tensor& latents, int grid_h, int grid_w) const;

  private:
    int patch_size_;
    int latent_dim_;
    Tensor basis_;  // latent_dim x latent_dim, orthogonal
};

// Frozen seeded patch embedding plus two mixing layers with a global-mean
// context term. Distinct seed family from ToyVae. Output rows are
// RMS-normalized so features enter the model at unit scale.
class ToyViT {
  public:
    ToyViT(int patch_size, int out_dim, uint64_t seed);

    int patch_size() const { return patch_size_; }
    int out_dim() const { return out_dim_; }

    Tensor encode_patches(const Tensor& patches) const;   // [n, 3p^2] -> [n, out_dim]
    Tensor encode(const Image& img) const;

  private:
    int patch_size_;
    int out_dim_;
    Tensor embed_;                 // 3p^2 x out_dim
    std::vector<Tensor> mix_w_;    // out_dim x out_dim
    std::vector<Tensor> mix_u_;    // out_dim x out_dim (applied to mean token)
    std::vector<std::vector<double>> mix_b_;
};

}  // namespace fuselave

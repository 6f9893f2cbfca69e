// SPDX-License-Identifier: Apache-2.0
#include "fuselave/encoders.hpp"

#include <cmath>

#include "fuselave/common.hpp"

namespace fuselave {

namespace {

// Orthonormalize seeded Gaussian rows (modified Gram-Schmidt).
Tensor random_orthogonal(int n, Rng rng) {
    Tensor q(n, n);
    for (auto& v : q.data) v = rng.normal();
    for (int i = 0; i < n; ++i) {
        double* qi = q.row(i);
        for (int j = 0; j < i; ++j) {
            const double* qj = q.row(j);
            double dot = 0.0;
            for (int c = 0; c < n; ++c) dot += qi[c] * qj[c];
            for (int c = 0; c < n; ++c) qi[c] -= dot * qj[c];
        }
        double norm = 0.0;
        for (int c = 0; c < n; ++c) norm += qi[c] * qi[c];
        norm = std::sqrt(norm);
        for (int c = 0; c < n; ++c) qi[c] /= norm;
    }
    return q;
}

Tensor random_gaussian(int r, int c, double scale, Rng rng) {
    Tensor t(r, c);
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

}  // namespace

Tensor image_to_patches(const Image& img, int patch_size) {
    check(patch_size > 0, "patchify: patch_size must be positive");
    check(img.height > 0 && img.width > 0, "patchify: zero-sized image");
    check(img.height % patch_size == 0 && img.width % patch_size == 0,
          "patchify: image dims not divisible by patch_size");
    const int gh = img.height / patch_size;
    const int gw = img.width / patch_size;
    const int dim = 3 * patch_size * patch_size;
    Tensor patches(gh * gw, dim);
    for (int py = 0; py < gh; ++py) {
        for (int px = 0; px < gw; ++px) {
            double* out = patches.row(py * gw + px);
            int o = 0;
            for (int dy = 0; dy < patch_size; ++dy) {
                for (int dx = 0; dx < patch_size; ++dx) {
                    const size_t p = (static_cast<size_t>(py * patch_size + dy) * img.width +
                                      (px * patch_size + dx)) * 3;
                    for (int ch = 0; ch < 3; ++ch) {
                        out[o++] = img.rgb[p + ch] / 255.0;
                    }
                }
            }
        }
    }
    return patches;
}

Image patches_to_image(const Tensor& patches, int grid_h, int grid_w, int patch_size) {
    check(patches.rows == grid_h * grid_w, "patches_to_image: grid mismatch");
    check(patches.cols == 3 * patch_size * patch_size, "patches_to_image: dim mismatch");
    Image img(grid_h * patch_size, grid_w * patch_size);
    for (int py = 0; py < grid_h; ++py) {
        for (int px = 0; px < grid_w; ++px) {
            const double* in = patches.row(py * grid_w + px);
            int o = 0;
            for (int dy = 0; dy < patch_size; ++dy) {
                for (int dx = 0; dx < patch_size; ++dx) {
                    const size_t p = (static_cast<size_t>(py * patch_size + dy) * img.width +
                                      (px * patch_size + dx)) * 3;
                    for (int ch = 0; ch < 3; ++ch) {
                        double v = in[o++] * 255.0;
                        v = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
                        img.rgb[p + ch] = static_cast<uint8_t>(std::lround(v));
                    }
                }
            }
        }
    }
    return img;
}

ToyVae::ToyVae(int patch_size, uint64_t seed)
    : patch_size_(patch_size), latent_dim_(3 * patch_size * patch_size) {
    check(patch_size > 0, "ToyVae: patch_size must be positive");
    basis_ = random_orthogonal(latent_dim_, Rng(seed).fork(0x7ae));
}

Tensor ToyVae::encode_patches(const Tensor& patches) const {
    check(patches.cols == latent_dim_, "ToyVae::encode: patch dim mismatch");
    Tensor out(patches.rows, latent_dim_);
    matmul_nt_acc(patches.data.data(), basis_.data.data(), out.data.data(),
                  patches.rows, latent_dim_, latent_dim_);
    return out;
}

Tensor ToyVae::decode_to_patches(const Tensor& latents) const {
    check(latents.cols == latent_dim_, "ToyVae::decode: latent dim mismatch");
    Tensor out(latents.rows, latent_dim_);
    matmul_acc(latents.data.data(), basis_.data.data(), out.data.data(),
               latents.rows, latent_dim_, latent_dim_);
    return out;
}

Tensor ToyVae::encode(const Image& img) const {
    return encode_patches(image_to_patches(img, patch_size_));
}

Image ToyVae::decode(const Tensor& latents, int grid_h, int grid_w) const {
    return patches_to_image(decode_to_patches(latents), grid_h, grid_w, patch_size_);
}

ToyViT::ToyViT(int patch_size, int out_dim, uint64_t seed)
    : patch_size_(patch_size), out_dim_(out_dim) {
    check(patch_size > 0 && out_dim > 0, "ToyViT: bad dims");
    const int in_dim = 3 * patch_size * patch_size;
    Rng rng = Rng(seed).fork(0x417);
    embed_ = random_gaussian(in_dim, out_dim, 1.0 / std::sqrt(in_dim), rng.fork(1));
    for (int l = 0; l < 2; ++l) {
        mix_w_.push_back(random_gaussian(out_dim, out_dim, 1.0 / std::sqrt(out_dim), rng.fork(10 + l)));
        mix_u_.push_back(random_gaussian(out_dim, out_dim, 1.0 / std::sqrt(out_dim), rng.fork(20 + l)));
        std::vector<double> b(out_dim);
        Rng br = rng.fork(30 + l);
        for (auto& v : b) v = br.normal() * 0.1;
        mix_b_.push_back(std::move(b));
    }
}

Tensor ToyViT::encode_patches(const Tensor& patches) const {
    check(patches.cols == 3 * patch_size_ * patch_size_, "ToyViT::encode: patch dim mismatch");
    const int n = patches.rows;
    Tensor h(n, out_dim_);
    matmul_acc(patches.data.data(), embed_.data.data(), h.data.data(), n, patches.cols, out_dim_);

    for (int l = 0; l < 2; ++l) {
        std::vector<double> mean(out_dim_, 0.0);
        for (int i = 0; i < n; ++i) {
            const double* hi = h.row(i);
            for (int c = 0; c < out_dim_; ++c) mean[c] += hi[c];
        }
        for (int c = 0; c < out_dim_; ++c) mean[c] /= n;

        std::vector<double> ctx(out_dim_, 0.0);
        matmul_acc(mean.data(), mix_u_[l].data.data(), ctx.data(), 1, out_dim_, out_dim_);

        Tensor next(n, out_dim_);
        matmul_acc(h.data.data(), mix_w_[l].data.data(), next.data.data(), n, out_dim_, out_dim_);
        for (int i = 0; i < n; ++i) {
            double* ni = next.row(i);
            for (int c = 0; c < out_dim_; ++c) ni[c] = std::tanh(ni[c] + ctx[c] + mix_b_[l][c]);
        }
        h = std::move(next);
    }

    // unit-RMS rows
    for (int i = 0; i < n; ++i) {
        double* hi = h.row(i);
        double ms = 0.0;
        for (int c = 0; c < out_dim_; ++c) ms += hi[c] * hi[c];
        const double inv = 1.0 / std::sqrt(ms / out_dim_ + 1e-12);
        for (int c = 0; c < out_dim_; ++c) hi[c] *= inv;
    }
    return h;
}

Tensor ToyViT::encode(const Image& img) const {
    return encode_patches(image_to_patches(img, patch_size_));
}

}  // namespace fuselave

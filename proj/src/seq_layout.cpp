// SPDX-License-Identifier: Apache-2.0
#include "fuselave/seq_layout.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace fuselave {

namespace {

Image downscale_by(const Image& img, int f) {
    Image out(img.height / f, img.width / f);
    const int area = f * f;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                long acc = 0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx)
                        acc += img.rgb[(static_cast<size_t>(y * f + dy) * img.width + (x * f + dx)) * 3 + ch];
                out.rgb[(static_cast<size_t>(y) * out.width + x) * 3 + ch] =
                    static_cast<uint8_t>((acc + area / 2) / area);
            }
        }
    }
    return out;
}

enum class NoisyMode { None, LastImage, AllImages };

struct BuildOptions {
    NoisyMode noisy = NoisyMode::None;
    bool with_loss = true;
};

}  // namespace

double PackedSequence::image_timestep(int sample_id, int image_index) const {
    for (const auto& info : images)
        if (info.sample_id == sample_id && info.image_index == image_index) return info.timestep;
    throw std::invalid_argument("PackedSequence: unknown image");
}

std::pair<ImageGrid, Tensor> patchify_native(const Image& img, int patch_size, int max_tokens) {
    check(patch_size > 0, "patchify_native: patch_size must be positive");
    check(img.height > 0 && img.width > 0, "patchify_native: zero-sized image");
    check(max_tokens >= 1, "patchify_native: max_tokens must be >= 1");

    // Smallest integer pooling factor so the token count fits; the factor
    // must keep both dims divisible by the patch size.
    int factor = 0;
    for (int f = 1; f <= std::min(img.height, img.width); ++f) {
        if (img.height % f != 0 || img.width % f != 0) continue;
        const int h = img.height / f, w = img.width / f;
        if (h % patch_size != 0 || w % patch_size != 0) continue;
        if ((h / patch_size) * (w / patch_size) <= max_tokens) {
            factor = f;
            break;
        }
    }
    check(factor > 0, "patchify_native: no integer downscale fits the token budget");

    const Image scaled = (factor == 1) ? img : downscale_by(img, factor);
    ImageGrid grid;
    grid.pixel_h = scaled.height;
    grid.pixel_w = scaled.width;
    grid.patch_size = patch_size;
    grid.grid_h = scaled.height / patch_size;
    grid.grid_w = scaled.width / patch_size;
    grid.latent_dim = 3 * patch_size * patch_size;
    return {grid, image_to_patches(scaled, patch_size)};
}

void assign_position_ids(std::vector<TokenMeta>& metas) {
    std::map<std::pair<int, int>, long> region_t;
    long t_next = 0;
    int cur_sample = metas.empty() ? 0 : metas.front().sample_id;

    for (auto& m : metas) {
        if (m.sample_id != cur_sample) {
            cur_sample = m.sample_id;
            t_next = 0;
            region_t.clear();
        }
        switch (m.cls) {
            case ModalityClass::Text:
                m.t = m.h = m.w = t_next;
                ++t_next;
                break;
            case ModalityClass::VitClean:
            case ModalityClass::VaeClean: {
                auto key = std::make_pair(m.sample_id, m.image_index);
                auto it = region_t.find(key);
                if (it == region_t.end()) {
                    it = region_t.emplace(key, t_next).first;
                    ++t_next;
                }
                m.t = it->second;
                break;
            }
            case ModalityClass::VaeNoisy: {
                // Copies the clean counterpart's temporal ID. A noisy block
                // with no clean counterpart (a generation block) opens its
                // own image region instead.
                auto key = std::make_pair(m.sample_id, m.image_index);
                auto it = region_t.find(key);
                if (it == region_t.end()) {
                    it = region_t.emplace(key, t_next).first;
                    ++t_next;
                }
                m.t = it->second;
                break;
            }
        }
    }
}

namespace {

PackedSequence build_layout(const InterleavedSample& sample, const BuildOptions& opt, Rng rng,
                            const ToyVae& vae, const ToyViT& vit, const LayoutConfig& cfg) {
    check(!sample.items.empty(), "layout: empty sample");

    // Clean skeleton in item order. Text token IDs are range-checked here.
    // close_of_image marks the <|vision_end|> position of each image, where
    // the noisy duplicate block is inserted.
    struct CleanTok {
        ModalityClass cls;
        int text_id = -1;
        int image_index = -1;
        int h = 0, w = 0;
        int close_of_image = -1;
    };
    std::vector<CleanTok> stream;
    std::vector<ImageGrid> grids;
    std::vector<Tensor> img_vit;
    std::vector<Tensor> img_vae;

    auto check_id = [&](int id) {
        check(id >= 0 && (cfg.vocab_size == 0 || id < cfg.vocab_size),
              "layout: text token ID out of vocabulary range");
    };

    for (const auto& item : sample.items) {
        if (const auto* span = std::get_if<TextSpan>(&item)) {
            for (int id : span->ids) {
                check_id(id);
                stream.push_back({ModalityClass::Text, id, -1, 0, 0, -1});
            }
        } else {
            const auto& img = std::get<ImageItem>(item).image;
            auto [grid, patches] = patchify_native(img, vae.patch_size(), cfg.max_tokens_per_image);
            check(grid.tokens() > 0, "layout: image with zero patches");
            const int idx = static_cast<int>(grids.size());
            grids.push_back(grid);
            img_vit.push_back(vit.encode_patches(patches));
            img_vae.push_back(vae.encode_patches(patches));

            check_id(cfg.vision_start_id);
            check_id(cfg.vision_end_id);
            stream.push_back({ModalityClass::Text, cfg.vision_start_id, -1, 0, 0, -1});
            if (cfg.dual_encoder)
                for (int h = 0; h < grid.grid_h; ++h)
                    for (int w = 0; w < grid.grid_w; ++w)
                        stream.push_back({ModalityClass::VitClean, -1, idx, h, w, -1});
            for (int h = 0; h < grid.grid_h; ++h)
                for (int w = 0; w < grid.grid_w; ++w)
                    stream.push_back({ModalityClass::VaeClean, -1, idx, h, w, -1});
            stream.push_back({ModalityClass::Text, cfg.vision_end_id, -1, 0, 0, idx});
        }
    }

    // NTP targets over the clean stream: a text token is supervised iff the
    // next clean token is also text. Noisy insertion below cannot change
    // this, which keeps targets identical between ECTF and baseline layouts.
    std::vector<int> targets(stream.size(), -1);
    for (size_t i = 0; i + 1 < stream.size(); ++i) {
        if (stream[i].cls == ModalityClass::Text && stream[i + 1].cls == ModalityClass::Text)
            targets[i] = stream[i + 1].text_id;
    }

    const int n_images = static_cast<int>(grids.size());
    auto wants_noisy = [&](int image_index) {
        if (opt.noisy == NoisyMode::None) return false;
        if (opt.noisy == NoisyMode::AllImages) return true;
        return image_index == n_images - 1;
    };

    PackedSequence seq;
    const int latent_dim = vae.latent_dim();
    int n_vit = 0, n_vaec = 0, n_vaen = 0;
    for (const auto& ct : stream) {
        if (ct.cls == ModalityClass::VitClean) ++n_vit;
        if (ct.cls == ModalityClass::VaeClean) ++n_vaec;
    }
    for (int i = 0; i < n_images; ++i) {
        if (wants_noisy(i)) n_vaen += grids[i].tokens();
    }
    seq.vit_features = Tensor(n_vit, vit.out_dim());
    seq.clean_vae_latents = Tensor(n_vaec, latent_dim);
    seq.noisy_vae_latents = Tensor(n_vaen, latent_dim);
    seq.noise_eps = Tensor(n_vaen, latent_dim);
    seq.flow_targets = Tensor(n_vaen, latent_dim);

    // Per-image flow timesteps and noise, drawn in image order.
    std::vector<double> tsteps(n_images, 1.0);
    for (int i = 0; i < n_images; ++i) {
        if (wants_noisy(i)) tsteps[i] = sample_timestep(rng, cfg.timestep_dist);
    }

    int vit_row = 0, vaec_row = 0, vaen_row = 0;
    for (size_t si = 0; si < stream.size(); ++si) {
        const auto& ct = stream[si];
        TokenMeta m;
        m.cls = ct.cls;
        m.image_index = ct.image_index;
        m.h = ct.h;
        m.w = ct.w;
        if (ct.cls == ModalityClass::Text) {
            seq.text_ids.push_back(ct.text_id);
            seq.ntp_targets.push_back(opt.with_loss ? targets[si] : -1);
            m.has_ntp_loss = opt.with_loss && targets[si] >= 0;
            seq.metas.push_back(m);
        } else if (ct.cls == ModalityClass::VitClean) {
            std::copy_n(img_vit[ct.image_index].row(ct.h * grids[ct.image_index].grid_w + ct.w),
                        vit.out_dim(), seq.vit_features.row(vit_row++));
            seq.metas.push_back(m);
        } else {
            std::copy_n(img_vae[ct.image_index].row(ct.h * grids[ct.image_index].grid_w + ct.w),
                        latent_dim, seq.clean_vae_latents.row(vaec_row++));
            seq.metas.push_back(m);
        }

        const int img = ct.close_of_image;
        if (img >= 0 && wants_noisy(img)) {
            const double t = tsteps[img];
            const auto& g = grids[img];
            for (int h = 0; h < g.grid_h; ++h) {
                for (int w = 0; w < g.grid_w; ++w) {
                    TokenMeta nm;
                    nm.cls = ModalityClass::VaeNoisy;
                    nm.image_index = img;
                    nm.h = h;
                    nm.w = w;
                    nm.has_flow_loss = true;
                    seq.metas.push_back(nm);

                    const double* x = img_vae[img].row(h * g.grid_w + w);
                    double* noisy = seq.noisy_vae_latents.row(vaen_row);
                    double* eps = seq.noise_eps.row(vaen_row);
                    double* tgt = seq.flow_targets.row(vaen_row);
                    for (int c = 0; c < latent_dim; ++c) {
                        eps[c] = rng.normal();
                        noisy[c] = t * x[c] + (1.0 - t) * eps[c];
                        tgt[c] = x[c] - eps[c];
                    }
                    ++vaen_row;
                }
            }
        }
    }

    for (int i = 0; i < n_images; ++i) {
        ImageInfo info;
        info.sample_id = 0;
        info.image_index = i;
        info.grid_h = grids[i].grid_h;
        info.grid_w = grids[i].grid_w;
        info.timestep = tsteps[i];
        info.has_noisy = wants_noisy(i);
        seq.images.push_back(info);
    }

    assign_position_ids(seq.metas);

    seq.loss_weights.assign(seq.metas.size(), 0.0);
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        if (seq.metas[i].has_ntp_loss || seq.metas[i].has_flow_loss) seq.loss_weights[i] = 1.0;
    }
    return seq;
}

}  // namespace

PackedSequence layout_training_sequence(const InterleavedSample& sample, bool ectf, Rng rng,
                                        const ToyVae& vae, const ToyViT& vit,
                                        const LayoutConfig& cfg) {
    BuildOptions opt;
    opt.noisy = ectf ? NoisyMode::AllImages : NoisyMode::LastImage;
    opt.with_loss = true;
    return build_layout(sample, opt, rng, vae, vit, cfg);
}

PackedSequence layout_context(const InterleavedSample& sample, const ToyVae& vae,
                              const ToyViT& vit, const LayoutConfig& cfg) {
    BuildOptions opt;
    opt.noisy = NoisyMode::None;
    opt.with_loss = false;
    return build_layout(sample, opt, Rng(0), vae, vit, cfg);
}

std::vector<PackedSequence> layout_lastimage_baseline(const InterleavedSample& sample, Rng rng,
                                                      const ToyVae& vae, const ToyViT& vit,
                                                      const LayoutConfig& cfg) {
    std::vector<PackedSequence> passes;
    InterleavedSample prefix;
    int pass = 0;
    for (const auto& item : sample.items) {
        prefix.items.push_back(item);
        if (std::holds_alternative<ImageItem>(item)) {
            passes.push_back(layout_training_sequence(prefix, false, rng.fork(pass), vae, vit, cfg));
            ++pass;
        }
    }
    return passes;
}

PackedSequence strip_to_noisy(const PackedSequence& seq) {
    PackedSequence out;
    out.noisy_vae_latents = seq.noisy_vae_latents;
    out.noise_eps = seq.noise_eps;
    out.flow_targets = seq.flow_targets;
    out.images = seq.images;
    for (size_t i = 0; i < seq.metas.size(); ++i) {
        if (seq.metas[i].cls == ModalityClass::VaeNoisy) {
            out.metas.push_back(seq.metas[i]);
            out.loss_weights.push_back(seq.loss_weights[i]);
        }
    }
    return out;
}

std::vector<PackedSequence> pack_samples(const std::vector<PackedSequence>& seqs, int max_len) {
    check(max_len > 0, "pack_samples: max_len must be positive");
    for (const auto& s : seqs)
        check(s.length() <= max_len, "pack_samples: sequence exceeds max_len");

    // First-fit-decreasing; ties keep input order.
    std::vector<size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return seqs[a].length() > seqs[b].length(); });

    std::vector<std::vector<size_t>> bins;
    std::vector<int> bin_free;
    for (size_t idx : order) {
        const int len = seqs[idx].length();
        bool placed = false;
        for (size_t b = 0; b < bins.size(); ++b) {
            if (bin_free[b] >= len) {
                bins[b].push_back(idx);
                bin_free[b] -= len;
                placed = true;
                break;
            }
        }
        if (!placed) {
            bins.push_back({idx});
            bin_free.push_back(max_len - len);
        }
    }

    std::vector<PackedSequence> out;
    for (const auto& bin : bins) {
        PackedSequence merged;
        int next_sample = 0;
        int vit_rows = 0, vaec_rows = 0, vaen_rows = 0, vit_dim = 0, latent_dim = 0;
        for (size_t idx : bin) {
            vit_rows += seqs[idx].vit_features.rows;
            vaec_rows += seqs[idx].clean_vae_latents.rows;
            vaen_rows += seqs[idx].noisy_vae_latents.rows;
            vit_dim = std::max(vit_dim, seqs[idx].vit_features.cols);
            latent_dim = std::max(latent_dim, seqs[idx].clean_vae_latents.cols);
        }
        merged.vit_features = Tensor(vit_rows, vit_dim);
        merged.clean_vae_latents = Tensor(vaec_rows, latent_dim);
        merged.noisy_vae_latents = Tensor(vaen_rows, latent_dim);
        merged.noise_eps = Tensor(vaen_rows, latent_dim);
        merged.flow_targets = Tensor(vaen_rows, latent_dim);

        int vr = 0, cr = 0, nr = 0;
        for (size_t idx : bin) {
            const PackedSequence& s = seqs[idx];
            const int sid = next_sample++;
            for (TokenMeta m : s.metas) {
                m.sample_id = sid;
                merged.metas.push_back(m);
            }
            merged.text_ids.insert(merged.text_ids.end(), s.text_ids.begin(), s.text_ids.end());
            merged.ntp_targets.insert(merged.ntp_targets.end(), s.ntp_targets.begin(),
                                      s.ntp_targets.end());
            merged.loss_weights.insert(merged.loss_weights.end(), s.loss_weights.begin(),
                                       s.loss_weights.end());
            for (int r = 0; r < s.vit_features.rows; ++r)
                std::copy_n(s.vit_features.row(r), s.vit_features.cols, merged.vit_features.row(vr++));
            for (int r = 0; r < s.clean_vae_latents.rows; ++r)
                std::copy_n(s.clean_vae_latents.row(r), s.clean_vae_latents.cols,
                            merged.clean_vae_latents.row(cr++));
            for (int r = 0; r < s.noisy_vae_latents.rows; ++r, ++nr) {
                std::copy_n(s.noisy_vae_latents.row(r), s.noisy_vae_latents.cols,
                            merged.noisy_vae_latents.row(nr));
                std::copy_n(s.noise_eps.row(r), s.noise_eps.cols, merged.noise_eps.row(nr));
                std::copy_n(s.flow_targets.row(r), s.flow_targets.cols, merged.flow_targets.row(nr));
            }
            for (ImageInfo info : s.images) {
                info.sample_id = sid;
                merged.images.push_back(info);
            }
        }
        out.push_back(std::move(merged));
    }
    return out;
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "fuselave/fusion_net.hpp"

namespace fuselave {

// Everything beyond model weights needed to rebuild the inference stack:
// frozen encoder seeds and the layout geometry.
struct CheckpointExtra {
    uint64_t vae_seed = 11;
    uint64_t vit_seed = 12;
    int patch_size = 4;
    int max_tokens_per_image = 64;
    bool dual_encoder = true;
    bool text_sees_clean_vae = false;
    int canvas = 16;
    int gen_grid_h = 4;
    int gen_grid_w = 4;
};

// FLCK container: magic "FLCK", u32 version, a typed key/value config block,
// then named tensor records (u32 name length + name + u8 dtype tag + u32
// rows + u32 cols + raw little-endian doubles) in parameter creation order.
void save_checkpoint(const std::string& path, const FusionModelParams& params,
                     const CheckpointExtra& extra);

std::unique_ptr<FusionModelParams> load_checkpoint(const std::string& path,
                                                   CheckpointExtra& extra);

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#include "fuselave/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "fuselave/common.hpp"

namespace fuselave {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

uint32_t get_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    uint8_t b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    const uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<long>(s.size()));
}

std::string get_str(std::istream& is) {
    const uint32_t n = get_u32(is);
    check(n < (1u << 20), "checkpoint: absurd string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

enum : uint8_t { kEntryInt = 0, kEntryFloat = 1 };

struct ConfigWriter {
    std::ostream& os;
    void put(const std::string& key, int64_t v) {
        put_str(os, key);
        os.put(static_cast<char>(kEntryInt));
        put_u64(os, static_cast<uint64_t>(v));
    }
    void putf(const std::string& key, double v) {
        put_str(os, key);
        os.put(static_cast<char>(kEntryFloat));
        put_f64(os, v);
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const FusionModelParams& params,
                     const CheckpointExtra& extra) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "save_checkpoint: cannot open " + path);
    os.write("FLCK", 4);
    put_u32(os, 1);  // version

    const ModelConfig& c = params.config;
    put_u32(os, 22);  // config entry count
    ConfigWriter w{os};
    w.put("layers", c.layers);
    w.put("width", c.width);
    w.put("heads", c.heads);
    w.put("head_dim", c.head_dim);
    w.put("ffn_mult", c.ffn_mult);
    w.put("vocab_size", c.vocab_size);
    w.put("latent_dim", c.latent_dim);
    w.put("tstep_features", c.tstep_features);
    w.put("rope_scheme", c.rope_scheme == RopeScheme::ILRoPE ? 0 : 1);
    w.putf("rope_base", c.rope_base);
    w.put("dual_branch", c.dual_branch ? 1 : 0);
    w.putf("init_sigma", c.init_sigma);
    w.put("init_seed", static_cast<int64_t>(c.init_seed));
    w.put("vae_seed", static_cast<int64_t>(extra.vae_seed));
    w.put("vit_seed", static_cast<int64_t>(extra.vit_seed));
    w.put("patch_size", extra.patch_size);
    w.put("max_tokens_per_image", extra.max_tokens_per_image);
    w.put("dual_encoder", extra.dual_encoder ? 1 : 0);
    w.put("text_sees_clean_vae", extra.text_sees_clean_vae ? 1 : 0);
    w.put("canvas", extra.canvas);
    w.put("gen_grid_h", extra.gen_grid_h);
    w.put("gen_grid_w", extra.gen_grid_w);

    put_u32(os, static_cast<uint32_t>(params.params.size()));
    for (const auto& p : params.params) {
        put_str(os, p->name);
        os.put(0);  // dtype f64
        put_u32(os, static_cast<uint32_t>(p->value.rows));
        put_u32(os, static_cast<uint32_t>(p->value.cols));
        for (double d : p->value.data) put_f64(os, d);
    }
    check(os.good(), "save_checkpoint: write failure");
}

std::unique_ptr<FusionModelParams> load_checkpoint(const std::string& path,
                                                   CheckpointExtra& extra) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::string(magic, 4) == "FLCK", "load_checkpoint: bad magic");
    const uint32_t version = get_u32(is);
    check(version == 1, "load_checkpoint: unsupported version");

    std::map<std::string, int64_t> ints;
    std::map<std::string, double> floats;
    const uint32_t n_cfg = get_u32(is);
    for (uint32_t i = 0; i < n_cfg; ++i) {
        const std::string key = get_str(is);
        const int tag = is.get();
        if (tag == kEntryInt)
            ints[key] = static_cast<int64_t>(get_u64(is));
        else if (tag == kEntryFloat)
            floats[key] = get_f64(is);
        else
            throw std::invalid_argument("load_checkpoint: bad config entry tag");
    }
    auto geti = [&](const std::string& k) {
        auto it = ints.find(k);
        check(it != ints.end(), "load_checkpoint: missing config key " + k);
        return it->second;
    };

    ModelConfig cfg;
    cfg.layers = static_cast<int>(geti("layers"));
    cfg.width = static_cast<int>(geti("width"));
    cfg.heads = static_cast<int>(geti("heads"));
    cfg.head_dim = static_cast<int>(geti("head_dim"));
    cfg.ffn_mult = static_cast<int>(geti("ffn_mult"));
    cfg.vocab_size = static_cast<int>(geti("vocab_size"));
    cfg.latent_dim = static_cast<int>(geti("latent_dim"));
    cfg.tstep_features = static_cast<int>(geti("tstep_features"));
    cfg.rope_scheme = geti("rope_scheme") == 0 ? RopeScheme::ILRoPE : RopeScheme::MRoPE;
    cfg.rope_base = floats.count("rope_base") ? floats["rope_base"] : 10000.0;
    cfg.dual_branch = geti("dual_branch") != 0;
    cfg.init_sigma = floats.count("init_sigma") ? floats["init_sigma"] : 0.02;
    cfg.init_seed = static_cast<uint64_t>(geti("init_seed"));

    extra.vae_seed = static_cast<uint64_t>(geti("vae_seed"));
    extra.vit_seed = static_cast<uint64_t>(geti("vit_seed"));
    extra.patch_size = static_cast<int>(geti("patch_size"));
    extra.max_tokens_per_image = static_cast<int>(geti("max_tokens_per_image"));
    extra.dual_encoder = geti("dual_encoder") != 0;
    extra.text_sees_clean_vae = geti("text_sees_clean_vae") != 0;
    extra.canvas = static_cast<int>(geti("canvas"));
    extra.gen_grid_h = static_cast<int>(geti("gen_grid_h"));
    extra.gen_grid_w = static_cast<int>(geti("gen_grid_w"));

    auto params = std::make_unique<FusionModelParams>(cfg);
    const uint32_t n_tensors = get_u32(is);
    check(n_tensors == params->params.size(), "load_checkpoint: tensor count mismatch");
    for (uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = get_str(is);
        const int dtype = is.get();
        check(dtype == 0, "load_checkpoint: unsupported dtype");
        const uint32_t rows = get_u32(is);
        const uint32_t cols = get_u32(is);
        ParamTensor* p = params->find(name);
        check(p != nullptr, "load_checkpoint: unknown tensor " + name);
        check(p->value.rows == static_cast<int>(rows) && p->value.cols == static_cast<int>(cols),
              "load_checkpoint: shape mismatch for " + name);
        for (auto& d : p->value.data) d = get_f64(is);
    }
    check(is.good(), "load_checkpoint: truncated file");
    return params;
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#include "fuselave/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fuselave/glyph.hpp"

namespace fuselave {

RunConfig default_config() {
    RunConfig cfg;
    cfg.model.vocab_size = Vocabulary::instance().size();
    cfg.layout.vision_start_id = Vocabulary::instance().vision_start();
    cfg.layout.vision_end_id = Vocabulary::instance().vision_end();
    cfg.layout.eos_id = Vocabulary::instance().eos();
    cfg.layout.vocab_size = cfg.model.vocab_size;
    cfg.train.out_dir = "runs/default";
    return cfg;
}

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct KV {
    std::string section, key, value;
};

std::vector<KV> tokenize(const std::string& text) {
    std::vector<KV> out;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        KV kv;
        kv.section = section;
        kv.key = trim(line.substr(0, eq));
        kv.value = trim(line.substr(eq + 1));
        if (kv.section.empty()) throw ConfigError("config: key before any [section]");
        if (kv.key.empty() || kv.value.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        out.push_back(kv);
    }
    return out;
}

long to_int(const KV& kv) {
    try {
        size_t pos = 0;
        const long v = std::stol(kv.value, &pos);
        if (pos != kv.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("config [" + kv.section + "] " + kv.key + ": expected integer, got '" +
                          kv.value + "'");
    }
}

double to_double(const KV& kv) {
    try {
        size_t pos = 0;
        const double v = std::stod(kv.value, &pos);
        if (pos != kv.value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("config [" + kv.section + "] " + kv.key + ": expected number, got '" +
                          kv.value + "'");
    }
}

bool to_bool(const KV& kv) {
    if (kv.value == "true" || kv.value == "1" || kv.value == "on") return true;
    if (kv.value == "false" || kv.value == "0" || kv.value == "off") return false;
    throw ConfigError("config [" + kv.section + "] " + kv.key + ": expected boolean");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg = default_config();
    for (const KV& kv : tokenize(text)) {
        const std::string& s = kv.section;
        const std::string& k = kv.key;
        if (s == "corpus") {
            if (k == "seed") cfg.corpus.seed = static_cast<uint64_t>(to_int(kv));
            else if (k == "t2i") cfg.corpus.n_t2i = static_cast<int>(to_int(kv));
            else if (k == "i2t") cfg.corpus.n_i2t = static_cast<int>(to_int(kv));
            else if (k == "edit") cfg.corpus.n_edit = static_cast<int>(to_int(kv));
            else if (k == "text") cfg.corpus.n_text = static_cast<int>(to_int(kv));
            else if (k == "eval_t2i") cfg.corpus.eval_t2i = static_cast<int>(to_int(kv));
            else if (k == "eval_i2t") cfg.corpus.eval_i2t = static_cast<int>(to_int(kv));
            else if (k == "eval_edit") cfg.corpus.eval_edit = static_cast<int>(to_int(kv));
            else if (k == "eval_text") cfg.corpus.eval_text = static_cast<int>(to_int(kv));
            else if (k == "canvas") { cfg.corpus.canvas = static_cast<int>(to_int(kv)); cfg.extra.canvas = cfg.corpus.canvas; }
            else if (k == "two_shape_fraction") cfg.corpus.two_shape_fraction = to_double(kv);
            else if (k == "two_edit_fraction") cfg.corpus.two_edit_fraction = to_double(kv);
            else if (k == "patch_size") cfg.extra.patch_size = static_cast<int>(to_int(kv));
            else throw ConfigError("config: unknown key [corpus] " + k);
        } else if (s == "model") {
            if (k == "layers") cfg.model.layers = static_cast<int>(to_int(kv));
            else if (k == "width") cfg.model.width = static_cast<int>(to_int(kv));
            else if (k == "heads") cfg.model.heads = static_cast<int>(to_int(kv));
            else if (k == "head_dim") cfg.model.head_dim = static_cast<int>(to_int(kv));
            else if (k == "ffn_mult") cfg.model.ffn_mult = static_cast<int>(to_int(kv));
            else if (k == "rope") {
                if (kv.value == "ilrope") cfg.model.rope_scheme = RopeScheme::ILRoPE;
                else if (kv.value == "mrope") cfg.model.rope_scheme = RopeScheme::MRoPE;
                else throw ConfigError("config: rope must be ilrope or mrope");
            }
            else if (k == "rope_base") cfg.model.rope_base = to_double(kv);
            else if (k == "dual_branch") cfg.model.dual_branch = to_bool(kv);
            else if (k == "dual_encoder") { cfg.layout.dual_encoder = to_bool(kv); cfg.extra.dual_encoder = cfg.layout.dual_encoder; }
            else if (k == "text_sees_clean_vae") { cfg.train.mask_rules.text_sees_clean_vae = to_bool(kv); cfg.eval.mask_rules.text_sees_clean_vae = cfg.train.mask_rules.text_sees_clean_vae; cfg.extra.text_sees_clean_vae = cfg.train.mask_rules.text_sees_clean_vae; }
            else if (k == "init_seed") cfg.model.init_seed = static_cast<uint64_t>(to_int(kv));
            else if (k == "init_sigma") cfg.model.init_sigma = to_double(kv);
            else if (k == "vae_seed") cfg.extra.vae_seed = static_cast<uint64_t>(to_int(kv));
            else if (k == "vit_seed") cfg.extra.vit_seed = static_cast<uint64_t>(to_int(kv));
            else if (k == "max_tokens_per_image") { cfg.layout.max_tokens_per_image = static_cast<int>(to_int(kv)); cfg.extra.max_tokens_per_image = cfg.layout.max_tokens_per_image; }
            else throw ConfigError("config: unknown key [model] " + k);
        } else if (s == "train") {
            if (k == "seed") cfg.train.seed = static_cast<uint64_t>(to_int(kv));
            else if (k == "steps") cfg.train.steps = static_cast<int>(to_int(kv));
            else if (k == "warmup") cfg.train.warmup = static_cast<int>(to_int(kv));
            else if (k == "lr") cfg.train.lr = to_double(kv);
            else if (k == "lr_min_frac") cfg.train.lr_min_frac = to_double(kv);
            else if (k == "lambda") cfg.train.lambda_ntp = to_double(kv);
            else if (k == "batch_tokens") cfg.train.batch_tokens = static_cast<int>(to_int(kv));
            else if (k == "max_len") cfg.train.max_len = static_cast<int>(to_int(kv));
            else if (k == "shards") cfg.train.shards = static_cast<int>(to_int(kv));
            else if (k == "ectf") cfg.train.ectf = to_bool(kv);
            else if (k == "mix_t2i") cfg.train.mix_t2i = to_double(kv);
            else if (k == "mix_i2t") cfg.train.mix_i2t = to_double(kv);
            else if (k == "mix_edit") cfg.train.mix_edit = to_double(kv);
            else if (k == "mix_text") cfg.train.mix_text = to_double(kv);
            else if (k == "p_drop_empty") cfg.train.p_drop_empty = to_double(kv);
            else if (k == "p_drop_image_only") cfg.train.p_drop_image_only = to_double(kv);
            else if (k == "log_every") cfg.train.log_every = static_cast<int>(to_int(kv));
            else if (k == "ckpt_every") cfg.train.ckpt_every = static_cast<int>(to_int(kv));
            else if (k == "out_dir") cfg.train.out_dir = kv.value;
            else throw ConfigError("config: unknown key [train] " + k);
        } else if (s == "sample") {
            if (k == "gamma") cfg.sample_cfg.gamma = to_double(kv);
            else if (k == "gamma_img") cfg.sample_cfg.gamma_img = to_double(kv);
            else if (k == "steps") cfg.ode.steps = static_cast<int>(to_int(kv));
            else if (k == "seed") cfg.sample_seed = static_cast<uint64_t>(to_int(kv));
            else if (k == "temperature") cfg.sample_temperature = to_double(kv);
            else if (k == "grid_h") cfg.extra.gen_grid_h = static_cast<int>(to_int(kv));
            else if (k == "grid_w") cfg.extra.gen_grid_w = static_cast<int>(to_int(kv));
            else throw ConfigError("config: unknown key [sample] " + k);
        } else if (s == "eval") {
            if (k == "n_per_task") cfg.eval.n_per_task = static_cast<int>(to_int(kv));
            else if (k == "seed") cfg.eval.seed = static_cast<uint64_t>(to_int(kv));
            else throw ConfigError("config: unknown key [eval] " + k);
        } else {
            throw ConfigError("config: unknown section [" + s + "]");
        }
    }
    cfg.eval.cfg = cfg.sample_cfg;
    cfg.eval.ode = cfg.ode;
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw ConfigError("config: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_config_text(os.str());
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* env = std::getenv("FUSELAVE_SEED")) {
        try {
            const uint64_t seed = std::stoull(env);
            cfg.corpus.seed = seed;
            cfg.train.seed = seed;
            cfg.sample_seed = seed;
            cfg.eval.seed = seed;
            cfg.model.init_seed = seed;
        } catch (...) {
            throw ConfigError("FUSELAVE_SEED: expected an unsigned integer");
        }
    }
}

}  // namespace fuselave

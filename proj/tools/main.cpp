// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fuselave/ablate.hpp"
#include "fuselave/config.hpp"

namespace fs = std::filesystem;
using namespace fuselave;

namespace {

RunConfig load_run_config(const std::string& config_path) {
    RunConfig cfg = config_path.empty() ? default_config() : parse_config_file(config_path);
    apply_env_overrides(cfg);
    return cfg;
}

std::vector<int> tokenize_prompt(const std::string& prompt) {
    const auto& vocab = Vocabulary::instance();
    std::vector<int> ids{vocab.bos()};
    std::istringstream is(prompt);
    std::string w;
    while (is >> w) ids.push_back(vocab.id(w));
    return ids;
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    gen_corpus(cfg.corpus, out_dir);
    std::cout << "wrote " << out_dir << "/train.flv (hash " << std::hex
              << file_hash(out_dir + "/train.flv") << ") and eval.flv (hash "
              << file_hash(out_dir + "/eval.flv") << std::dec << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int steps, int shards, bool pretest) {
    RunConfig cfg = load_run_config(config_path);
    if (!out_dir.empty()) cfg.train.out_dir = out_dir;
    if (steps >= 0) cfg.train.steps = steps;
    if (shards > 0) cfg.train.shards = shards;

    if (pretest) {
        std::cout << "running 2D flow pretest...\n";
        const ToyFlowResult toy = toy_flow_pretest(cfg.train.seed);
        std::cout << "toy 2D flow: " << toy.hit_rate * 100.0 << "% of " << toy.n_samples
                  << " samples within 3 sigma\n";
        if (toy.hit_rate < 0.95) {
            std::cerr << "pretest below threshold; aborting\n";
            return 3;
        }
    }

    const auto records = read_dataset(data_dir + "/train.flv");
    ToyVae vae(cfg.extra.patch_size, cfg.extra.vae_seed);
    ToyViT vit(cfg.extra.patch_size, cfg.model.width, cfg.extra.vit_seed);
    TrainResult res = train(cfg.model, cfg.train, cfg.layout, records, vae, vit, cfg.extra);
    std::cout << "final checkpoint: " << res.final_ckpt << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& prompt, double gamma, double gamma_img,
               int steps, uint64_t seed, const std::string& out_dir, double temperature,
               int max_images, int max_tokens) {
    CheckpointExtra extra;
    auto params = load_checkpoint(ckpt, extra);
    ToyVae vae(extra.patch_size, extra.vae_seed);
    ToyViT vit(extra.patch_size, params->config.width, extra.vit_seed);

    RunConfig defaults = default_config();
    LayoutConfig lcfg = defaults.layout;
    lcfg.dual_encoder = extra.dual_encoder;
    lcfg.max_tokens_per_image = extra.max_tokens_per_image;
    MaskRules rules;
    rules.text_sees_clean_vae = extra.text_sees_clean_vae;

    InterleavedSample p;
    p.items.push_back(TextSpan{tokenize_prompt(prompt)});

    CfgParams cfg{gamma, gamma_img};
    OdeConfig ode{steps};
    GenerationLimits limits;
    limits.seed = seed;
    limits.temperature = temperature;
    limits.max_images = max_images;
    limits.max_total_tokens = max_tokens;

    GenerationResult gen = generate_interleaved(p, *params, vae, vit, lcfg, cfg, ode, limits,
                                                extra.gen_grid_h, extra.gen_grid_w, rules);

    fs::create_directories(out_dir);
    for (size_t i = 0; i < gen.new_images.size(); ++i)
        write_ppm(gen.new_images[i], out_dir + "/image_" + std::to_string(i) + ".ppm");
    {
        std::ofstream t(out_dir + "/transcript.txt");
        t << "prompt: " << prompt << "\n";
        t << "generated text: " << tokens_to_string(gen.new_text_ids) << "\n";
        t << "images: " << gen.new_images.size() << "\n";
        t << (gen.truncated ? "truncated: yes\n" : "truncated: no\n");
        t << "-- raw transcript --\n" << gen.transcript_text;
    }
    std::cout << "generated " << gen.new_images.size() << " image(s), "
              << gen.new_text_ids.size() << " text token(s) -> " << out_dir << "\n";
    std::cout << "text: " << tokens_to_string(gen.new_text_ids) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int n_per_task, uint64_t seed,
             const std::string& out_json) {
    CheckpointExtra extra;
    auto params = load_checkpoint(ckpt, extra);
    ToyVae vae(extra.patch_size, extra.vae_seed);
    ToyViT vit(extra.patch_size, params->config.width, extra.vit_seed);

    RunConfig defaults = default_config();
    LayoutConfig lcfg = defaults.layout;
    lcfg.dual_encoder = extra.dual_encoder;
    lcfg.max_tokens_per_image = extra.max_tokens_per_image;

    EvalConfig ecfg;
    ecfg.n_per_task = n_per_task;
    ecfg.seed = seed;
    ecfg.mask_rules.text_sees_clean_vae = extra.text_sees_clean_vae;

    const auto records = read_dataset(data_dir + "/eval.flv");
    EvalReport rep = evaluate(*params, records, lcfg, vae, vit, extra, ecfg);
    std::cout << report_text(rep);
    if (!out_json.empty()) {
        std::ofstream o(out_json);
        o << report_json(rep) << "\n";
        std::cout << "report written to " << out_json << "\n";
    }
    return 0;
}

int cmd_check_masks(const std::string& desc, bool ectf, bool dual_encoder, bool text_sees_vae,
                    const std::string& pgm, bool dump_rope, const std::string& rope_scheme,
                    int head_dim) {
    if (dump_rope) {
        RopeConfig rc;
        rc.head_dim = head_dim;
        rc.scheme = rope_scheme == "mrope" ? RopeScheme::MRoPE : RopeScheme::ILRoPE;
        const FrequencyAllocation alloc = allocate_frequencies(rc);
        std::cout << "pair_index,axis,theta\n";
        for (size_t i = 0; i < alloc.axis.size(); ++i) {
            const char* ax = alloc.axis[i] == RopeAxis::T ? "T"
                             : alloc.axis[i] == RopeAxis::H ? "H"
                                                            : "W";
            std::cout << i << ',' << ax << ',' << alloc.theta[i] << "\n";
        }
        return 0;
    }
    const auto items = parse_layout_desc(desc);
    const auto metas = synthetic_layout_metas(items, ectf, dual_encoder);
    check(metas.size() <= 4096, "check-masks: dense output capped at L = 4096");
    MaskRules rules;
    rules.text_sees_clean_vae = text_sees_vae;
    const AttentionMask mask = build_mask(metas, rules);
    const auto dense = mask.dense();
    const int L = mask.length;
    for (int q = 0; q < L; ++q) {
        for (int k = 0; k < L; ++k) std::cout << (dense[static_cast<size_t>(q) * L + k] ? '1' : '0');
        std::cout << '\n';
    }
    if (!pgm.empty()) {
        std::ofstream f(pgm, std::ios::binary);
        f << "P5\n" << L << ' ' << L << "\n255\n";
        for (size_t i = 0; i < dense.size(); ++i) f.put(dense[i] ? char(255) : char(0));
        std::cout << "mask image written to " << pgm << "\n";
    }
    return 0;
}

int cmd_bench_ectf(const std::string& images, const std::string& grids, int n_text) {
    auto parse_list = [](const std::string& s) {
        std::vector<int> out;
        std::stringstream ss(s);
        std::string part;
        while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
        check(!out.empty(), "bench-ectf: empty list");
        return out;
    };
    std::cout << bench_table(bench_ectf(parse_list(images), parse_list(grids), n_text));
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir, int steps,
               const std::string& arms_csv, const std::string& out_json) {
    RunConfig cfg = load_run_config(config_path);
    if (steps >= 0) cfg.train.steps = steps;
    cfg.train.quiet = true;
    cfg.eval.quiet = true;

    std::vector<AblateArm> arms;
    for (const auto& arm : default_ablation_grid()) {
        if (arms_csv.empty() ||
            arms_csv.find(arm.name.substr(0, 1)) != std::string::npos)
            arms.push_back(arm);
    }
    const auto train_records = read_dataset(data_dir + "/train.flv");
    const auto eval_records = read_dataset(data_dir + "/eval.flv");
    const uint64_t hash = file_hash(data_dir + "/train.flv");
    const auto rows = ablate(arms, cfg.model, cfg.train, cfg.layout, train_records, eval_records,
                             cfg.eval, cfg.extra, hash);
    std::cout << ablate_table(rows);
    if (!out_json.empty()) {
        std::ofstream o(out_json);
        o << "[\n";
        for (size_t i = 0; i < rows.size(); ++i) {
            o << "  {\"name\":\"" << rows[i].name << "\",\"flow\":" << rows[i].final_flow_smoothed
              << ",\"ntp\":" << rows[i].final_ntp_smoothed << ",\"i2t\":" << rows[i].i2t_exact
              << ",\"t2i\":" << rows[i].t2i_full << ",\"corpus\":\"" << std::hex
              << rows[i].corpus_hash << std::dec << "\"}" << (i + 1 < rows.size() ? "," : "")
              << "\n";
        }
        o << "]\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fuselave: interleaved multimodal AR+flow toy stack"};
    app.require_subcommand(1);

    std::string config_path, data_dir = "data", out_dir, ckpt, prompt, pgm, desc;
    std::string images = "1,2,4,8", grids = "16,64", rope_scheme = "ilrope", out_json, arms;
    int steps = -1, shards = -1, n_per_task = 100, n_text = 32, head_dim = 128;
    int ode_steps = 50, max_images = 4, max_tokens = 1024;
    uint64_t seed = 5;
    double gamma = 7.5, gamma_img = 1.5, temperature = 0.0;
    bool pretest = false, no_ectf = false, no_dual_encoder = false, text_sees_vae = false;
    bool dump_rope = false;

    auto* gen = app.add_subcommand("gen-corpus", "generate the glyph dataset files");
    gen->add_option("--config", config_path, "config file");
    gen->add_option("--out-dir", data_dir, "output directory (train.flv, eval.flv)");

    auto* tr = app.add_subcommand("train", "train the model");
    tr->add_option("--config", config_path, "config file");
    tr->add_option("--data", data_dir, "dataset directory");
    tr->add_option("--out-dir", out_dir, "run directory (checkpoints, metrics.csv)");
    tr->add_option("--steps", steps, "override training steps");
    tr->add_option("--shards", shards, "simulated data-parallel rank count");
    tr->add_flag("--pretest", pretest, "run the 2D toy-flow pretest first");

    auto* sa = app.add_subcommand("sample", "generate from a checkpoint");
    sa->add_option("--ckpt", ckpt, "checkpoint file")->required();
    sa->add_option("--prompt", prompt, "caption words, whitespace separated")->required();
    sa->add_option("--gamma", gamma, "cross-modal CFG coefficient");
    sa->add_option("--gamma-img", gamma_img, "intra-modal CFG coefficient");
    sa->add_option("--steps", ode_steps, "Euler steps");
    sa->add_option("--seed", seed, "generation seed");
    sa->add_option("--out-dir", out_dir, "output directory")->required();
    sa->add_option("--temperature", temperature, "text sampling temperature (0 = greedy)");
    sa->add_option("--max-images", max_images, "image budget");
    sa->add_option("--max-tokens", max_tokens, "token budget");

    auto* ev = app.add_subcommand("eval", "run the evaluation oracles");
    ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory");
    ev->add_option("--n", n_per_task, "records per task");
    ev->add_option("--seed", seed, "evaluation seed");
    ev->add_option("--out", out_json, "write JSON report here");

    auto* cm = app.add_subcommand("check-masks", "print the dense attention mask for a layout");
    cm->add_option("layout", desc, "layout description, e.g. t3,i2x2,t2,i2x2");
    cm->add_flag("--no-ectf", no_ectf, "clean layout (no noisy duplicates)");
    cm->add_flag("--no-dual-encoder", no_dual_encoder, "omit ViT blocks");
    cm->add_flag("--text-sees-vae", text_sees_vae, "ablation: text attends clean VAE tokens");
    cm->add_option("--pgm", pgm, "also write the mask as a PGM image");
    cm->add_flag("--dump-rope", dump_rope, "emit the channel->axis allocation as CSV");
    cm->add_option("--rope", rope_scheme, "ilrope | mrope (with --dump-rope)");
    cm->add_option("--head-dim", head_dim, "head dim (with --dump-rope)");

    auto* be = app.add_subcommand("bench-ectf", "attention-pair accounting, ECTF vs baseline");
    be->add_option("--images", images, "comma list of image counts");
    be->add_option("--grids", grids, "comma list of tokens per image");
    be->add_option("--n-text", n_text, "leading text tokens");

    auto* ab = app.add_subcommand("ablate", "run the ablation grid");
    ab->add_option("--config", config_path, "config file");
    ab->add_option("--data", data_dir, "dataset directory");
    ab->add_option("--steps", steps, "per-arm training budget");
    ab->add_option("--arms", arms, "subset of arms by letter, e.g. AB");
    ab->add_option("--out", out_json, "write JSON table here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_corpus(config_path, data_dir);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, steps, shards, pretest);
        if (sa->parsed())
            return cmd_sample(ckpt, prompt, gamma, gamma_img, ode_steps, seed, out_dir, temperature,
                              max_images, max_tokens);
        if (ev->parsed()) return cmd_eval(ckpt, data_dir, n_per_task, seed, out_json);
        if (cm->parsed())
            return cmd_check_masks(desc, !no_ectf, !no_dual_encoder, text_sees_vae, pgm, dump_rope,
                                   rope_scheme, head_dim);
        if (be->parsed()) return cmd_bench_ectf(images, grids, n_text);
        if (ab->parsed()) return cmd_ablate(config_path, data_dir, steps, arms, out_json);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

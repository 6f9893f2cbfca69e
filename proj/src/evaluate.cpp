// SPDX-License-Identifier: Apache-2.0
#include "fuselave/evaluate.hpp"

#include <iostream>
#include <sstream>

#include <json.hpp>

namespace fuselave {

namespace {

bool cells_match(const GlyphScene& a, const GlyphScene& b) {
    if (a.shapes.size() != b.shapes.size()) return false;
    for (size_t i = 0; i < a.shapes.size(); ++i)
        if (a.shapes[i].cell != b.shapes[i].cell) return false;
    return true;
}

bool kinds_match(const GlyphScene& a, const GlyphScene& b) {
    if (!cells_match(a, b)) return false;
    for (size_t i = 0; i < a.shapes.size(); ++i)
        if (a.shapes[i].kind != b.shapes[i].kind) return false;
    return true;
}

bool colors_match(const GlyphScene& a, const GlyphScene& b) {
    if (!cells_match(a, b)) return false;
    for (size_t i = 0; i < a.shapes.size(); ++i)
        if (a.shapes[i].color != b.shapes[i].color) return false;
    return true;
}

std::vector<int> strip_specials(const std::vector<int>& ids) {
    const auto& v = Vocabulary::instance();
    std::vector<int> out;
    for (int id : ids)
        if (id != v.bos() && id != v.eos()) out.push_back(id);
    return out;
}

}  // namespace

EvalReport evaluate(FusionModelParams& params, const std::vector<InterleavedSample>& eval_records,
                    const LayoutConfig& lcfg, const ToyVae& vae, const ToyViT& vit,
                    const CheckpointExtra& extra, const EvalConfig& ecfg) {
    EvalReport rep;
    GenerationLimits limits;
    limits.temperature = 0.0;

    int t2i_full = 0, t2i_shape = 0, t2i_color = 0, t2i_cell = 0;
    int i2t_exact = 0;
    long i2t_tok_hits = 0, i2t_tok_total = 0;
    int edit_ok = 0;

    double ntp_acc = 0.0, ntp_w = 0.0, flow_acc = 0.0, flow_w = 0.0;

    int idx = 0;
    for (const auto& rec : eval_records) {
        const TaskKind task = record_task(rec);
        const int which = idx++;

        // eval-split losses at this checkpoint
        {
            PackedSequence seq = layout_training_sequence(rec, true, Rng(ecfg.seed).fork(which),
                                                          vae, vit, lcfg);
            const AttentionMask mask = build_mask(seq.metas, ecfg.mask_rules);
            ForwardOutput out = forward(seq, mask, params);
            int ti = 0, ni = 0;
            for (size_t i = 0; i < seq.metas.size(); ++i) {
                const auto& m = seq.metas[i];
                if (m.cls == ModalityClass::Text) {
                    const int target = seq.ntp_targets[ti];
                    if (target >= 0) {
                        const double* z = out.text_logits.row(ti);
                        double mx = z[0];
                        for (int c = 1; c < out.text_logits.cols; ++c) mx = std::max(mx, z[c]);
                        double lse = 0.0;
                        for (int c = 0; c < out.text_logits.cols; ++c) lse += std::exp(z[c] - mx);
                        ntp_acc += seq.loss_weights[i] * (std::log(lse) + mx - z[target]);
                        ntp_w += seq.loss_weights[i];
                        if (task == TaskKind::I2T) {
                            int best = 0;
                            for (int c = 1; c < out.text_logits.cols; ++c)
                                if (z[c] > z[best]) best = c;
                            i2t_tok_hits += (best == target);
                            ++i2t_tok_total;
                        }
                    }
                    ++ti;
                } else if (m.cls == ModalityClass::VaeNoisy) {
                    const double* vp = out.velocity.row(ni);
                    const double* tg = seq.flow_targets.row(ni);
                    double sq = 0.0;
                    for (int c = 0; c < out.velocity.cols; ++c) {
                        const double d = vp[c] - tg[c];
                        sq += d * d;
                    }
                    flow_acc += seq.loss_weights[i] * sq;
                    flow_w += seq.loss_weights[i];
                    ++ni;
                }
            }
        }

        if (task == TaskKind::T2I && rep.n_t2i < ecfg.n_per_task) {
            const auto& cap = std::get<TextSpan>(rec.items[0]).ids;
            const GlyphScene expected = parse_caption(strip_specials(cap));
            InterleavedSample prompt;
            prompt.items.push_back(TextSpan{cap});
            GenerationLimits lim = limits;
            lim.max_images = 1;
            lim.max_total_tokens = 512;
            lim.seed = Rng(ecfg.seed).fork(0x721 + which).next_u64();
            GenerationResult gen = generate_interleaved(prompt, params, vae, vit, lcfg, ecfg.cfg,
                                                        ecfg.ode, lim, extra.gen_grid_h,
                                                        extra.gen_grid_w, ecfg.mask_rules);
            ++rep.n_t2i;
            if (!gen.new_images.empty()) {
                const GlyphScene got = classify_scene(gen.new_images[0]);
                t2i_full += (got == expected);
                t2i_cell += cells_match(got, expected);
                t2i_shape += kinds_match(got, expected);
                t2i_color += colors_match(got, expected);
            }
        } else if (task == TaskKind::I2T && rep.n_i2t < ecfg.n_per_task) {
            const auto& span = std::get<TextSpan>(rec.items[1]).ids;
            const std::vector<int> expected = strip_specials(span);
            InterleavedSample prompt;
            prompt.items.push_back(rec.items[0]);
            GenerationLimits lim = limits;
            lim.max_images = 1;
            lim.max_total_tokens = 256;
            lim.seed = Rng(ecfg.seed).fork(0x122 + which).next_u64();
            GenerationResult gen = generate_interleaved(prompt, params, vae, vit, lcfg, ecfg.cfg,
                                                        ecfg.ode, lim, extra.gen_grid_h,
                                                        extra.gen_grid_w, ecfg.mask_rules);
            ++rep.n_i2t;
            i2t_exact += (gen.new_text_ids == expected);
        } else if (task == TaskKind::Edit && rep.n_edit < ecfg.n_per_task) {
            const auto& cap = std::get<TextSpan>(rec.items[0]).ids;
            const auto& instr = std::get<TextSpan>(rec.items[2]).ids;
            const GlyphScene base = parse_caption(strip_specials(cap));
            const GlyphScene expected = apply_edit(base, parse_instruction(instr));
            InterleavedSample prompt;
            prompt.items.assign(rec.items.begin(), rec.items.begin() + 3);
            GenerationLimits lim = limits;
            lim.max_images = 1;
            lim.max_total_tokens = 512;
            lim.seed = Rng(ecfg.seed).fork(0xed1 + which).next_u64();
            GenerationResult gen = generate_interleaved(prompt, params, vae, vit, lcfg, ecfg.cfg,
                                                        ecfg.ode, lim, extra.gen_grid_h,
                                                        extra.gen_grid_w, ecfg.mask_rules);
            ++rep.n_edit;
            if (!gen.new_images.empty()) edit_ok += (classify_scene(gen.new_images[0]) == expected);
        }
        if (!ecfg.quiet && which % 50 == 49) std::cout << "eval progress: " << which + 1 << " records\n";
    }

    if (rep.n_t2i > 0) {
        rep.t2i_full = static_cast<double>(t2i_full) / rep.n_t2i;
        rep.t2i_shape = static_cast<double>(t2i_shape) / rep.n_t2i;
        rep.t2i_color = static_cast<double>(t2i_color) / rep.n_t2i;
        rep.t2i_cell = static_cast<double>(t2i_cell) / rep.n_t2i;
    }
    if (rep.n_i2t > 0) rep.i2t_exact = static_cast<double>(i2t_exact) / rep.n_i2t;
    if (i2t_tok_total > 0) rep.i2t_token_acc = static_cast<double>(i2t_tok_hits) / i2t_tok_total;
    if (rep.n_edit > 0) rep.edit_consistency = static_cast<double>(edit_ok) / rep.n_edit;
    if (ntp_w > 0) rep.eval_ntp_loss = ntp_acc / ntp_w;
    if (flow_w > 0) rep.eval_flow_loss = flow_acc / flow_w;
    rep.ectf_bench = bench_ectf({1, 2, 4, 8}, {16, 64}, 32);
    return rep;
}

std::string report_json(const EvalReport& r) {
    nlohmann::json j;
    j["t2i"] = {{"n", r.n_t2i},
                {"full", r.t2i_full},
                {"shape", r.t2i_shape},
                {"color", r.t2i_color},
                {"cell", r.t2i_cell}};
    j["i2t"] = {{"n", r.n_i2t}, {"exact", r.i2t_exact}, {"token_acc", r.i2t_token_acc}};
    j["edit"] = {{"n", r.n_edit}, {"consistency", r.edit_consistency}};
    j["loss"] = {{"ntp", r.eval_ntp_loss}, {"flow", r.eval_flow_loss}};
    auto& bench = j["ectf_bench"] = nlohmann::json::array();
    for (const auto& b : r.ectf_bench) {
        bench.push_back({{"n_text", b.n_text},
                         {"images", b.images},
                         {"grid", b.grid},
                         {"ectf_tokens", b.ectf_tokens},
                         {"ectf_pairs", b.ectf_pairs},
                         {"baseline_tokens", b.baseline_tokens},
                         {"baseline_pairs", b.baseline_pairs},
                         {"pair_ratio", b.pair_ratio}});
    }
    return j.dump(2);
}

std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    os << "t2i  (n=" << r.n_t2i << "): full " << r.t2i_full << "  shape " << r.t2i_shape
       << "  color " << r.t2i_color << "  cell " << r.t2i_cell << "\n";
    os << "i2t  (n=" << r.n_i2t << "): exact " << r.i2t_exact << "  token_acc " << r.i2t_token_acc
       << "\n";
    os << "edit (n=" << r.n_edit << "): consistency " << r.edit_consistency << "\n";
    os << "eval loss: ntp " << r.eval_ntp_loss << "  flow " << r.eval_flow_loss << "\n";
    os << bench_table(r.ectf_bench);
    return os.str();
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#include "fuselave/fusion_net.hpp"

#include <cmath>
#include <map>

namespace fuselave {

namespace {

void init_trunc_normal(Tensor& t, Rng& rng, double sigma) {
    for (auto& v : t.data) v = rng.trunc_normal(sigma);
}

void init_ones(Tensor& t) {
    std::fill(t.data.begin(), t.data.end(), 1.0);
}

}  // namespace

ParamTensor* FusionModelParams::add(const std::string& name, int rows, int cols) {
    auto p = std::make_unique<ParamTensor>();
    p->name = name;
    p->value = Tensor(rows, cols);
    p->grad = Tensor(rows, cols);
    params.push_back(std::move(p));
    return params.back().get();
}

FusionModelParams::FusionModelParams(const ModelConfig& cfg) : config(cfg) {
    check(cfg.layers > 0 && cfg.width > 0 && cfg.heads > 0 && cfg.head_dim > 0,
          "model: dims must be positive");
    check(cfg.head_dim % 2 == 0, "model: head_dim must be even");
    check(cfg.vocab_size > 0, "model: vocab_size must be set");
    check(cfg.latent_dim > 0, "model: latent_dim must be set");

    rope_alloc = allocate_frequencies({cfg.head_dim, cfg.rope_base, cfg.rope_scheme});

    Rng rng = Rng(cfg.init_seed).fork(0xf00d);
    const int d = cfg.width;
    const int inner = cfg.inner_dim();
    const int hidden = cfg.ffn_mult * d;

    tok_emb = add("tok_emb", cfg.vocab_size, d);
    init_trunc_normal(tok_emb->value, rng, cfg.init_sigma);
    vae_in_w = add("vae_in.w", cfg.latent_dim, d);
    init_trunc_normal(vae_in_w->value, rng, cfg.init_sigma);
    vae_in_b = add("vae_in.b", 1, d);

    tstep_w1 = add("tstep.w1", cfg.tstep_features, d);
    init_trunc_normal(tstep_w1->value, rng, cfg.init_sigma);
    tstep_b1 = add("tstep.b1", 1, d);
    tstep_w2 = add("tstep.w2", d, d);
    init_trunc_normal(tstep_w2->value, rng, cfg.init_sigma);
    tstep_b2 = add("tstep.b2", 1, d);

    auto make_branch = [&](const std::string& prefix) {
        BranchParams b;
        b.wq = add(prefix + ".wq", d, inner);
        b.bq = add(prefix + ".bq", 1, inner);
        b.wk = add(prefix + ".wk", d, inner);
        b.bk = add(prefix + ".bk", 1, inner);
        b.wv = add(prefix + ".wv", d, inner);
        b.bv = add(prefix + ".bv", 1, inner);
        b.wo = add(prefix + ".wo", inner, d);
        b.bo = add(prefix + ".bo", 1, d);
        b.w1 = add(prefix + ".ffn.w1", d, hidden);
        b.b1 = add(prefix + ".ffn.b1", 1, hidden);
        b.w2 = add(prefix + ".ffn.w2", hidden, d);
        b.b2 = add(prefix + ".ffn.b2", 1, d);
        b.g_attn = add(prefix + ".g_attn", 1, d);
        b.g_ffn = add(prefix + ".g_ffn", 1, d);
        init_trunc_normal(b.wq->value, rng, cfg.init_sigma);
        init_trunc_normal(b.wk->value, rng, cfg.init_sigma);
        init_trunc_normal(b.wv->value, rng, cfg.init_sigma);
        init_trunc_normal(b.wo->value, rng, cfg.init_sigma);
        init_trunc_normal(b.w1->value, rng, cfg.init_sigma);
        init_trunc_normal(b.w2->value, rng, cfg.init_sigma);
        init_ones(b.g_attn->value);
        init_ones(b.g_ffn->value);
        return b;
    };

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string bp = "blk" + std::to_string(l);
        BlockParams blk;
        blk.text = make_branch(bp + ".text");
        if (cfg.dual_branch) blk.visual = make_branch(bp + ".vis");

        auto make_mod = [&](const std::string& what, bool zero) {
            std::pair<ParamTensor*, ParamTensor*> wb;
            wb.first = add(bp + ".adaln." + what + ".w", d, d);
            wb.second = add(bp + ".adaln." + what + ".b", 1, d);
            if (!zero) init_trunc_normal(wb.first->value, rng, cfg.init_sigma);
            return wb;
        };
        std::tie(blk.adaln.scale_attn_w, blk.adaln.scale_attn_b) = make_mod("scale_attn", false);
        std::tie(blk.adaln.shift_attn_w, blk.adaln.shift_attn_b) = make_mod("shift_attn", false);
        std::tie(blk.adaln.gate_attn_w, blk.adaln.gate_attn_b) = make_mod("gate_attn", true);
        std::tie(blk.adaln.scale_ffn_w, blk.adaln.scale_ffn_b) = make_mod("scale_ffn", false);
        std::tie(blk.adaln.shift_ffn_w, blk.adaln.shift_ffn_b) = make_mod("shift_ffn", false);
        std::tie(blk.adaln.gate_ffn_w, blk.adaln.gate_ffn_b) = make_mod("gate_ffn", true);
        blocks.push_back(blk);
    }

    final_gain = add("final_gain", 1, d);
    init_ones(final_gain->value);
    head_w = add("head.w", d, cfg.vocab_size);
    head_b = add("head.b", 1, cfg.vocab_size);
    vel_w = add("vel.w", d, cfg.latent_dim);
    vel_b = add("vel.b", 1, cfg.latent_dim);
}

long FusionModelParams::param_count() const {
    long n = 0;
    for (const auto& p : params) n += static_cast<long>(p->value.size());
    return n;
}

void FusionModelParams::zero_grads() {
    for (auto& p : params) p->grad.zero();
}

ParamTensor* FusionModelParams::find(const std::string& name) {
    for (auto& p : params)
        if (p->name == name) return p.get();
    return nullptr;
}

std::vector<double> sinusoidal_features(double t, int n_features) {
    check(t >= 0.0 && t <= 1.0, "timestep_embed: t outside [0,1]");
    const int half = n_features / 2;
    std::vector<double> f(n_features, 0.0);
    const double s = t * 1000.0;
    for (int j = 0; j < half; ++j) {
        const double omega = std::exp(-std::log(10000.0) * j / half);
        f[j] = std::cos(s * omega);
        f[half + j] = std::sin(s * omega);
    }
    return f;
}

std::vector<double> timestep_embedding(const FusionModelParams& params, double t) {
    const int d = params.config.width;
    const auto feats = sinusoidal_features(t, params.config.tstep_features);
    std::vector<double> h(d, 0.0);
    matmul_acc(feats.data(), params.tstep_w1->value.data.data(), h.data(), 1,
               params.config.tstep_features, d);
    for (int j = 0; j < d; ++j) {
        const double x = h[j] + params.tstep_b1->value.data[j];
        h[j] = x / (1.0 + std::exp(-x));
    }
    std::vector<double> out(d, 0.0);
    matmul_acc(h.data(), params.tstep_w2->value.data.data(), out.data(), 1, d, d);
    for (int j = 0; j < d; ++j) out[j] += params.tstep_b2->value.data[j];
    return out;
}

namespace {

struct RowSplit {
    std::vector<int> text_rows;   // Text tokens, in token order
    std::vector<int> vit_rows;
    std::vector<int> vaec_rows;
    std::vector<int> vaen_rows;
    std::vector<int> txt_branch;  // rows routed through text-branch weights
    std::vector<int> vis_branch;  // rows routed through visual-branch weights
    std::vector<int> vae_rows;    // VaeClean + VaeNoisy, in token order (modulated)
};

RowSplit split_rows(const PackedSequence& seq, bool dual_branch) {
    RowSplit s;
    for (int i = 0; i < seq.length(); ++i) {
        switch (seq.metas[i].cls) {
            case ModalityClass::Text:
                s.text_rows.push_back(i);
                break;
            case ModalityClass::VitClean:
                s.vit_rows.push_back(i);
                break;
            case ModalityClass::VaeClean:
                s.vaec_rows.push_back(i);
                break;
            case ModalityClass::VaeNoisy:
                s.vaen_rows.push_back(i);
                break;
        }
    }
    for (int i = 0; i < seq.length(); ++i) {
        const auto cls = seq.metas[i].cls;
        const bool visual_cls = cls == ModalityClass::VaeClean || cls == ModalityClass::VaeNoisy;
        if (visual_cls) s.vae_rows.push_back(i);
        if (visual_cls && dual_branch)
            s.vis_branch.push_back(i);
        else
            s.txt_branch.push_back(i);
    }
    return s;
}

}  // namespace

ForwardNodes forward_graph(Graph& graph, const PackedSequence& seq, const AttentionMask& mask,
                           FusionModelParams& params, std::vector<LayerKV>* kv_out) {
    const ModelConfig& cfg = params.config;
    const int L = seq.length();
    const int d = cfg.width;
    check(mask.length == L, "forward: mask/sequence length mismatch");
    check(seq.vit_features.rows == 0 || seq.vit_features.cols == d,
          "forward: ViT feature dim != model width");
    check(seq.clean_vae_latents.rows == 0 || seq.clean_vae_latents.cols == cfg.latent_dim,
          "forward: clean latent dim mismatch");
    check(seq.noisy_vae_latents.rows == 0 || seq.noisy_vae_latents.cols == cfg.latent_dim,
          "forward: noisy latent dim mismatch");

    const RowSplit rows = split_rows(seq, cfg.dual_branch);

    // RoPE tables, one row per token; all layers share them.
    auto cos_tab = std::make_shared<Tensor>(L, cfg.head_dim / 2);
    auto sin_tab = std::make_shared<Tensor>(L, cfg.head_dim / 2);
    for (int i = 0; i < L; ++i) {
        const auto& m = seq.metas[i];
        check(m.t >= 0 && m.h >= 0 && m.w >= 0, "forward: negative position component");
        rope_angles({m.t, m.h, m.w}, params.rope_alloc, cos_tab->row(i), sin_tab->row(i));
    }

    // Input assembly.
    std::vector<std::pair<Node*, std::vector<int>>> input_parts;
    if (!rows.text_rows.empty()) {
        Node* emb = graph.embedding(graph.param(params.tok_emb->value, params.tok_emb->grad),
                                    seq.text_ids);
        input_parts.emplace_back(emb, rows.text_rows);
    }
    if (!rows.vit_rows.empty()) {
        input_parts.emplace_back(graph.constant(seq.vit_features), rows.vit_rows);
    }
    Node* vae_w = graph.param(params.vae_in_w->value, params.vae_in_w->grad);
    Node* vae_b = graph.param(params.vae_in_b->value, params.vae_in_b->grad);
    if (!rows.vaec_rows.empty()) {
        Node* lat = graph.constant(seq.clean_vae_latents);
        input_parts.emplace_back(graph.add_rowvec(graph.matmul(lat, vae_w), vae_b), rows.vaec_rows);
    }
    if (!rows.vaen_rows.empty()) {
        Node* lat = graph.constant(seq.noisy_vae_latents);
        input_parts.emplace_back(graph.add_rowvec(graph.matmul(lat, vae_w), vae_b), rows.vaen_rows);
    }
    Node* x = graph.compose_rows(L, d, input_parts);

    // Conditioning rows: one per distinct (sample, image, clean/noisy) VAE
    // state present in the sequence. Clean tokens condition at t = 1.
    Node* cond_silu = nullptr;
    std::vector<int> vae_cond_row;  // aligned with rows.vae_rows
    if (!rows.vae_rows.empty()) {
        std::map<std::pair<std::pair<int, int>, bool>, int> cond_index;
        std::vector<double> cond_t;
        vae_cond_row.reserve(rows.vae_rows.size());
        for (int r : rows.vae_rows) {
            const auto& m = seq.metas[r];
            const bool noisy = m.cls == ModalityClass::VaeNoisy;
            const auto key = std::make_pair(std::make_pair(m.sample_id, m.image_index), noisy);
            auto it = cond_index.find(key);
            if (it == cond_index.end()) {
                const double t = noisy ? seq.image_timestep(m.sample_id, m.image_index) : 1.0;
                check(t >= 0.0 && t <= 1.0, "forward: missing or invalid image timestep");
                it = cond_index.emplace(key, static_cast<int>(cond_t.size())).first;
                cond_t.push_back(t);
            }
            vae_cond_row.push_back(it->second);
        }
        Tensor sinus(static_cast<int>(cond_t.size()), cfg.tstep_features);
        for (size_t i = 0; i < cond_t.size(); ++i) {
            const auto f = sinusoidal_features(cond_t[i], cfg.tstep_features);
            std::copy(f.begin(), f.end(), sinus.row(static_cast<int>(i)));
        }
        Node* c = graph.matmul(graph.constant(std::move(sinus)),
                               graph.param(params.tstep_w1->value, params.tstep_w1->grad));
        c = graph.add_rowvec(c, graph.param(params.tstep_b1->value, params.tstep_b1->grad));
        c = graph.silu(c);
        c = graph.matmul(c, graph.param(params.tstep_w2->value, params.tstep_w2->grad));
        c = graph.add_rowvec(c, graph.param(params.tstep_b2->value, params.tstep_b2->grad));
        cond_silu = graph.silu(c);
    }

    auto P = [&](ParamTensor* p) { return graph.param(p->value, p->grad); };

    // Per-sublayer modulation rows for the VAE tokens of this sequence.
    auto modulation = [&](ParamTensor* w, ParamTensor* b) -> Node* {
        Node* m = graph.add_rowvec(graph.matmul(cond_silu, P(w)), P(b));
        return graph.gather_rows(m, vae_cond_row);
    };

    // Shared-branch mode: VAE rows ride the text-branch slice, so their
    // modulation is spliced into that slice by position.
    std::vector<int> vae_pos_in_txt, other_pos_in_txt;
    if (!cfg.dual_branch && !rows.vae_rows.empty()) {
        std::vector<int> pos_of_token(L, -1);
        for (size_t i = 0; i < rows.txt_branch.size(); ++i)
            pos_of_token[rows.txt_branch[i]] = static_cast<int>(i);
        for (int r : rows.vae_rows) vae_pos_in_txt.push_back(pos_of_token[r]);
        for (int r : rows.text_rows) other_pos_in_txt.push_back(pos_of_token[r]);
        for (int r : rows.vit_rows) other_pos_in_txt.push_back(pos_of_token[r]);
        std::sort(other_pos_in_txt.begin(), other_pos_in_txt.end());
    }
    auto modulate_shared = [&](Node* nt, Node* scale, Node* shift) -> Node* {
        Node* nv = graph.gather_rows(nt, vae_pos_in_txt);
        nv = graph.add(graph.mul(nv, graph.add_scalar(scale, 1.0)), shift);
        std::vector<std::pair<Node*, std::vector<int>>> parts;
        if (!other_pos_in_txt.empty())
            parts.emplace_back(graph.gather_rows(nt, other_pos_in_txt), other_pos_in_txt);
        parts.emplace_back(nv, vae_pos_in_txt);
        return graph.compose_rows(nt->rows(), nt->cols(), parts);
    };

    for (int l = 0; l < cfg.layers; ++l) {
        BlockParams& blk = params.blocks[l];
        const BranchParams& tb = blk.text;
        const BranchParams& vb = cfg.dual_branch ? *blk.visual : blk.text;

        // ---- attention sublayer ----
        Node* n = graph.rmsnorm(x);
        Node* scale_a = nullptr;
        Node* shift_a = nullptr;
        Node* gate_a = nullptr;
        if (!rows.vae_rows.empty()) {
            scale_a = modulation(blk.adaln.scale_attn_w, blk.adaln.scale_attn_b);
            shift_a = modulation(blk.adaln.shift_attn_w, blk.adaln.shift_attn_b);
            gate_a = modulation(blk.adaln.gate_attn_w, blk.adaln.gate_attn_b);
        }

        std::vector<std::pair<Node*, std::vector<int>>> qp, kp, vp;
        auto project = [&](Node* inp, const BranchParams& br, const std::vector<int>& dest) {
            qp.emplace_back(graph.add_rowvec(graph.matmul(inp, P(br.wq)), P(br.bq)), dest);
            kp.emplace_back(graph.add_rowvec(graph.matmul(inp, P(br.wk)), P(br.bk)), dest);
            vp.emplace_back(graph.add_rowvec(graph.matmul(inp, P(br.wv)), P(br.bv)), dest);
        };
        if (!rows.txt_branch.empty()) {
            // In shared mode VAE rows pass through here; their modulation is
            // applied on the gathered slice before projection.
            Node* nt = graph.gather_rows(n, rows.txt_branch);
            nt = graph.mul_rowvec(nt, P(tb.g_attn));
            if (!cfg.dual_branch && !rows.vae_rows.empty()) {
                nt = modulate_shared(nt, scale_a, shift_a);
            }
            project(nt, tb, rows.txt_branch);
        }
        if (!rows.vis_branch.empty()) {
            Node* nv = graph.gather_rows(n, rows.vis_branch);
            nv = graph.mul_rowvec(nv, P(vb.g_attn));
            nv = graph.add(graph.mul(nv, graph.add_scalar(scale_a, 1.0)), shift_a);
            project(nv, vb, rows.vis_branch);
        }
        Node* q = graph.compose_rows(L, cfg.inner_dim(), qp);
        Node* k = graph.compose_rows(L, cfg.inner_dim(), kp);
        Node* v = graph.compose_rows(L, cfg.inner_dim(), vp);
        q = graph.rope(q, cfg.head_dim, cos_tab, sin_tab);
        k = graph.rope(k, cfg.head_dim, cos_tab, sin_tab);
        if (kv_out) kv_out->push_back({*k->val, *v->val});
        Node* attn = graph.attention(q, k, v, &mask, cfg.heads);

        std::vector<std::pair<Node*, std::vector<int>>> delta_parts;
        if (!rows.txt_branch.empty()) {
            Node* at = graph.gather_rows(attn, rows.txt_branch);
            Node* ot = graph.add_rowvec(graph.matmul(at, P(tb.wo)), P(tb.bo));
            delta_parts.emplace_back(ot, rows.txt_branch);
        }
        if (!rows.vis_branch.empty()) {
            Node* av = graph.gather_rows(attn, rows.vis_branch);
            Node* ov = graph.add_rowvec(graph.matmul(av, P(vb.wo)), P(vb.bo));
            ov = graph.mul(ov, gate_a);
            delta_parts.emplace_back(ov, rows.vis_branch);
        }
        x = graph.add(x, graph.compose_rows(L, d, delta_parts));

        // ---- FFN sublayer ----
        Node* n2 = graph.rmsnorm(x);
        Node* scale_f = nullptr;
        Node* shift_f = nullptr;
        Node* gate_f = nullptr;
        if (!rows.vae_rows.empty()) {
            scale_f = modulation(blk.adaln.scale_ffn_w, blk.adaln.scale_ffn_b);
            shift_f = modulation(blk.adaln.shift_ffn_w, blk.adaln.shift_ffn_b);
            gate_f = modulation(blk.adaln.gate_ffn_w, blk.adaln.gate_ffn_b);
        }
        std::vector<std::pair<Node*, std::vector<int>>> ffn_parts;
        auto run_ffn = [&](Node* inp, const BranchParams& br) {
            Node* h = graph.silu(graph.add_rowvec(graph.matmul(inp, P(br.w1)), P(br.b1)));
            return graph.add_rowvec(graph.matmul(h, P(br.w2)), P(br.b2));
        };
        if (!rows.txt_branch.empty()) {
            Node* nt = graph.gather_rows(n2, rows.txt_branch);
            nt = graph.mul_rowvec(nt, P(tb.g_ffn));
            if (!cfg.dual_branch && !rows.vae_rows.empty()) {
                nt = modulate_shared(nt, scale_f, shift_f);
            }
            ffn_parts.emplace_back(run_ffn(nt, tb), rows.txt_branch);
        }
        if (!rows.vis_branch.empty()) {
            Node* nv = graph.gather_rows(n2, rows.vis_branch);
            nv = graph.mul_rowvec(nv, P(vb.g_ffn));
            nv = graph.add(graph.mul(nv, graph.add_scalar(scale_f, 1.0)), shift_f);
            Node* ov = run_ffn(nv, vb);
            ov = graph.mul(ov, gate_f);
            ffn_parts.emplace_back(ov, rows.vis_branch);
        }
        x = graph.add(x, graph.compose_rows(L, d, ffn_parts));
    }

    ForwardNodes out;
    out.hidden = x;
    Node* normed = graph.mul_rowvec(graph.rmsnorm(x), P(params.final_gain));
    {
        Node* th = graph.gather_rows(normed, rows.text_rows);
        out.text_logits = graph.add_rowvec(graph.matmul(th, P(params.head_w)), P(params.head_b));
    }
    {
        Node* vh = graph.gather_rows(normed, rows.vaen_rows);
        out.velocity = graph.add_rowvec(graph.matmul(vh, P(params.vel_w)), P(params.vel_b));
    }
    return out;
}

ForwardOutput forward(const PackedSequence& seq, const AttentionMask& mask,
                      FusionModelParams& params) {
    Graph graph;
    ForwardNodes nodes = forward_graph(graph, seq, mask, params);
    ForwardOutput out;
    out.text_logits = *nodes.text_logits->val;
    out.velocity = *nodes.velocity->val;
    out.hidden = *nodes.hidden->val;
    return out;
}

GenContext build_generation_context(const PackedSequence& ctx,
                                    const std::vector<TokenMeta>& gen_metas,
                                    FusionModelParams& params, const MaskRules& rules) {
    GenContext gc;
    gc.ctx_len = ctx.length();
    gc.gen_metas = gen_metas;
    if (gc.ctx_len > 0) {
        const AttentionMask mask = build_mask(ctx.metas, rules);
        Graph graph;
        forward_graph(graph, ctx, mask, params, &gc.ctx_kv);
    } else {
        gc.ctx_kv.assign(params.config.layers, LayerKV{Tensor(0, params.config.inner_dim()),
                                                       Tensor(0, params.config.inner_dim())});
    }
    const int g = static_cast<int>(gen_metas.size());
    gc.gen_cos = Tensor(g, params.config.head_dim / 2);
    gc.gen_sin = Tensor(g, params.config.head_dim / 2);
    for (int i = 0; i < g; ++i) {
        const auto& m = gen_metas[i];
        check(m.cls == ModalityClass::VaeNoisy, "generation context: block must be noisy tokens");
        rope_angles({m.t, m.h, m.w}, params.rope_alloc, gc.gen_cos.row(i), gc.gen_sin.row(i));
    }
    return gc;
}

namespace {

// Value-only mirrors of the graph ops; the arithmetic per element matches
// forward_graph exactly so cached-context sampling agrees with the
// full-sequence forward bit for bit.
void rmsnorm_rows(const Tensor& x, Tensor& out) {
    const int n = x.cols;
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double ms = 0.0;
        for (int j = 0; j < n; ++j) ms += xr[j] * xr[j];
        const double ri = 1.0 / std::sqrt(ms / n + 1e-8);
        double* o = out.row(r);
        for (int j = 0; j < n; ++j) o[j] = xr[j] * ri;
    }
}

inline double silu_val(double x) { return x / (1.0 + std::exp(-x)); }

Tensor linear_rows(const Tensor& x, const ParamTensor* w, const ParamTensor* b) {
    Tensor out(x.rows, w->value.cols);
    matmul_acc(x.data.data(), w->value.data.data(), out.data.data(), x.rows, x.cols,
               w->value.cols);
    for (int r = 0; r < out.rows; ++r) {
        double* o = out.row(r);
        for (int j = 0; j < out.cols; ++j) o[j] += b->value.data[j];
    }
    return out;
}

}  // namespace

Tensor generation_velocity(const GenContext& gc, FusionModelParams& params, const Tensor& x_noisy,
                           double t) {
    const ModelConfig& cfg = params.config;
    const int g = static_cast<int>(gc.gen_metas.size());
    check(x_noisy.rows == g && x_noisy.cols == cfg.latent_dim,
          "generation_velocity: latent shape mismatch");
    check(static_cast<int>(gc.ctx_kv.size()) == cfg.layers,
          "generation_velocity: cache layer mismatch");
    const int d = cfg.width;
    const int inner = cfg.inner_dim();
    const int dh = cfg.head_dim;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

    // input projection
    Tensor x(g, d);
    matmul_acc(x_noisy.data.data(), params.vae_in_w->value.data.data(), x.data.data(), g,
               cfg.latent_dim, d);
    for (int r = 0; r < g; ++r)
        for (int j = 0; j < d; ++j) x.at(r, j) += params.vae_in_b->value.data[j];

    // conditioning row for this flow time
    const auto feats = sinusoidal_features(t, cfg.tstep_features);
    Tensor cond(1, d);
    matmul_acc(feats.data(), params.tstep_w1->value.data.data(), cond.data.data(), 1,
               cfg.tstep_features, d);
    for (int j = 0; j < d; ++j) cond.data[j] = silu_val(cond.data[j] + params.tstep_b1->value.data[j]);
    Tensor cond2(1, d);
    matmul_acc(cond.data.data(), params.tstep_w2->value.data.data(), cond2.data.data(), 1, d, d);
    for (int j = 0; j < d; ++j) cond2.data[j] = silu_val(cond2.data[j] + params.tstep_b2->value.data[j]);

    auto mod_row = [&](const ParamTensor* w, const ParamTensor* b) {
        Tensor m(1, d);
        matmul_acc(cond2.data.data(), w->value.data.data(), m.data.data(), 1, d, d);
        for (int j = 0; j < d; ++j) m.data[j] += b->value.data[j];
        return m;
    };

    for (int l = 0; l < cfg.layers; ++l) {
        const BlockParams& blk = params.blocks[l];
        const BranchParams& vb = cfg.dual_branch ? *blk.visual : blk.text;
        const Tensor& kc = gc.ctx_kv[l].k;
        const Tensor& vc = gc.ctx_kv[l].v;

        // ---- attention sublayer ----
        Tensor n(g, d);
        rmsnorm_rows(x, n);
        const Tensor scale = mod_row(blk.adaln.scale_attn_w, blk.adaln.scale_attn_b);
        const Tensor shift = mod_row(blk.adaln.shift_attn_w, blk.adaln.shift_attn_b);
        const Tensor gate = mod_row(blk.adaln.gate_attn_w, blk.adaln.gate_attn_b);
        for (int r = 0; r < g; ++r) {
            double* nr = n.row(r);
            for (int j = 0; j < d; ++j)
                nr[j] = nr[j] * vb.g_attn->value.data[j] * (scale.data[j] + 1.0) + shift.data[j];
        }
        Tensor q = linear_rows(n, vb.wq, vb.bq);
        Tensor k = linear_rows(n, vb.wk, vb.bk);
        Tensor v = linear_rows(n, vb.wv, vb.bv);
        for (int r = 0; r < g; ++r) {
            for (int h = 0; h < cfg.heads; ++h) {
                rope_rotate_inplace(q.row(r) + h * dh, 1, dh, gc.gen_cos.row(r), gc.gen_sin.row(r));
                rope_rotate_inplace(k.row(r) + h * dh, 1, dh, gc.gen_cos.row(r), gc.gen_sin.row(r));
            }
        }

        Tensor attn(g, inner);
        const int n_keys = gc.ctx_len + g;
        std::vector<double> scores(n_keys);
        for (int h = 0; h < cfg.heads; ++h) {
            for (int i = 0; i < g; ++i) {
                const double* qi = q.row(i) + h * dh;
                double mx = -1e300;
                for (int kk = 0; kk < n_keys; ++kk) {
                    const double* kr =
                        kk < gc.ctx_len ? kc.row(kk) + h * dh : k.row(kk - gc.ctx_len) + h * dh;
                    double dot = 0.0;
                    for (int c = 0; c < dh; ++c) dot += qi[c] * kr[c];
                    dot *= alpha;
                    scores[kk] = dot;
                    if (dot > mx) mx = dot;
                }
                double denom = 0.0;
                for (int kk = 0; kk < n_keys; ++kk) {
                    scores[kk] = std::exp(scores[kk] - mx);
                    denom += scores[kk];
                }
                double* oi = attn.row(i) + h * dh;
                for (int kk = 0; kk < n_keys; ++kk) {
                    const double p = scores[kk] / denom;
                    const double* vr =
                        kk < gc.ctx_len ? vc.row(kk) + h * dh : v.row(kk - gc.ctx_len) + h * dh;
                    for (int c = 0; c < dh; ++c) oi[c] += p * vr[c];
                }
            }
        }
        Tensor o = linear_rows(attn, vb.wo, vb.bo);
        for (int r = 0; r < g; ++r) {
            double* xr = x.row(r);
            const double* orow = o.row(r);
            for (int j = 0; j < d; ++j) xr[j] += orow[j] * gate.data[j];
        }

        // ---- FFN sublayer ----
        Tensor n2(g, d);
        rmsnorm_rows(x, n2);
        const Tensor scale_f = mod_row(blk.adaln.scale_ffn_w, blk.adaln.scale_ffn_b);
        const Tensor shift_f = mod_row(blk.adaln.shift_ffn_w, blk.adaln.shift_ffn_b);
        const Tensor gate_f = mod_row(blk.adaln.gate_ffn_w, blk.adaln.gate_ffn_b);
        for (int r = 0; r < g; ++r) {
            double* nr = n2.row(r);
            for (int j = 0; j < d; ++j)
                nr[j] = nr[j] * vb.g_ffn->value.data[j] * (scale_f.data[j] + 1.0) + shift_f.data[j];
        }
        Tensor hdn = linear_rows(n2, vb.w1, vb.b1);
        for (auto& hv : hdn.data) hv = silu_val(hv);
        Tensor o2 = linear_rows(hdn, vb.w2, vb.b2);
        for (int r = 0; r < g; ++r) {
            double* xr = x.row(r);
            const double* orow = o2.row(r);
            for (int j = 0; j < d; ++j) xr[j] += orow[j] * gate_f.data[j];
        }
    }

    Tensor nf(g, d);
    rmsnorm_rows(x, nf);
    for (int r = 0; r < g; ++r) {
        double* nr = nf.row(r);
        for (int j = 0; j < d; ++j) nr[j] *= params.final_gain->value.data[j];
    }
    return linear_rows(nf, params.vel_w, params.vel_b);
}

}  // namespace fuselave

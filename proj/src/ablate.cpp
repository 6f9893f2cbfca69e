// SPDX-License-Identifier: Apache-2.0
#include "fuselave/ablate.hpp"

#include <iostream>
#include <sstream>

namespace fuselave {

std::vector<AblateArm> default_ablation_grid() {
    return {
        {"A_mrope_shared_vae", RopeScheme::MRoPE, false, false},
        {"B_ilrope_shared_vae", RopeScheme::ILRoPE, false, false},
        {"C_ilrope_shared_dual", RopeScheme::ILRoPE, false, true},
        {"D_ilrope_fusion_dual", RopeScheme::ILRoPE, true, true},
    };
}

std::vector<AblateRow> ablate(const std::vector<AblateArm>& arms, const ModelConfig& base_model,
                              const TrainConfig& budget, const LayoutConfig& base_layout,
                              const std::vector<InterleavedSample>& train_records,
                              const std::vector<InterleavedSample>& eval_records,
                              const EvalConfig& ecfg, const CheckpointExtra& extra,
                              uint64_t corpus_hash) {
    check(!arms.empty(), "ablate: empty grid");
    std::vector<AblateRow> rows;
    for (const auto& arm : arms) {
        ModelConfig mcfg = base_model;
        mcfg.rope_scheme = arm.rope;
        mcfg.dual_branch = arm.dual_branch;

        LayoutConfig lcfg = base_layout;
        lcfg.dual_encoder = arm.dual_encoder;

        TrainConfig tcfg = budget;
        tcfg.out_dir.clear();  // arms stay in memory
        // Without a ViT branch, text must read the clean VAE tokens or it
        // cannot see images at all.
        tcfg.mask_rules.text_sees_clean_vae = !arm.dual_encoder;

        CheckpointExtra ex = extra;
        ex.dual_encoder = arm.dual_encoder;
        ex.text_sees_clean_vae = tcfg.mask_rules.text_sees_clean_vae;

        ToyVae vae(ex.patch_size, ex.vae_seed);
        ToyViT vit(ex.patch_size, mcfg.width, ex.vit_seed);

        std::cout << "== ablation arm " << arm.name << " ==\n";
        TrainResult run = train(mcfg, tcfg, lcfg, train_records, vae, vit, ex);

        EvalConfig arm_eval = ecfg;
        arm_eval.mask_rules = tcfg.mask_rules;
        EvalReport rep = evaluate(*run.params, eval_records, lcfg, vae, vit, ex, arm_eval);

        AblateRow row;
        row.name = arm.name;
        row.corpus_hash = corpus_hash;
        const int window = std::max(1, std::min<int>(50, static_cast<int>(run.metrics.size())));
        double fsum = 0.0, nsum = 0.0;
        for (int i = 0; i < window; ++i) {
            const auto& m = run.metrics[run.metrics.size() - 1 - i];
            fsum += m.flow_loss;
            nsum += m.ntp_loss;
        }
        row.final_flow_smoothed = fsum / window;
        row.final_ntp_smoothed = nsum / window;
        row.i2t_exact = rep.i2t_exact;
        row.t2i_full = rep.t2i_full;
        rows.push_back(row);
    }
    return rows;
}

std::string ablate_table(const std::vector<AblateRow>& rows) {
    std::ostringstream os;
    os << "arm                     flow(final,smoothed)  ntp(final,smoothed)  i2t_exact  t2i_full  corpus\n";
    for (const auto& r : rows) {
        os << r.name << "  " << r.final_flow_smoothed << "  " << r.final_ntp_smoothed << "  "
           << r.i2t_exact << "  " << r.t2i_full << "  " << std::hex << r.corpus_hash << std::dec
           << "\n";
    }
    return os.str();
}

}  // namespace fuselave

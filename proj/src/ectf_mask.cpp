// SPDX-License-Identifier: Apache-2.0
#include "fuselave/ectf_mask.hpp"

#include <algorithm>

namespace fuselave {

bool pair_allowed(const TokenMeta& q, int q_idx, const TokenMeta& k, int k_idx,
                  const MaskRules& rules) {
    if (q.sample_id != k.sample_id) return false;
    const bool same_image = k.image_index >= 0 && k.image_index == q.image_index;

    switch (q.cls) {
        case ModalityClass::Text:
            if (k.cls == ModalityClass::Text) return k_idx <= q_idx;
            if (k.cls == ModalityClass::VitClean) return k.t < q.t;
            if (k.cls == ModalityClass::VaeClean) return rules.text_sees_clean_vae && k.t < q.t;
            return false;
        case ModalityClass::VitClean:
            if (k.cls == ModalityClass::Text) return k.t < q.t;
            if (k.cls == ModalityClass::VitClean) return same_image || k.t < q.t;
            return false;
        case ModalityClass::VaeClean:
            if (k.cls == ModalityClass::VaeNoisy) return false;
            if (k.cls == ModalityClass::Text) return k.t < q.t;
            return same_image || k.t < q.t;  // VitClean / VaeClean
        case ModalityClass::VaeNoisy:
            if (k.cls == ModalityClass::VaeNoisy) return same_image;
            return k.t < q.t;  // Text / VitClean / VaeClean, strictly earlier
    }
    return false;
}

namespace {

struct Block {
    int start = 0;
    int end = 0;  // half-open
    ModalityClass cls = ModalityClass::Text;
    int image_index = -1;
    int sample_id = 0;
    long t_first = 0;
    long t_last = 0;
};

std::vector<Block> decompose(const std::vector<TokenMeta>& metas) {
    std::vector<Block> blocks;
    for (size_t i = 0; i < metas.size(); ++i) {
        const auto& m = metas[i];
        if (m.cls == ModalityClass::VaeNoisy)
            check(m.image_index >= 0, "build_mask: noisy token without image_index");
        if (!blocks.empty()) {
            Block& b = blocks.back();
            if (b.cls == m.cls && b.image_index == m.image_index && b.sample_id == m.sample_id) {
                b.end = static_cast<int>(i) + 1;
                b.t_last = m.t;
                continue;
            }
        }
        Block b;
        b.start = static_cast<int>(i);
        b.end = static_cast<int>(i) + 1;
        b.cls = m.cls;
        b.image_index = m.image_index;
        b.sample_id = m.sample_id;
        b.t_first = b.t_last = m.t;
        blocks.push_back(b);
    }
    return blocks;
}

void push_range(std::vector<std::pair<int, int>>& row, int s, int e) {
    if (s >= e) return;
    if (!row.empty() && row.back().second == s) {
        row.back().second = e;  // coalesce adjacent ranges
    } else {
        row.emplace_back(s, e);
    }
}

}  // namespace

AttentionMask build_mask(const std::vector<TokenMeta>& metas, const MaskRules& rules) {
    const int L = static_cast<int>(metas.size());
    AttentionMask mask;
    mask.length = L;
    mask.intervals.resize(L);

    const std::vector<Block> blocks = decompose(metas);

    for (int q = 0; q < L; ++q) {
        const TokenMeta& qm = metas[q];
        auto& row = mask.intervals[q];

        // Text-run prefix admitted by a strict temporal threshold; text runs
        // carry consecutive temporal IDs, so the cut is an index offset.
        auto text_prefix = [&](const Block& b, long t_limit) {
            if (b.t_first >= t_limit) return;
            const long cut = std::min<long>(b.end - b.start, t_limit - b.t_first);
            push_range(row, b.start, b.start + static_cast<int>(cut));
        };

        for (const Block& b : blocks) {
            if (b.sample_id != qm.sample_id) continue;
            const bool same_image = b.image_index >= 0 && b.image_index == qm.image_index;
            switch (qm.cls) {
                case ModalityClass::Text:
                    if (b.cls == ModalityClass::Text) {
                        if (b.end <= q)
                            push_range(row, b.start, b.end);
                        else if (b.start <= q)
                            push_range(row, b.start, q + 1);
                    } else if (b.cls == ModalityClass::VitClean && b.t_first < qm.t) {
                        push_range(row, b.start, b.end);
                    } else if (b.cls == ModalityClass::VaeClean && rules.text_sees_clean_vae &&
                               b.t_first < qm.t) {
                        push_range(row, b.start, b.end);
                    }
                    break;
                case ModalityClass::VitClean:
                    if (b.cls == ModalityClass::Text)
                        text_prefix(b, qm.t);
                    else if (b.cls == ModalityClass::VitClean && (same_image || b.t_first < qm.t))
                        push_range(row, b.start, b.end);
                    break;
                case ModalityClass::VaeClean:
                    if (b.cls == ModalityClass::Text)
                        text_prefix(b, qm.t);
                    else if ((b.cls == ModalityClass::VitClean || b.cls == ModalityClass::VaeClean) &&
                             (same_image || b.t_first < qm.t))
                        push_range(row, b.start, b.end);
                    break;
                case ModalityClass::VaeNoisy:
                    if (b.cls == ModalityClass::Text)
                        text_prefix(b, qm.t);
                    else if (b.cls == ModalityClass::VaeNoisy) {
                        if (same_image) push_range(row, b.start, b.end);
                    } else if (b.t_first < qm.t) {
                        push_range(row, b.start, b.end);
                    }
                    break;
            }
        }
        check(!row.empty(), "build_mask: query row with no permitted keys");
    }
    return mask;
}

AttentionMask oracle_mask(const std::vector<TokenMeta>& metas, const MaskRules& rules) {
    const int L = static_cast<int>(metas.size());
    AttentionMask mask;
    mask.length = L;
    mask.intervals.resize(L);
    for (int q = 0; q < L; ++q) {
        if (metas[q].cls == ModalityClass::VaeNoisy)
            check(metas[q].image_index >= 0, "oracle_mask: noisy token without image_index");
        auto& row = mask.intervals[q];
        int run_start = -1;
        for (int k = 0; k < L; ++k) {
            const bool ok = pair_allowed(metas[q], q, metas[k], k, rules);
            if (ok && run_start < 0) run_start = k;
            if (!ok && run_start >= 0) {
                row.emplace_back(run_start, k);
                run_start = -1;
            }
        }
        if (run_start >= 0) row.emplace_back(run_start, L);
    }
    return mask;
}

}  // namespace fuselave

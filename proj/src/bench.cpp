// SPDX-License-Identifier: Apache-2.0
#include "fuselave/bench.hpp"

#include <sstream>

namespace fuselave {

std::vector<LayoutDescItem> parse_layout_desc(const std::string& desc) {
    std::vector<LayoutDescItem> items;
    std::stringstream ss(desc);
    std::string part;
    while (std::getline(ss, part, ',')) {
        check(!part.empty(), "layout desc: empty item");
        LayoutDescItem item;
        if (part[0] == 't') {
            item.count = std::stoi(part.substr(1));
            check(item.count > 0, "layout desc: text count must be positive");
        } else if (part[0] == 'i') {
            const auto x = part.find('x');
            check(x != std::string::npos, "layout desc: image item needs HxW");
            item.is_image = true;
            item.grid_h = std::stoi(part.substr(1, x - 1));
            item.grid_w = std::stoi(part.substr(x + 1));
            check(item.grid_h > 0 && item.grid_w > 0, "layout desc: bad grid");
        } else {
            throw std::invalid_argument("layout desc: items start with 't' or 'i'");
        }
        items.push_back(item);
    }
    check(!items.empty(), "layout desc: empty description");
    return items;
}

std::vector<TokenMeta> synthetic_layout_metas(const std::vector<LayoutDescItem>& items, bool ectf,
                                              bool dual_encoder) {
    std::vector<TokenMeta> metas;
    int n_images = 0;
    for (const auto& it : items)
        if (it.is_image) ++n_images;
    int image_index = 0;
    for (const auto& it : items) {
        if (!it.is_image) {
            for (int i = 0; i < it.count; ++i) {
                TokenMeta m;
                m.cls = ModalityClass::Text;
                metas.push_back(m);
            }
            continue;
        }
        TokenMeta vs;
        vs.cls = ModalityClass::Text;
        metas.push_back(vs);
        auto emit_grid = [&](ModalityClass cls) {
            for (int h = 0; h < it.grid_h; ++h) {
                for (int w = 0; w < it.grid_w; ++w) {
                    TokenMeta m;
                    m.cls = cls;
                    m.image_index = image_index;
                    m.h = h;
                    m.w = w;
                    if (cls == ModalityClass::VaeNoisy) m.has_flow_loss = true;
                    metas.push_back(m);
                }
            }
        };
        if (dual_encoder) emit_grid(ModalityClass::VitClean);
        emit_grid(ModalityClass::VaeClean);
        TokenMeta ve;
        ve.cls = ModalityClass::Text;
        metas.push_back(ve);
        const bool noisy = ectf || image_index == n_images - 1;
        if (noisy && n_images > 0) emit_grid(ModalityClass::VaeNoisy);
        ++image_index;
    }
    assign_position_ids(metas);
    return metas;
}

BenchRow bench_ectf_case(int n_text, int images, int grid_tokens) {
    check(n_text >= 0 && images >= 1 && grid_tokens >= 1, "bench: sizes must be positive");
    BenchRow row;
    row.n_text = n_text;
    row.images = images;
    row.grid = grid_tokens;

    auto desc = [&](int n_images) {
        std::vector<LayoutDescItem> items;
        if (n_text > 0) items.push_back({false, n_text, 0, 0});
        for (int i = 0; i < n_images; ++i) items.push_back({true, 0, 1, grid_tokens});
        return items;
    };

    const auto ectf_metas = synthetic_layout_metas(desc(images), true);
    row.ectf_tokens = static_cast<long>(ectf_metas.size());
    row.ectf_pairs = build_mask(ectf_metas).pair_count();

    for (int k = 1; k <= images; ++k) {
        const auto pass = synthetic_layout_metas(desc(k), false);
        row.baseline_tokens += static_cast<long>(pass.size());
        row.baseline_pairs += build_mask(pass).pair_count();
    }
    row.pair_ratio = static_cast<double>(row.baseline_pairs) / static_cast<double>(row.ectf_pairs);
    return row;
}

std::vector<BenchRow> bench_ectf(const std::vector<int>& image_counts,
                                 const std::vector<int>& grid_sizes, int n_text) {
    std::vector<BenchRow> rows;
    for (int g : grid_sizes)
        for (int T : image_counts) rows.push_back(bench_ectf_case(n_text, T, g));
    return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "n_text  T  g   ectf_tokens  ectf_pairs  base_tokens  base_pairs  ratio\n";
    for (const auto& r : rows) {
        os << r.n_text << "  " << r.images << "  " << r.grid << "   " << r.ectf_tokens << "  "
           << r.ectf_pairs << "  " << r.baseline_tokens << "  " << r.baseline_pairs << "  "
           << r.pair_ratio << "\n";
    }
    return os.str();
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#include "fuselave/corpus.hpp"

#include <filesystem>
#include <fstream>

namespace fuselave {

TaskKind record_task(const InterleavedSample& sample) {
    int n_text = 0, n_img = 0;
    bool starts_with_image = false;
    for (size_t i = 0; i < sample.items.size(); ++i) {
        if (std::holds_alternative<ImageItem>(sample.items[i])) {
            if (i == 0) starts_with_image = true;
            ++n_img;
        } else {
            ++n_text;
        }
    }
    if (n_img == 0) return TaskKind::TextOnly;
    if (starts_with_image) return TaskKind::I2T;
    if (n_img == 1) return TaskKind::T2I;
    return TaskKind::Edit;
}

namespace {

GlyphScene random_scene(Rng& rng, double two_shape_fraction) {
    GlyphScene s;
    const bool two = rng.uniform() < two_shape_fraction;
    const int cell0 = static_cast<int>(rng.below(kNumCells));
    s.shapes.push_back({static_cast<ShapeKind>(rng.below(kNumKinds)),
                        static_cast<GlyphColor>(rng.below(kNumColors)), cell0});
    if (two) {
        int cell1 = static_cast<int>(rng.below(kNumCells - 1));
        if (cell1 >= cell0) ++cell1;
        s.shapes.push_back({static_cast<ShapeKind>(rng.below(kNumKinds)),
                            static_cast<GlyphColor>(rng.below(kNumColors)), cell1});
        if (s.shapes[0].cell > s.shapes[1].cell) std::swap(s.shapes[0], s.shapes[1]);
    }
    return s;
}

EditOp random_edit(Rng& rng, const GlyphScene& scene) {
    EditOp op;
    const int which = static_cast<int>(rng.below(3));
    if (which == 0) {
        op.kind = EditOp::Kind::Recolor;
        int c = static_cast<int>(rng.below(kNumColors - 1));
        if (c >= static_cast<int>(scene.shapes[0].color)) ++c;
        op.new_color = static_cast<GlyphColor>(c);
    } else if (which == 1) {
        op.kind = EditOp::Kind::Move;
        int cell = static_cast<int>(rng.below(kNumCells - 1));
        if (cell >= scene.shapes[0].cell) ++cell;
        op.new_cell = cell;
    } else {
        op.kind = EditOp::Kind::Reshape;
        int k = static_cast<int>(rng.below(kNumKinds - 1));
        if (k >= static_cast<int>(scene.shapes[0].kind)) ++k;
        op.new_kind = static_cast<ShapeKind>(k);
    }
    return op;
}

std::vector<int> with_bos(std::vector<int> ids) {
    ids.insert(ids.begin(), Vocabulary::instance().bos());
    return ids;
}

std::vector<int> with_eos(std::vector<int> ids) {
    ids.push_back(Vocabulary::instance().eos());
    return ids;
}

}  // namespace

std::vector<InterleavedSample> gen_corpus_records(const CorpusConfig& cfg, bool eval_split) {
    check(cfg.canvas >= 8 && cfg.canvas % 2 == 0, "corpus: canvas must be even and >= 8");
    Rng rng = Rng(cfg.seed).fork(eval_split ? 0xe7a1 : 0x7121);

    const int n_t2i = eval_split ? cfg.eval_t2i : cfg.n_t2i;
    const int n_i2t = eval_split ? cfg.eval_i2t : cfg.n_i2t;
    const int n_edit = eval_split ? cfg.eval_edit : cfg.n_edit;
    const int n_text = eval_split ? cfg.eval_text : cfg.n_text;

    std::vector<InterleavedSample> records;
    const auto& vocab = Vocabulary::instance();
    (void)vocab;

    for (int i = 0; i < n_t2i; ++i) {
        Rng r = rng.fork(0x1000 + i);
        const GlyphScene scene = random_scene(r, cfg.two_shape_fraction);
        InterleavedSample s;
        s.items.push_back(TextSpan{with_bos(caption_tokens(scene))});
        s.items.push_back(ImageItem{render_scene(scene, cfg.canvas)});
        s.items.push_back(TextSpan{{Vocabulary::instance().eos()}});
        records.push_back(std::move(s));
    }
    for (int i = 0; i < n_i2t; ++i) {
        Rng r = rng.fork(0x2000 + i);
        const GlyphScene scene = random_scene(r, cfg.two_shape_fraction);
        InterleavedSample s;
        s.items.push_back(ImageItem{render_scene(scene, cfg.canvas)});
        s.items.push_back(TextSpan{with_eos(caption_tokens(scene))});
        records.push_back(std::move(s));
    }
    for (int i = 0; i < n_edit; ++i) {
        Rng r = rng.fork(0x3000 + i);
        GlyphScene scene = random_scene(r, 0.0);  // single-shape chains
        InterleavedSample s;
        s.items.push_back(TextSpan{with_bos(caption_tokens(scene))});
        s.items.push_back(ImageItem{render_scene(scene, cfg.canvas)});
        const int n_edits = (r.uniform() < cfg.two_edit_fraction) ? 2 : 1;
        for (int e = 0; e < n_edits; ++e) {
            const EditOp op = random_edit(r, scene);
            s.items.push_back(TextSpan{instruction_tokens(scene, op)});
            scene = apply_edit(scene, op);
            s.items.push_back(ImageItem{render_scene(scene, cfg.canvas)});
        }
        s.items.push_back(TextSpan{{Vocabulary::instance().eos()}});
        records.push_back(std::move(s));
    }
    for (int i = 0; i < n_text; ++i) {
        Rng r = rng.fork(0x4000 + i);
        const GlyphScene scene = random_scene(r, cfg.two_shape_fraction);
        InterleavedSample s;
        s.items.push_back(TextSpan{with_eos(with_bos(caption_tokens(scene)))});
        records.push_back(std::move(s));
    }
    return records;
}

namespace {

void put_u16(std::ostream& os, uint16_t v) {
    const uint8_t b[2] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_varint(std::ostream& os, uint64_t v) {
    while (v >= 0x80) {
        const uint8_t b = static_cast<uint8_t>(v) | 0x80;
        os.put(static_cast<char>(b));
        v >>= 7;
    }
    os.put(static_cast<char>(v));
}

uint16_t get_u16(std::istream& is) {
    uint8_t b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_varint(std::istream& is) {
    uint64_t v = 0;
    int shift = 0;
    for (;;) {
        const int c = is.get();
        check(c != EOF, "dataset: truncated varint");
        v |= static_cast<uint64_t>(c & 0x7f) << shift;
        if (!(c & 0x80)) break;
        shift += 7;
        check(shift < 64, "dataset: varint overflow");
    }
    return v;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<InterleavedSample>& records) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "write_dataset: cannot open " + path);
    os.write("FLV1", 4);
    put_u32(os, static_cast<uint32_t>(records.size()));
    for (const auto& rec : records) {
        put_u32(os, static_cast<uint32_t>(rec.items.size()));
        for (const auto& item : rec.items) {
            if (const auto* span = std::get_if<TextSpan>(&item)) {
                os.put(0);
                put_varint(os, span->ids.size());
                for (int id : span->ids) {
                    check(id >= 0, "write_dataset: negative token ID");
                    put_varint(os, static_cast<uint64_t>(id));
                }
            } else {
                const auto& img = std::get<ImageItem>(item).image;
                os.put(1);
                put_u16(os, static_cast<uint16_t>(img.height));
                put_u16(os, static_cast<uint16_t>(img.width));
                os.write(reinterpret_cast<const char*>(img.rgb.data()),
                         static_cast<long>(img.rgb.size()));
            }
        }
    }
    check(os.good(), "write_dataset: write failure");
}

std::vector<InterleavedSample> read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "read_dataset: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::string(magic, 4) == "FLV1", "read_dataset: bad magic");
    const uint32_t n = get_u32(is);
    std::vector<InterleavedSample> records;
    records.reserve(n);
    for (uint32_t r = 0; r < n; ++r) {
        InterleavedSample rec;
        const uint32_t n_items = get_u32(is);
        for (uint32_t it = 0; it < n_items; ++it) {
            const int tag = is.get();
            check(tag == 0 || tag == 1, "read_dataset: bad item tag");
            if (tag == 0) {
                const uint64_t cnt = get_varint(is);
                TextSpan span;
                for (uint64_t i = 0; i < cnt; ++i)
                    span.ids.push_back(static_cast<int>(get_varint(is)));
                rec.items.push_back(std::move(span));
            } else {
                const int h = get_u16(is);
                const int w = get_u16(is);
                Image img(h, w);
                is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<long>(img.rgb.size()));
                check(is.good(), "read_dataset: truncated image");
                rec.items.push_back(ImageItem{std::move(img)});
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "file_hash: cannot open " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 1099511628211ull;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

void gen_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_dataset(out_dir + "/train.flv", gen_corpus_records(cfg, false));
    write_dataset(out_dir + "/eval.flv", gen_corpus_records(cfg, true));
}

}  // namespace fuselave

// SPDX-License-Identifier: Apache-2.0
#include "fuselave/glyph.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace fuselave {

namespace {

const char* kKindWords[kNumKinds] = {"square", "disc", "cross"};
const char* kColorWords[kNumColors] = {"red", "green", "blue", "yellow", "white"};
const char* kCellWords[kNumCells] = {"top-left", "top-right", "bottom-left", "bottom-right"};

const uint8_t kPalette[kNumColors][3] = {
    {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}, {255, 255, 255}};

uint64_t scene_hash(const GlyphScene& s) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    for (const auto& sh : s.shapes) {
        mix(static_cast<uint64_t>(sh.kind));
        mix(static_cast<uint64_t>(sh.color) + 16);
        mix(static_cast<uint64_t>(sh.cell) + 64);
    }
    return h;
}

}  // namespace

Vocabulary::Vocabulary() {
    words_ = {"<bos>", "<eos>", "<|vision_start|>", "<|vision_end|>"};
    const char* plain[] = {"a",    "there", "is",     "in",   "the",  "at",   "and",
                           "corner", "now",  "please", "recolor", "move", "turn", "change",
                           "to",   "into",  "make",   "it"};
    for (const char* w : plain) words_.push_back(w);
    for (const char* w : kColorWords) words_.push_back(w);
    for (const char* w : kKindWords) words_.push_back(w);
    for (const char* w : kCellWords) words_.push_back(w);
}

const Vocabulary& Vocabulary::instance() {
    static Vocabulary v;
    return v;
}

const std::string& Vocabulary::word(int id) const {
    check(id >= 0 && id < size(), "vocab: id out of range");
    return words_[id];
}

int Vocabulary::id(const std::string& w) const {
    for (size_t i = 0; i < words_.size(); ++i)
        if (words_[i] == w) return static_cast<int>(i);
    throw std::invalid_argument("vocab: unknown word '" + w + "'");
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& ws) const {
    std::vector<int> out;
    for (const auto& w : ws) out.push_back(id(w));
    return out;
}

Image render_scene(const GlyphScene& scene, int canvas) {
    check(canvas % 2 == 0 && canvas >= 8, "render: canvas must be even and >= 8");
    check(scene.shapes.size() <= 2, "render: at most two shapes");
    for (size_t i = 0; i + 1 < scene.shapes.size(); ++i)
        check(scene.shapes[i].cell != scene.shapes[i + 1].cell, "render: shapes share a cell");

    Image img(canvas, canvas);
    const int half = canvas / 2;
    for (const auto& sh : scene.shapes) {
        const int oy = (sh.cell / 2) * half;
        const int ox = (sh.cell % 2) * half;
        const uint8_t* col = kPalette[static_cast<int>(sh.color)];
        const double c = (half - 1) / 2.0;
        // shape footprint scales with the cell (half x half pixels)
        const int lo = half / 8, hi = half - half / 8 - 1;
        for (int y = 0; y < half; ++y) {
            for (int x = 0; x < half; ++x) {
                bool on = false;
                switch (sh.kind) {
                    case ShapeKind::Square:
                        on = y >= lo && y <= hi && x >= lo && x <= hi;
                        break;
                    case ShapeKind::Disc: {
                        const double dy = y - c, dx = x - c;
                        on = dy * dy + dx * dx <= (0.37 * half) * (0.37 * half);
                        break;
                    }
                    case ShapeKind::Cross: {
                        const bool band_y = std::abs(y - c) <= half / 8.0;
                        const bool band_x = std::abs(x - c) <= half / 8.0;
                        on = (band_y && x >= lo && x <= hi) || (band_x && y >= lo && y <= hi);
                        break;
                    }
                }
                if (on) {
                    const size_t p = (static_cast<size_t>(oy + y) * canvas + (ox + x)) * 3;
                    img.rgb[p] = col[0];
                    img.rgb[p + 1] = col[1];
                    img.rgb[p + 2] = col[2];
                }
            }
        }
    }
    return img;
}

namespace {

void emit_shape_phrase(std::vector<std::string>& out, const GlyphShape& sh, int variant) {
    const std::string color = kColorWords[static_cast<int>(sh.color)];
    const std::string kind = kKindWords[static_cast<int>(sh.kind)];
    const std::string cell = kCellWords[sh.cell];
    if (variant == 0) {
        out.insert(out.end(), {"a", color, kind, "at", cell});
    } else {
        out.insert(out.end(), {"a", color, kind, "in", "the", cell, "corner"});
    }
}

}  // namespace

std::vector<int> caption_tokens(const GlyphScene& scene) {
    check(!scene.shapes.empty() && scene.shapes.size() <= 2, "caption: need 1 or 2 shapes");
    const int variant = static_cast<int>(scene_hash(scene) % 2);
    std::vector<std::string> ws;
    if (variant == 1) ws.insert(ws.end(), {"there", "is"});
    emit_shape_phrase(ws, scene.shapes[0], variant);
    if (scene.shapes.size() == 2) {
        ws.push_back("and");
        emit_shape_phrase(ws, scene.shapes[1], variant);
    }
    return Vocabulary::instance().encode(ws);
}

GlyphScene parse_caption(const std::vector<int>& tokens) {
    const auto& vocab = Vocabulary::instance();
    std::vector<std::string> ws;
    for (int id : tokens) ws.push_back(vocab.word(id));

    auto kind_of = [](const std::string& w) -> std::optional<ShapeKind> {
        for (int i = 0; i < kNumKinds; ++i)
            if (w == kKindWords[i]) return static_cast<ShapeKind>(i);
        return std::nullopt;
    };
    auto color_of = [](const std::string& w) -> std::optional<GlyphColor> {
        for (int i = 0; i < kNumColors; ++i)
            if (w == kColorWords[i]) return static_cast<GlyphColor>(i);
        return std::nullopt;
    };
    auto cell_of = [](const std::string& w) -> std::optional<int> {
        for (int i = 0; i < kNumCells; ++i)
            if (w == kCellWords[i]) return i;
        return std::nullopt;
    };

    // Shape phrases are (color, kind, cell) triples in order of appearance;
    // filler words carry no content.
    GlyphScene scene;
    std::optional<GlyphColor> color;
    std::optional<ShapeKind> kind;
    for (const auto& w : ws) {
        if (auto c = color_of(w)) {
            color = c;
        } else if (auto k = kind_of(w)) {
            kind = k;
        } else if (auto cl = cell_of(w)) {
            check(color.has_value() && kind.has_value(), "parse_caption: malformed caption");
            scene.shapes.push_back({*kind, *color, *cl});
            color.reset();
            kind.reset();
        }
    }
    check(!scene.shapes.empty(), "parse_caption: no shapes found");
    return scene;
}

std::vector<int> instruction_tokens(const GlyphScene& scene, const EditOp& op) {
    check(scene.shapes.size() == 1, "instruction: edits apply to single-shape scenes");
    const std::string kind = kKindWords[static_cast<int>(scene.shapes[0].kind)];
    const int variant = static_cast<int>((scene_hash(scene) ^ static_cast<uint64_t>(op.kind)) % 2);
    std::vector<std::string> ws;
    switch (op.kind) {
        case EditOp::Kind::Recolor: {
            const std::string color = kColorWords[static_cast<int>(op.new_color)];
            if (variant == 0)
                ws = {"recolor", "the", kind, "to", color};
            else
                ws = {"now", "change", "the", kind, "to", color};
            break;
        }
        case EditOp::Kind::Move: {
            const std::string cell = kCellWords[op.new_cell];
            if (variant == 0)
                ws = {"move", "the", kind, "to", cell};
            else
                ws = {"please", "move", "the", kind, "to", cell};
            break;
        }
        case EditOp::Kind::Reshape: {
            const std::string nk = kKindWords[static_cast<int>(op.new_kind)];
            if (variant == 0)
                ws = {"turn", "the", kind, "into", "a", nk};
            else
                ws = {"make", "it", "a", nk};
            break;
        }
    }
    return Vocabulary::instance().encode(ws);
}

EditOp parse_instruction(const std::vector<int>& tokens) {
    const auto& vocab = Vocabulary::instance();
    std::vector<std::string> ws;
    for (int id : tokens) ws.push_back(vocab.word(id));
    check(!ws.empty(), "parse_instruction: empty");

    EditOp op;
    // The trailing content word determines the op: a color => recolor, a
    // cell => move, a kind => reshape.
    const std::string& last = ws.back();
    for (int i = 0; i < kNumColors; ++i) {
        if (last == kColorWords[i]) {
            op.kind = EditOp::Kind::Recolor;
            op.new_color = static_cast<GlyphColor>(i);
            return op;
        }
    }
    for (int i = 0; i < kNumCells; ++i) {
        if (last == kCellWords[i]) {
            op.kind = EditOp::Kind::Move;
            op.new_cell = i;
            return op;
        }
    }
    for (int i = 0; i < kNumKinds; ++i) {
        if (last == kKindWords[i]) {
            op.kind = EditOp::Kind::Reshape;
            op.new_kind = static_cast<ShapeKind>(i);
            return op;
        }
    }
    throw std::invalid_argument("parse_instruction: unrecognized instruction");
}

GlyphScene apply_edit(const GlyphScene& scene, const EditOp& op) {
    check(scene.shapes.size() == 1, "apply_edit: edits apply to single-shape scenes");
    GlyphScene out = scene;
    switch (op.kind) {
        case EditOp::Kind::Recolor:
            out.shapes[0].color = op.new_color;
            break;
        case EditOp::Kind::Move:
            out.shapes[0].cell = op.new_cell;
            break;
        case EditOp::Kind::Reshape:
            out.shapes[0].kind = op.new_kind;
            break;
    }
    return out;
}

GlyphScene classify_scene(const Image& img) {
    check(img.height == img.width && img.height % 2 == 0, "classify: square even canvas expected");
    const int canvas = img.height;
    const int half = canvas / 2;

    GlyphScene scene;
    for (int cell = 0; cell < kNumCells; ++cell) {
        const int oy = (cell / 2) * half;
        const int ox = (cell % 2) * half;

        // non-background mask and mean color
        std::vector<char> mask(static_cast<size_t>(half) * half, 0);
        double mean[3] = {0, 0, 0};
        int count = 0;
        for (int y = 0; y < half; ++y) {
            for (int x = 0; x < half; ++x) {
                const size_t p = (static_cast<size_t>(oy + y) * canvas + (ox + x)) * 3;
                const int mx = std::max({img.rgb[p], img.rgb[p + 1], img.rgb[p + 2]});
                if (mx > 96) {
                    mask[static_cast<size_t>(y) * half + x] = 1;
                    for (int c = 0; c < 3; ++c) mean[c] += img.rgb[p + c];
                    ++count;
                }
            }
        }
        if (count < half * half / 10) continue;  // no shape here
        for (double& m : mean) m /= count;

        int best_color = 0;
        double best_cd = 1e18;
        for (int c = 0; c < kNumColors; ++c) {
            double d = 0;
            for (int ch = 0; ch < 3; ++ch) {
                const double diff = mean[ch] - kPalette[c][ch];
                d += diff * diff;
            }
            if (d < best_cd) {
                best_cd = d;
                best_color = c;
            }
        }

        // kind by best IoU against a template rendered in the same cell
        int best_kind = 0;
        double best_iou = -1.0;
        for (int k = 0; k < kNumKinds; ++k) {
            GlyphScene tmpl;
            tmpl.shapes.push_back({static_cast<ShapeKind>(k), GlyphColor::White, cell});
            const Image timg = render_scene(tmpl, canvas);
            long inter = 0, uni = 0;
            for (int y = 0; y < half; ++y) {
                for (int x = 0; x < half; ++x) {
                    const size_t p = (static_cast<size_t>(oy + y) * canvas + (ox + x)) * 3;
                    const bool ton = timg.rgb[p] > 0;
                    const bool mon = mask[static_cast<size_t>(y) * half + x] != 0;
                    inter += (ton && mon);
                    uni += (ton || mon);
                }
            }
            const double iou = uni ? static_cast<double>(inter) / uni : 0.0;
            if (iou > best_iou) {
                best_iou = iou;
                best_kind = k;
            }
        }
        scene.shapes.push_back(
            {static_cast<ShapeKind>(best_kind), static_cast<GlyphColor>(best_color), cell});
    }
    return scene;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "write_ppm: cannot open " + path);
    f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<long>(img.rgb.size()));
}

std::string tokens_to_string(const std::vector<int>& ids) {
    const auto& vocab = Vocabulary::instance();
    std::ostringstream os;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) os << ' ';
        os << vocab.word(ids[i]);
    }
    return os.str();
}

}  // namespace fuselave

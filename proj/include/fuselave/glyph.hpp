// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fuselave/common.hpp"
#include "fuselave/encoders.hpp"

namespace fuselave {

enum class ShapeKind : int { Square = 0, Disc = 1, Cross = 2 };
enum class GlyphColor : int { Red = 0, Green = 1, Blue = 2, Yellow = 3, White = 4 };

constexpr int kNumKinds = 3;
constexpr int kNumColors = 5;
constexpr int kNumCells = 4;  // 2x2 coarse grid, row-major

struct GlyphShape {
    ShapeKind kind = ShapeKind::Square;
    GlyphColor color = GlyphColor::Red;
    int cell = 0;
    bool operator==(const GlyphShape&) const = default;
};

// At most two shapes in distinct cells, kept sorted by cell.
struct GlyphScene {
    std::vector<GlyphShape> shapes;
    bool operator==(const GlyphScene&) const = default;
};

// Fixed toy vocabulary: specials first, then the caption/instruction words.
class Vocabulary {
  public:
    static const Vocabulary& instance();

    int bos() const { return 0; }
    int eos() const { return 1; }
    int vision_start() const { return 2; }
    int vision_end() const { return 3; }

    int size() const { return static_cast<int>(words_.size()); }
    const std::string& word(int id) const;
    int id(const std::string& w) const;  // throws on unknown word

    std::vector<int> encode(const std::vector<std::string>& ws) const;

  private:
    Vocabulary();
    std::vector<std::string> words_;
};

Image render_scene(const GlyphScene& scene, int canvas = 16);

// Deterministic caption; the template variant is a function of the scene, so
// captioning is a single-valued map.
std::vector<int> caption_tokens(const GlyphScene& scene);
GlyphScene parse_caption(const std::vector<int>& tokens);  // exact inverse

struct EditOp {
    enum class Kind { Recolor, Move, Reshape } kind = Kind::Recolor;
    GlyphColor new_color = GlyphColor::Red;
    int new_cell = 0;
    ShapeKind new_kind = ShapeKind::Square;
};

// Edits apply to single-shape scenes.
std::vector<int> instruction_tokens(const GlyphScene& scene, const EditOp& op);
EditOp parse_instruction(const std::vector<int>& tokens);
GlyphScene apply_edit(const GlyphScene& scene, const EditOp& op);

// Pixel-space oracle: per coarse cell, a shape is detected from the non-
// background mask, its color from the nearest palette match of the mean, and
// its kind from the best template IoU. Returns the classified scene.
GlyphScene classify_scene(const Image& img);

void write_ppm(const Image& img, const std::string& path);

std::string tokens_to_string(const std::vector<int>& ids);

}  // namespace fuselave

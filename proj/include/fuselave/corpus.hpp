// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fuselave/glyph.hpp"
#include "fuselave/seq_layout.hpp"

namespace fuselave {

enum class TaskKind { TextOnly, T2I, I2T, Edit };

struct CorpusConfig {
    uint64_t seed = 1;
    // training record counts per task
    int n_t2i = 3000;
    int n_i2t = 1500;
    int n_edit = 1200;
    int n_text = 600;
    // evaluation record counts per task
    int eval_t2i = 100;
    int eval_i2t = 100;
    int eval_edit = 100;
    int eval_text = 50;
    int canvas = 16;
    double two_shape_fraction = 0.2;
    double two_edit_fraction = 0.25;  // edit chains with a second instruction
};

// Task is recoverable from the item pattern alone.
TaskKind record_task(const InterleavedSample& sample);

std::vector<InterleavedSample> gen_corpus_records(const CorpusConfig& cfg, bool eval_split);

// FLV1 container: magic "FLV1", u32 record count; each record is a u32 item
// count followed by items tagged 0 (text: varint count + varint IDs) or
// 1 (image: u16 height, u16 width, raw u8 RGB). Little-endian throughout.
void write_dataset(const std::string& path, const std::vector<InterleavedSample>& records);
std::vector<InterleavedSample> read_dataset(const std::string& path);

uint64_t file_hash(const std::string& path);

// gen_corpus writes <out_dir>/train.flv and <out_dir>/eval.flv.
void gen_corpus(const CorpusConfig& cfg, const std::string& out_dir);

}  // namespace fuselave

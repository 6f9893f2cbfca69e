// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "fuselave/corpus.hpp"
#include "fuselave/evaluate.hpp"
#include "fuselave/train.hpp"

namespace fuselave {

// All run settings, one section per module in the config file.
struct RunConfig {
    CorpusConfig corpus;
    ModelConfig model;
    TrainConfig train;
    LayoutConfig layout;
    EvalConfig eval;
    CfgParams sample_cfg;
    OdeConfig ode;
    uint64_t sample_seed = 5;
    double sample_temperature = 0.0;
    CheckpointExtra extra;  // encoder seeds, patch geometry, generation grid
};

// Defaults produce the desk-scale reference setup (4 layers, width 128,
// 4 heads of 32) with the glyph corpus.
RunConfig default_config();

// "key = value" sections per module ([corpus], [model], [train], [sample],
// [eval]); '#' and ';' start comments. Unknown sections or keys are
// configuration errors.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// FUSELAVE_SEED overrides every seed in the run configuration.
void apply_env_overrides(RunConfig& cfg);

}  // namespace fuselave

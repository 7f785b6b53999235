#pragma once

#include <string>

#include "acc/alignment.hpp"
#include "acc/model.hpp"
#include "acc/training.hpp"

namespace acc {

struct FoldConfig {
    int k = 5;
    uint64_t seed = 0;
    FoldPolicy policy = FoldPolicy::Default;
};

// Everything a run needs, merged from one config file. The grammar is flat
// `key = value` lines under [section] headers; `#` starts a whole-line
// comment. Unknown sections or keys are usage errors, malformed values are
// parse errors. The ViT's image size and channel count always come from
// [pipeline], so [vit] carries no keys for them.
struct RunConfig {
    PipelineParams pipeline;
    ModelConfig model;
    TrainConfig train;
    FoldConfig folds;
    SynthSpec synth;

    // Mirrors the pipeline-owned fields into the ViT config. Call after any
    // field is changed outside parse_run_config.
    void finalize();
};

RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

// Canonical echo of every key; parse_run_config(format_run_config(rc))
// reproduces rc.
std::string format_run_config(const RunConfig& rc);

// Stable hash of the fields that determine parameter shapes (encoder
// geometry, mode, dimension, projection sizes); training hyperparameters,
// seeds, and paths deliberately stay out so checkpoints survive retuning.
uint64_t arch_hash(const RunConfig& rc);

}  // namespace acc

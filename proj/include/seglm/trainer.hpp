#pragma once

#include <ostream>
#include <string>

#include "seglm/checkpoint.hpp"
#include "seglm/corpus.hpp"
#include "seglm/model.hpp"

namespace seglm {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AdamState {
    LanguageModel<float> m;
    LanguageModel<float> v;
    std::int64_t step = 0;
};

struct TrainResult {
    std::int64_t steps = 0;
    Metrics final_valid;
    std::string final_checkpoint;
};

// Learning-rate schedule: linear warmup to the peak, then cosine decay to 0.
double scheduled_lr(const TrainPlan& plan, std::int64_t step);

// One AdamW update (decoupled weight decay; LayerNorm parameters and biases
// are not decayed). Gradients are clipped to a global L2 norm first.
void adamw_step(LanguageModel<float>& model, LanguageModel<float>& grads, AdamState& state,
                const TrainPlan& plan);

// Mean metrics over split windows in order; max_windows < 0 means the whole
// split. Never mutates the model.
Metrics evaluate_split(const LanguageModel<float>& model, const Corpus& corpus, Split split,
                       std::int64_t max_windows);

// Runs the configured phase. For finetune_with_cache an init checkpoint is
// required and the cache branch is enabled; pretrain_no_cache disables it.
// Writes metrics.csv and checkpoints/ under out_dir. `progress` may be null.
TrainResult train(const ModelConfig& base_cfg, const TrainPlan& plan, const Corpus& corpus,
                  const std::string& out_dir, const std::string& init_checkpoint,
                  std::ostream* progress);

// Saves model parameters, optimizer state and the manifest (config block,
// phase flag, opt_step).
void save_train_checkpoint(const std::string& path, const LanguageModel<float>& model,
                           const AdamState* adam, Phase phase);

// Loads parameters (and optimizer state when wanted and present). Returns the
// phase recorded in the checkpoint.
Phase load_train_checkpoint(const std::string& path, LanguageModel<float>& model,
                            AdamState* adam);

}  // namespace seglm

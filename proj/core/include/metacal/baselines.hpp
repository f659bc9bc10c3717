#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metacal/early_stopping.hpp"
#include "metacal/nnet.hpp"
#include "metacal/optim.hpp"

namespace metacal {

/// Shared schedule of the fine-tuning baselines. Training is full-batch.
///   B1: random init, Adam on target train with early stopping.
///   B2: pretrain on one source, then fine-tune on the target.
///   B3: pretrain on all sources pooled, then fine-tune on the target.
struct FinetuneConfig {
  std::size_t pretrain_epochs = 200;
  std::size_t finetune_patience = 20;
  std::size_t finetune_step_cap = 500;
  AdamConfig adam{};  // used for pretraining and fine-tuning

  EarlyStopping rule() const { return {finetune_patience, finetune_step_cap}; }
  void validate() const;
};

ParamVector train_b1(const MlpSpec& spec, const Batch& target_train, const Batch& target_val,
                     const FinetuneConfig& cfg, std::uint64_t seed);

struct PretrainResult {
  ParamVector params;
  std::vector<double> losses;  // training loss before each epoch, then after the last
};

/// Random init followed by cfg.pretrain_epochs full-batch Adam steps.
PretrainResult pretrain_traced(const MlpSpec& spec, const Batch& source_data, const FinetuneConfig& cfg,
                               std::uint64_t seed);
ParamVector pretrain(const MlpSpec& spec, const Batch& source_data, const FinetuneConfig& cfg,
                     std::uint64_t seed);

/// Adam from `pretrained` (fresh moments) with early stopping on target_val.
EarlyStoppingResult finetune_traced(const ParamVector& pretrained, const Batch& target_train,
                                    const Batch& target_val, const FinetuneConfig& cfg);
ParamVector finetune(const ParamVector& pretrained, const Batch& target_train, const Batch& target_val,
                     const FinetuneConfig& cfg);

ParamVector train_b2(const MlpSpec& spec, const Batch& source_data, const Batch& target_train,
                     const Batch& target_val, const FinetuneConfig& cfg, std::uint64_t seed);

/// Pools every source batch (row concatenation, in order) before pretraining.
ParamVector train_b3(const MlpSpec& spec, std::span<const Batch> sources, const Batch& target_train,
                     const Batch& target_val, const FinetuneConfig& cfg, std::uint64_t seed);

}  // namespace metacal

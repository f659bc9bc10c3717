#include "metacal/baselines.hpp"

#include "metacal/error.hpp"

namespace metacal {

void FinetuneConfig::validate() const {
  try {
    adam.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

EarlyStoppingResult finetune_traced(const ParamVector& pretrained, const Batch& target_train,
                                    const Batch& target_val, const FinetuneConfig& cfg) {
  cfg.validate();
  if (target_train.empty()) throw InvalidArgument("target training set is empty");
  AdamState state = AdamState::for_params(pretrained, cfg.adam);
  return train_with_early_stopping(pretrained, target_train, target_val, cfg.rule(),
                                   [&](ParamVector& p) { adam_update(state, p, grad(p, target_train)); });
}

ParamVector finetune(const ParamVector& pretrained, const Batch& target_train, const Batch& target_val,
                     const FinetuneConfig& cfg) {
  return finetune_traced(pretrained, target_train, target_val, cfg).best;
}

ParamVector train_b1(const MlpSpec& spec, const Batch& target_train, const Batch& target_val,
                     const FinetuneConfig& cfg, std::uint64_t seed) {
  if (target_train.empty()) throw InvalidArgument("target training set is empty");
  return finetune(init_params(spec, seed), target_train, target_val, cfg);
}

PretrainResult pretrain_traced(const MlpSpec& spec, const Batch& source_data, const FinetuneConfig& cfg,
                               std::uint64_t seed) {
  cfg.validate();
  if (source_data.empty()) throw InvalidArgument("pretraining data is empty");
  PretrainResult r{init_params(spec, seed), {}};
  r.losses.reserve(cfg.pretrain_epochs + 1);
  AdamState state = AdamState::for_params(r.params, cfg.adam);
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
    auto [loss, g] = loss_and_grad(r.params, source_data);
    r.losses.push_back(loss);
    adam_update(state, r.params, g);
  }
  r.losses.push_back(loss_mae(r.params, source_data));
  return r;
}

ParamVector pretrain(const MlpSpec& spec, const Batch& source_data, const FinetuneConfig& cfg,
                     std::uint64_t seed) {
  return pretrain_traced(spec, source_data, cfg, seed).params;
}

ParamVector train_b2(const MlpSpec& spec, const Batch& source_data, const Batch& target_train,
                     const Batch& target_val, const FinetuneConfig& cfg, std::uint64_t seed) {
  return finetune(pretrain(spec, source_data, cfg, seed), target_train, target_val, cfg);
}

ParamVector train_b3(const MlpSpec& spec, std::span<const Batch> sources, const Batch& target_train,
                     const Batch& target_val, const FinetuneConfig& cfg, std::uint64_t seed) {
  if (sources.empty()) throw InvalidArgument("B3 needs at least one source");
  const Batch pooled = concatenate(sources);
  if (pooled.empty()) throw InvalidArgument("all B3 sources are empty");
  return train_b2(spec, pooled, target_train, target_val, cfg, seed);
}

}  // namespace metacal

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "metacal/dataio.hpp"
#include "metacal/early_stopping.hpp"
#include "metacal/nnet.hpp"
#include "metacal/optim.hpp"

namespace metacal {

enum class MetaGradMode {
  FirstOrder,  // adapted parameters treated as constants of phi
  Exact,       // differentiates through every inner SGD step
};

struct MetaConfig {
  std::size_t inner_steps = 1;
  double inner_lr = 1e-3;
  double meta_lr = 1e-4;
  std::size_t meta_batch_size = 5;
  std::size_t meta_iterations = 1000;
  MetaGradMode mode = MetaGradMode::FirstOrder;
  std::uint64_t seed = 0;

  // Window lengths drawn from each source site per meta-iteration.
  std::size_t support_hours = 48;
  std::size_t query_hours = 48;

  // PerSite: each task's support and query are standardized with statistics
  // fitted on its support window.
  NormScope norm_scope = NormScope::PerSite;

  // Adam moments for the outer loop; the learning rate is meta_lr.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  // Few-shot adaptation at a target site.
  EarlyStopping deploy{.patience = 20, .step_cap = 500};

  void validate() const;
  AdamConfig meta_adam() const;
};

struct MetaHistoryEntry {
  std::size_t iteration;
  double mean_query_loss;
};

/// The shared initialization phi. With NormScope::SourcePool it carries the
/// normalization fitted on the pooled source records.
struct MetaLearner {
  ParamVector phi;
  MetaConfig config;
  std::vector<MetaHistoryEntry> history;
  std::optional<NormStats> stats;
};

/// Starts at phi and takes `inner_steps` full-batch SGD steps of size
/// `inner_lr` on the support loss.
ParamVector adapt_base(const ParamVector& phi, const Batch& support, std::size_t inner_steps,
                       double inner_lr);

struct MetaGradient {
  ParamVector gradient;
  double query_loss;  // at the adapted parameters
};

/// Gradient with respect to phi of L_query(adapt_base(phi, support)) for a
/// single task, in the mode selected by cfg.mode.
MetaGradient meta_gradient_and_loss(const ParamVector& phi, const Batch& support, const Batch& query,
                                    const MetaConfig& cfg);
ParamVector meta_gradient(const ParamVector& phi, const Batch& support, const Batch& query,
                          const MetaConfig& cfg);

struct MetaTask {
  Batch support;
  Batch query;
};

/// Produces the meta-batch for a given outer iteration.
using TaskSampler = std::function<std::vector<MetaTask>(std::size_t iteration)>;

/// Outer loop: for every iteration, sum the single-task meta-gradients of
/// the sampled tasks in order and apply one Adam step to phi.
MetaLearner train_meta(const ParamVector& init, const TaskSampler& sampler, const MetaConfig& cfg);

/// Site-based meta-training. phi starts at init_params(spec, cfg.seed);
/// each iteration samples cfg.meta_batch_size distinct sources and draws
/// fresh support/query windows from each. Sources too short for a window
/// pair are skipped with a warning; ConfigError if fewer than
/// meta_batch_size remain.
MetaLearner train_meta(std::span<const SiteDataset> sources, const MlpSpec& spec, const MetaConfig& cfg);

/// Sources long enough for one support/query window pair.
std::vector<std::size_t> eligible_sources(std::span<const SiteDataset> sources, const MetaConfig& cfg);

/// Few-shot adaptation: SGD at cfg.inner_lr from phi with early stopping on
/// target_val; returns the best-validation parameters.
ParamVector deploy_target(const MetaLearner& learner, const Batch& target_train,
                          const Batch& target_val, const MetaConfig& cfg);
EarlyStoppingResult deploy_target_traced(const MetaLearner& learner, const Batch& target_train,
                                         const Batch& target_val, const MetaConfig& cfg);

/// "iteration,mean_query_loss" rows.
void write_history_csv(const std::filesystem::path& path, std::span<const MetaHistoryEntry> history);

}  // namespace metacal

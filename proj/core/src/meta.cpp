#include "metacal/meta.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "metacal/error.hpp"
#include "metacal/random.hpp"

namespace metacal {

void MetaConfig::validate() const {
  if (inner_steps == 0) throw ConfigError("inner_steps must be at least 1");
  if (meta_batch_size == 0) throw ConfigError("meta_batch_size must be at least 1");
  if (!(inner_lr >= 0.0)) throw ConfigError(fmt::format("inner_lr must be >= 0, got {}", inner_lr));
  if (!(meta_lr > 0.0)) throw ConfigError(fmt::format("meta_lr must be positive, got {}", meta_lr));
  if (support_hours == 0 || query_hours == 0) throw ConfigError("support/query windows must be non-empty");
  try {
    meta_adam().validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

AdamConfig MetaConfig::meta_adam() const {
  return {.learning_rate = meta_lr, .beta1 = adam_beta1, .beta2 = adam_beta2, .epsilon = adam_epsilon};
}

ParamVector adapt_base(const ParamVector& phi, const Batch& support, std::size_t inner_steps,
                       double inner_lr) {
  if (support.empty()) throw InvalidArgument("support set is empty");
  const SgdConfig sgd{inner_lr};
  ParamVector theta = phi;
  for (std::size_t k = 0; k < inner_steps; ++k) theta = sgd_step(theta, grad(theta, support), sgd);
  return theta;
}

MetaGradient meta_gradient_and_loss(const ParamVector& phi, const Batch& support, const Batch& query,
                                    const MetaConfig& cfg) {
  if (support.empty()) throw InvalidArgument("support set is empty");
  if (query.empty()) throw InvalidArgument("query set is empty");
  if (cfg.inner_steps == 0) throw ConfigError("inner_steps must be at least 1");

  // Inner trajectory theta_0 = phi, ..., theta_k.
  std::vector<ParamVector> trajectory;
  trajectory.reserve(cfg.inner_steps + 1);
  trajectory.push_back(phi);
  const SgdConfig sgd{cfg.inner_lr};
  for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
    trajectory.push_back(sgd_step(trajectory.back(), grad(trajectory.back(), support), sgd));
  }

  auto [query_loss, g] = loss_and_grad(trajectory.back(), query);
  if (cfg.mode == MetaGradMode::Exact) {
    // d theta_{j+1} / d theta_j = I - alpha * H_support(theta_j); apply the
    // transposed (symmetric) Jacobians from the last step back to phi.
    for (std::size_t j = cfg.inner_steps; j-- > 0;) {
      g.add_scaled(hvp(trajectory[j], support, g), -cfg.inner_lr);
    }
  }
  return {std::move(g), query_loss};
}

ParamVector meta_gradient(const ParamVector& phi, const Batch& support, const Batch& query,
                          const MetaConfig& cfg) {
  return meta_gradient_and_loss(phi, support, query, cfg).gradient;
}

MetaLearner train_meta(const ParamVector& init, const TaskSampler& sampler, const MetaConfig& cfg) {
  cfg.validate();
  MetaLearner learner{init, cfg, {}, std::nullopt};
  learner.history.reserve(cfg.meta_iterations);
  AdamState adam = AdamState::for_params(init, cfg.meta_adam());

  for (std::size_t it = 0; it < cfg.meta_iterations; ++it) {
    const std::vector<MetaTask> tasks = sampler(it);
    if (tasks.empty()) throw ConfigError(fmt::format("meta-iteration {} produced no tasks", it));
    ParamVector total(init.spec());
    double loss_sum = 0.0;
    for (const auto& task : tasks) {
      const auto mg = meta_gradient_and_loss(learner.phi, task.support, task.query, cfg);
      total += mg.gradient;
      loss_sum += mg.query_loss;
    }
    adam_update(adam, learner.phi, total);
    learner.history.push_back({it, loss_sum / static_cast<double>(tasks.size())});
  }
  return learner;
}

std::vector<std::size_t> eligible_sources(std::span<const SiteDataset> sources, const MetaConfig& cfg) {
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].size() >= cfg.support_hours + cfg.query_hours) {
      ok.push_back(i);
    } else {
      spdlog::warn("source {} has {} records, fewer than support+query ({}); skipped",
                   sources[i].site_id, sources[i].size(), cfg.support_hours + cfg.query_hours);
    }
  }
  return ok;
}

MetaLearner train_meta(std::span<const SiteDataset> sources, const MlpSpec& spec, const MetaConfig& cfg) {
  cfg.validate();
  if (sources.empty()) throw ConfigError("meta-training needs at least one source site");
  const std::vector<std::size_t> usable = eligible_sources(sources, cfg);
  if (usable.empty()) throw ConfigError("no source site has enough data for a support/query pair");
  if (cfg.meta_batch_size > usable.size()) {
    throw ConfigError(fmt::format("meta_batch_size {} exceeds the {} usable source sites",
                                  cfg.meta_batch_size, usable.size()));
  }

  std::optional<NormStats> pooled_stats;
  if (cfg.norm_scope == NormScope::SourcePool) {
    std::vector<CalibrationRecord> pooled;
    for (auto i : usable) pooled.insert(pooled.end(), sources[i].records.begin(), sources[i].records.end());
    pooled_stats = fit_norm(pooled);
  }

  TaskSampler sampler = [&](std::size_t it) {
    // Partial Fisher-Yates: the first meta_batch_size entries are a uniform
    // sample without replacement.
    Rng rng(mix_seed(cfg.seed, it, 0x5173));
    std::vector<std::size_t> order = usable;
    for (std::size_t k = 0; k < cfg.meta_batch_size; ++k) {
      std::swap(order[k], order[k + rng.uniform_index(order.size() - k)]);
    }
    std::sort(order.begin(), order.begin() + std::ptrdiff_t(cfg.meta_batch_size));
    std::vector<MetaTask> tasks;
    tasks.reserve(cfg.meta_batch_size);
    for (std::size_t k = 0; k < cfg.meta_batch_size; ++k) {
      const SiteDataset& site = sources[order[k]];
      const TaskSplit split = sample_support_query(site, cfg.support_hours, cfg.query_hours,
                                                   mix_seed(cfg.seed, it, order[k] + 1));
      const auto support = slice(site, split.support());
      const NormStats stats = pooled_stats ? *pooled_stats : fit_norm(support);
      tasks.push_back({apply_norm(support, stats), apply_norm(slice(site, split.query()), stats)});
    }
    return tasks;
  };

  MetaLearner learner = train_meta(init_params(spec, cfg.seed), sampler, cfg);
  learner.stats = pooled_stats;
  return learner;
}

EarlyStoppingResult deploy_target_traced(const MetaLearner& learner, const Batch& target_train,
                                         const Batch& target_val, const MetaConfig& cfg) {
  if (target_train.empty()) throw InvalidArgument("target training set is empty");
  const SgdConfig sgd{cfg.inner_lr};
  return train_with_early_stopping(learner.phi, target_train, target_val, cfg.deploy,
                                   [&](ParamVector& p) { p = sgd_step(p, grad(p, target_train), sgd); });
}

ParamVector deploy_target(const MetaLearner& learner, const Batch& target_train,
                          const Batch& target_val, const MetaConfig& cfg) {
  return deploy_target_traced(learner, target_train, target_val, cfg).best;
}

void write_history_csv(const std::filesystem::path& path, std::span<const MetaHistoryEntry> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "iteration,mean_query_loss\n";
  for (const auto& h : history) out << fmt::format("{},{:.10g}\n", h.iteration, h.mean_query_loss);
}

}  // namespace metacal

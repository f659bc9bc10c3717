#include "metacal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "metacal/checkpoint.hpp"
#include "metacal/error.hpp"
#include "metacal/parallel.hpp"
#include "metacal/random.hpp"

namespace metacal {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view section) {
  if (!obj.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", section));
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("unknown config key '{}' in '{}'", key, section));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

std::string_view grad_mode_name(MetaGradMode m) {
  return m == MetaGradMode::Exact ? "exact" : "first_order";
}

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  return fmt::format("{:.4f}", v);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", p.string()));
  return out;
}

json report_json(const EvalReport& r) {
  return {{"site_id", r.site_id}, {"method", method_name(r.method)}, {"mae", r.mae},
          {"mae_std", r.mae_std}, {"rmse", r.rmse},                  {"r2", r.r2},
          {"n_samples", r.n_samples}};
}

// Target windows shared by every method of a comparison.
struct TargetWindows {
  const SiteDataset* site;
  TaskSplit split;
  std::span<const CalibrationRecord> train, val, test;
};

struct MethodBatches {
  Batch train, val, test;
};

MethodBatches batches_for(const TargetWindows& w, const NormStats& stats) {
  return {apply_norm(w.train, stats), apply_norm(w.val, stats), apply_norm(w.test, stats)};
}

std::size_t b2_source_index(const ExperimentConfig& cfg, const ExperimentData& data) {
  if (cfg.b2_source.empty()) return 0;
  for (std::size_t i = 0; i < data.sources.size(); ++i) {
    if (data.sources[i].site_id == cfg.b2_source) return i;
  }
  throw ConfigError(fmt::format("b2_source '{}' is not a source in the manifest", cfg.b2_source));
}

}  // namespace

bool ExperimentConfig::uses(Method m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("at least one method is required");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (model.input_dim != kFeatureCount || model.output_dim != 1) {
    throw ConfigError(fmt::format("calibration model must map {} features to 1 output", kFeatureCount));
  }
  meta.validate();
  finetune.validate();
  if (split.trainval_hours == 0 || split.test_hours == 0) throw ConfigError("target windows must be non-empty");
  if (!(split.val_fraction >= 0.0 && split.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (split.support_hours == 0 || split.query_hours == 0) throw ConfigError("source windows must be non-empty");
}

ExperimentConfig experiment_config_from_json(std::string_view text, const fs::path& base_dir) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(text);
    check_keys(j, {"manifest", "output_dir", "methods", "seeds", "model", "meta", "finetune", "split",
                   "threads", "normalization"},
               "root");
    auto resolve = [&](const std::string& p) {
      fs::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    if (j.contains("manifest")) cfg.manifest = resolve(j["manifest"].get<std::string>());
    if (j.contains("output_dir")) cfg.output_dir = resolve(j["output_dir"].get<std::string>());
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j["methods"]) {
        const auto parsed = parse_method(m.get<std::string>());
        if (!parsed) throw ConfigError(fmt::format("unknown method '{}'", m.get<std::string>()));
        if (!cfg.uses(*parsed)) cfg.methods.push_back(*parsed);
      }
    }
    read(j, "seeds", cfg.seeds);
    read(j, "threads", cfg.threads);
    if (j.contains("normalization")) {
      const auto scope = j["normalization"].get<std::string>();
      if (scope == "per_site") {
        cfg.meta.norm_scope = NormScope::PerSite;
      } else if (scope == "source_pool") {
        cfg.meta.norm_scope = NormScope::SourcePool;
      } else {
        throw ConfigError(fmt::format("normalization must be 'per_site' or 'source_pool', got '{}'", scope));
      }
    }

    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, {"input_dim", "hidden_widths", "output_dim"}, "model");
      read(m, "input_dim", cfg.model.input_dim);
      read(m, "hidden_widths", cfg.model.hidden_widths);
      read(m, "output_dim", cfg.model.output_dim);
    }
    if (j.contains("meta")) {
      const auto& m = j["meta"];
      check_keys(m, {"inner_steps", "inner_lr", "meta_lr", "meta_batch_size", "meta_iterations",
                     "meta_grad_mode", "seed", "adam_beta1", "adam_beta2", "adam_epsilon",
                     "deploy_patience", "deploy_step_cap"},
                 "meta");
      read(m, "inner_steps", cfg.meta.inner_steps);
      read(m, "inner_lr", cfg.meta.inner_lr);
      read(m, "meta_lr", cfg.meta.meta_lr);
      read(m, "meta_batch_size", cfg.meta.meta_batch_size);
      read(m, "meta_iterations", cfg.meta.meta_iterations);
      read(m, "seed", cfg.meta.seed);
      read(m, "adam_beta1", cfg.meta.adam_beta1);
      read(m, "adam_beta2", cfg.meta.adam_beta2);
      read(m, "adam_epsilon", cfg.meta.adam_epsilon);
      read(m, "deploy_patience", cfg.meta.deploy.patience);
      read(m, "deploy_step_cap", cfg.meta.deploy.step_cap);
      if (m.contains("meta_grad_mode")) {
        const auto mode = m["meta_grad_mode"].get<std::string>();
        if (mode == "first_order") {
          cfg.meta.mode = MetaGradMode::FirstOrder;
        } else if (mode == "exact") {
          cfg.meta.mode = MetaGradMode::Exact;
        } else {
          throw ConfigError(fmt::format("meta_grad_mode must be 'first_order' or 'exact', got '{}'", mode));
        }
      }
    }
    if (j.contains("finetune")) {
      const auto& f = j["finetune"];
      check_keys(f, {"pretrain_epochs", "patience", "step_cap", "learning_rate", "beta1", "beta2", "epsilon",
                     "b2_source", "b2_all_sources"},
                 "finetune");
      read(f, "pretrain_epochs", cfg.finetune.pretrain_epochs);
      read(f, "patience", cfg.finetune.finetune_patience);
      read(f, "step_cap", cfg.finetune.finetune_step_cap);
      read(f, "learning_rate", cfg.finetune.adam.learning_rate);
      read(f, "beta1", cfg.finetune.adam.beta1);
      read(f, "beta2", cfg.finetune.adam.beta2);
      read(f, "epsilon", cfg.finetune.adam.epsilon);
      read(f, "b2_source", cfg.b2_source);
      read(f, "b2_all_sources", cfg.b2_all_sources);
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      check_keys(s, {"support_hours", "query_hours", "trainval_hours", "test_hours", "val_fraction"}, "split");
      read(s, "support_hours", cfg.split.support_hours);
      read(s, "query_hours", cfg.split.query_hours);
      read(s, "trainval_hours", cfg.split.trainval_hours);
      read(s, "test_hours", cfg.split.test_hours);
      read(s, "val_fraction", cfg.split.val_fraction);
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("malformed experiment config: {}", e.what()));
  }
  cfg.meta.support_hours = cfg.split.support_hours;
  cfg.meta.query_hours = cfg.split.query_hours;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_config_from_json(ss.str(), path.parent_path());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(method_name(m));
  const json j = {
      {"manifest", cfg.manifest.generic_string()},
      {"output_dir", cfg.output_dir.generic_string()},
      {"methods", methods},
      {"seeds", cfg.seeds},
      {"threads", cfg.threads},
      {"normalization", cfg.meta.norm_scope == NormScope::PerSite ? "per_site" : "source_pool"},
      {"model",
       {{"input_dim", cfg.model.input_dim},
        {"hidden_widths", cfg.model.hidden_widths},
        {"output_dim", cfg.model.output_dim}}},
      {"meta",
       {{"inner_steps", cfg.meta.inner_steps},
        {"inner_lr", cfg.meta.inner_lr},
        {"meta_lr", cfg.meta.meta_lr},
        {"meta_batch_size", cfg.meta.meta_batch_size},
        {"meta_iterations", cfg.meta.meta_iterations},
        {"meta_grad_mode", grad_mode_name(cfg.meta.mode)},
        {"seed", cfg.meta.seed},
        {"adam_beta1", cfg.meta.adam_beta1},
        {"adam_beta2", cfg.meta.adam_beta2},
        {"adam_epsilon", cfg.meta.adam_epsilon},
        {"deploy_patience", cfg.meta.deploy.patience},
        {"deploy_step_cap", cfg.meta.deploy.step_cap}}},
      {"finetune",
       {{"pretrain_epochs", cfg.finetune.pretrain_epochs},
        {"patience", cfg.finetune.finetune_patience},
        {"step_cap", cfg.finetune.finetune_step_cap},
        {"learning_rate", cfg.finetune.adam.learning_rate},
        {"beta1", cfg.finetune.adam.beta1},
        {"beta2", cfg.finetune.adam.beta2},
        {"epsilon", cfg.finetune.adam.epsilon},
        {"b2_source", cfg.b2_source},
        {"b2_all_sources", cfg.b2_all_sources}}},
      {"split",
       {{"support_hours", cfg.split.support_hours},
        {"query_hours", cfg.split.query_hours},
        {"trainval_hours", cfg.split.trainval_hours},
        {"test_hours", cfg.split.test_hours},
        {"val_fraction", cfg.split.val_fraction}}},
  };
  return j.dump(2);
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("config names no manifest");
  ExperimentData d;
  d.manifest = load_manifest(cfg.manifest);
  for (const auto& e : d.manifest.sites) {
    auto loaded = load_site_csv(d.manifest.resolve(e), e.site_id);
    (e.role == SiteRole::Source ? d.sources : d.targets).push_back(std::move(loaded.site));
  }
  return d;
}

std::vector<CalibrationRecord> source_pretrain_records(const SiteDataset& source, std::size_t source_index,
                                                       const SplitConfig& split, std::uint64_t seed) {
  const TaskSplit w = sample_support_query(source, split.support_hours, split.query_hours,
                                           mix_seed(seed, source_index, 0xba5e));
  std::vector<CalibrationRecord> out;
  const auto s = slice(source, w.support());
  const auto q = slice(source, w.query());
  out.reserve(s.size() + q.size());
  out.insert(out.end(), s.begin(), s.end());
  out.insert(out.end(), q.begin(), q.end());
  return out;
}

std::size_t CompareResult::failed_runs() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return !r.ok; }));
}

CompareResult run_compare(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  if (data.targets.empty()) throw ConfigError("manifest has no target sites");
  const bool needs_sources = cfg.uses(Method::B2) || cfg.uses(Method::B3) || cfg.uses(Method::MAML);
  if (needs_sources && data.sources.empty()) throw ConfigError("selected methods need source sites");

  CompareResult result;
  for (Method m : {Method::B1, Method::B2, Method::B3, Method::MAML}) {
    if (cfg.uses(m)) result.methods.push_back(m);
  }
  result.methods.push_back(Method::RAW);

  std::vector<TargetWindows> windows;
  for (const auto& t : data.targets) {
    const TaskSplit split =
        split_target(t, cfg.split.trainval_hours, cfg.split.test_hours, cfg.split.val_fraction);
    windows.push_back({&t, split, slice(t, split.train()), slice(t, split.val()), slice(t, split.test)});
    result.target_ids.push_back(t.site_id);
  }

  const std::size_t n_targets = windows.size();
  const std::size_t n_methods = result.methods.size();
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_sources = data.sources.size();
  auto method_index = [&](Method m) {
    return std::size_t(std::find(result.methods.begin(), result.methods.end(), m) - result.methods.begin());
  };
  auto run_slot = [&](std::size_t t, Method m, std::size_t s) -> RunRecord& {
    return result.runs[(t * n_methods + method_index(m)) * n_seeds + s];
  };

  result.runs.resize(n_targets * n_methods * n_seeds);
  for (std::size_t t = 0; t < n_targets; ++t) {
    for (Method m : result.methods) {
      for (std::size_t s = 0; s < n_seeds; ++s) {
        auto& r = run_slot(t, m, s);
        r.seed = cfg.seeds[s];
        r.report.site_id = result.target_ids[t];
        r.report.method = m;
      }
    }
  }
  const bool all_b2 = cfg.uses(Method::B2) && cfg.b2_all_sources;
  if (all_b2) {
    result.b2_sources.resize(n_targets * n_sources * n_seeds);
    for (std::size_t t = 0; t < n_targets; ++t) {
      for (std::size_t j = 0; j < n_sources; ++j) {
        for (std::size_t s = 0; s < n_seeds; ++s) {
          auto& r = result.b2_sources[(t * n_sources + j) * n_seeds + s];
          r.source_id = data.sources[j].site_id;
          r.seed = cfg.seeds[s];
          r.report.site_id = result.target_ids[t];
          r.report.method = Method::B2;
        }
      }
    }
  }
  const std::size_t b2_index = cfg.uses(Method::B2) ? b2_source_index(cfg, data) : 0;

  auto mark_failed = [](auto& record, const std::string& what) {
    record.ok = false;
    record.status = "failed: " + what;
  };

  std::vector<std::function<void()>> jobs;

  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = cfg.seeds[s];

    if (cfg.uses(Method::MAML)) {
      jobs.emplace_back([&, s, seed] {
        try {
          MetaConfig mc = cfg.meta;
          mc.seed = seed;
          const MetaLearner learner = train_meta(data.sources, cfg.model, mc);
          for (std::size_t t = 0; t < n_targets; ++t) {
            auto& slot = run_slot(t, Method::MAML, s);
            try {
              const NormStats stats = learner.stats ? *learner.stats : fit_norm(windows[t].train);
              const auto b = batches_for(windows[t], stats);
              const ParamVector adapted = deploy_target(learner, b.train, b.val, mc);
              slot.report = evaluate(adapted, b.test, stats, result.target_ids[t], Method::MAML);
              slot.stats = stats;
            } catch (const Error& e) {
              mark_failed(slot, e.what());
            }
          }
        } catch (const Error& e) {
          for (std::size_t t = 0; t < n_targets; ++t) mark_failed(run_slot(t, Method::MAML, s), e.what());
        }
      });
    }

    // Pretrain once on the per-source record groups, then fine-tune on every target.
    auto pretrain_job = [&, seed](std::vector<std::vector<CalibrationRecord>> groups,
                                  std::function<void(std::size_t, EvalReport, const NormStats&)> store,
                                  std::function<void(std::size_t, const std::string&)> fail, Method method) {
      try {
        const bool per_site = cfg.meta.norm_scope == NormScope::PerSite;
        std::optional<NormStats> pooled_stats;
        std::vector<Batch> parts;
        if (per_site) {
          for (const auto& g : groups) parts.push_back(apply_norm(g, fit_norm(g)));
        } else {
          std::vector<CalibrationRecord> pooled;
          for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
          pooled_stats = fit_norm(pooled);
          parts.push_back(apply_norm(pooled, *pooled_stats));
        }
        const ParamVector pre = pretrain(cfg.model, concatenate(parts), cfg.finetune, seed);
        for (std::size_t t = 0; t < n_targets; ++t) {
          try {
            const NormStats stats = pooled_stats ? *pooled_stats : fit_norm(windows[t].train);
            const auto b = batches_for(windows[t], stats);
            const ParamVector tuned = finetune(pre, b.train, b.val, cfg.finetune);
            store(t, evaluate(tuned, b.test, stats, result.target_ids[t], method), stats);
          } catch (const Error& e) {
            fail(t, e.what());
          }
        }
      } catch (const Error& e) {
        for (std::size_t t = 0; t < n_targets; ++t) fail(t, e.what());
      }
    };

    if (cfg.uses(Method::B3)) {
      jobs.emplace_back([&, s, seed, pretrain_job] {
        std::vector<std::vector<CalibrationRecord>> pooled;
        try {
          for (std::size_t j = 0; j < n_sources; ++j) {
            pooled.push_back(source_pretrain_records(data.sources[j], j, cfg.split, seed));
          }
        } catch (const Error& e) {
          for (std::size_t t = 0; t < n_targets; ++t) mark_failed(run_slot(t, Method::B3, s), e.what());
          return;
        }
        pretrain_job(
            std::move(pooled), [&, s](std::size_t t, EvalReport r, const NormStats& st) {
              auto& slot = run_slot(t, Method::B3, s);
              slot.report = std::move(r);
              slot.stats = st;
            },
            [&, s](std::size_t t, const std::string& w) { mark_failed(run_slot(t, Method::B3, s), w); }, Method::B3);
      });
    }

    if (cfg.uses(Method::B2)) {
      const std::size_t first = all_b2 ? 0 : b2_index;
      const std::size_t last = all_b2 ? n_sources : b2_index + 1;
      for (std::size_t j = first; j < last; ++j) {
        jobs.emplace_back([&, s, seed, j, pretrain_job] {
          auto store = [&, s, j](std::size_t t, EvalReport r, const NormStats& st) {
            if (all_b2) result.b2_sources[(t * n_sources + j) * n_seeds + s].report = r;
            if (j == b2_index) {
              auto& slot = run_slot(t, Method::B2, s);
              slot.report = std::move(r);
              slot.stats = st;
            }
          };
          auto fail = [&, s, j](std::size_t t, const std::string& w) {
            if (all_b2) mark_failed(result.b2_sources[(t * n_sources + j) * n_seeds + s], w);
            if (j == b2_index) mark_failed(run_slot(t, Method::B2, s), w);
          };
          std::vector<std::vector<CalibrationRecord>> records;
          try {
            records.push_back(source_pretrain_records(data.sources[j], j, cfg.split, seed));
          } catch (const Error& e) {
            for (std::size_t t = 0; t < n_targets; ++t) fail(t, e.what());
            return;
          }
          pretrain_job(std::move(records), store, fail, Method::B2);
        });
      }
    }

    if (cfg.uses(Method::B1)) {
      for (std::size_t t = 0; t < n_targets; ++t) {
        jobs.emplace_back([&, s, seed, t] {
          auto& slot = run_slot(t, Method::B1, s);
          try {
            const NormStats stats = fit_norm(windows[t].train);
            const auto b = batches_for(windows[t], stats);
            const ParamVector p = train_b1(cfg.model, b.train, b.val, cfg.finetune, seed);
            slot.report = evaluate(p, b.test, stats, result.target_ids[t], Method::B1);
            slot.stats = stats;
          } catch (const Error& e) {
            mark_failed(slot, e.what());
          }
        });
      }
    }
  }

  for (std::size_t t = 0; t < n_targets; ++t) {
    try {
      const EvalReport raw = evaluate_raw(windows[t].test, result.target_ids[t]);
      for (std::size_t s = 0; s < n_seeds; ++s) run_slot(t, Method::RAW, s).report = raw;
    } catch (const Error& e) {
      for (std::size_t s = 0; s < n_seeds; ++s) mark_failed(run_slot(t, Method::RAW, s), e.what());
    }
  }

  const std::size_t threads = resolve_thread_count(cfg.threads);
  spdlog::info("compare: {} training jobs on {} thread(s)", jobs.size(), threads);
  parallel_for(jobs.size(), threads, [&](std::size_t i) { jobs[i](); });
  return result;
}

std::vector<MethodSummary> summarize(const CompareResult& result) {
  std::vector<MethodSummary> out;
  for (Method m : result.methods) {
    MethodSummary s{m, 0.0, 0.0, 0.0, 0.0, 0};
    for (const auto& r : result.runs) {
      if (r.report.method != m || !r.ok) continue;
      s.mean_mae += r.report.mae;
      s.mean_mae_std += r.report.mae_std;
      s.mean_rmse += r.report.rmse;
      s.mean_r2 += r.report.r2;
      ++s.runs;
    }
    const double n = s.runs ? double(s.runs) : std::nan("");
    s.mean_mae /= n;
    s.mean_mae_std /= n;
    s.mean_rmse /= n;
    s.mean_r2 /= n;
    out.push_back(s);
  }
  return out;
}

const MethodSummary* find_summary(const std::vector<MethodSummary>& s, Method m) {
  for (const auto& x : s) {
    if (x.method == m) return &x;
  }
  return nullptr;
}

namespace {

struct SeedMean {
  double mae = 0, mae_std = 0, rmse = 0, r2 = 0;
  std::size_t n = 0;
};

// Mean over successful seeds of every (target, method) cell.
std::vector<std::vector<SeedMean>> cell_means(const CompareResult& result) {
  std::vector<std::vector<SeedMean>> cells(result.target_ids.size(),
                                           std::vector<SeedMean>(result.methods.size()));
  for (const auto& r : result.runs) {
    if (!r.ok) continue;
    const auto t = std::size_t(std::find(result.target_ids.begin(), result.target_ids.end(), r.report.site_id) -
                               result.target_ids.begin());
    const auto m = std::size_t(std::find(result.methods.begin(), result.methods.end(), r.report.method) -
                               result.methods.begin());
    auto& c = cells[t][m];
    c.mae += r.report.mae;
    c.mae_std += r.report.mae_std;
    c.rmse += r.report.rmse;
    c.r2 += r.report.r2;
    ++c.n;
  }
  for (auto& row : cells) {
    for (auto& c : row) {
      const double n = c.n ? double(c.n) : std::nan("");
      c.mae /= n;
      c.mae_std /= n;
      c.rmse /= n;
      c.r2 /= n;
    }
  }
  return cells;
}

SeedMean column_mean(const std::vector<std::vector<SeedMean>>& cells, std::size_t m) {
  SeedMean out;
  for (const auto& row : cells) {
    if (row[m].n == 0) continue;
    out.mae += row[m].mae;
    out.mae_std += row[m].mae_std;
    out.rmse += row[m].rmse;
    out.r2 += row[m].r2;
    ++out.n;
  }
  const double n = out.n ? double(out.n) : std::nan("");
  out.mae /= n;
  out.mae_std /= n;
  out.rmse /= n;
  out.r2 /= n;
  return out;
}

}  // namespace

void write_compare_outputs(const CompareResult& result, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto cells = cell_means(result);

  {
    auto out = open_out(out_dir / "compare_table.csv");
    out << "site_id";
    for (std::string_view metric : {"MAE", "MAE_STD", "RMSE", "R2"}) {
      for (Method m : result.methods) out << ',' << metric << '_' << method_name(m);
    }
    out << '\n';
    auto row = [&](std::string_view id, auto get) {
      out << id;
      for (int metric = 0; metric < 4; ++metric) {
        for (std::size_t m = 0; m < result.methods.size(); ++m) {
          const SeedMean c = get(m);
          const double v = metric == 0 ? c.mae : metric == 1 ? c.mae_std : metric == 2 ? c.rmse : c.r2;
          out << ',' << num(v);
        }
      }
      out << '\n';
    };
    for (std::size_t t = 0; t < result.target_ids.size(); ++t) {
      row(result.target_ids[t], [&](std::size_t m) { return cells[t][m]; });
    }
    row("mean", [&](std::size_t m) { return column_mean(cells, m); });
  }

  {
    auto out = open_out(out_dir / "compare_runs.csv");
    out << "site_id,method,seed,mae,mae_std,rmse,r2,n_samples,status\n";
    for (const auto& r : result.runs) {
      out << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.report.site_id, method_name(r.report.method), r.seed,
                         num(r.report.mae), num(r.report.mae_std), num(r.report.rmse), num(r.report.r2),
                         r.ok ? r.report.n_samples : 0, r.status);
    }
  }

  if (!result.b2_sources.empty()) {
    auto out = open_out(out_dir / "b2_sources.csv");
    out << "site_id,source_id,seed,mae,mae_std,rmse,r2,status\n";
    for (const auto& r : result.b2_sources) {
      out << fmt::format("{},{},{},{},{},{},{},{}\n", r.report.site_id, r.source_id, r.seed, num(r.report.mae),
                         num(r.report.mae_std), num(r.report.rmse), num(r.report.r2), r.status);
    }
  }

  {
    json runs = json::array();
    for (const auto& r : result.runs) {
      json j = report_json(r.report);
      j["seed"] = r.seed;
      j["status"] = r.status;
      if (r.stats) j["norm_stats"] = json::parse(norm_stats_to_json(*r.stats));
      runs.push_back(std::move(j));
    }
    auto out = open_out(out_dir / "compare_reports.json");
    out << json{{"runs", runs}}.dump(2) << '\n';
  }

  auto out = open_out(out_dir / "compare_table.txt");
  out << format_display_table(result);
}

std::string format_display_table(const CompareResult& result) {
  const auto cells = cell_means(result);
  std::string s;
  auto header = [&](std::string_view title) {
    s += fmt::format("{:<12}", title);
    for (Method m : result.methods) s += fmt::format("{:>18}", method_name(m));
    s += '\n';
  };
  auto body = [&](auto cell_text) {
    for (std::size_t t = 0; t < result.target_ids.size(); ++t) {
      s += fmt::format("{:<12}", result.target_ids[t]);
      for (std::size_t m = 0; m < result.methods.size(); ++m) s += fmt::format("{:>18}", cell_text(cells[t][m]));
      s += '\n';
    }
    s += fmt::format("{:<12}", "mean");
    for (std::size_t m = 0; m < result.methods.size(); ++m) s += fmt::format("{:>18}", cell_text(column_mean(cells, m)));
    s += "\n\n";
  };
  header("MAE (std)");
  body([](const SeedMean& c) { return fmt::format("{:.1f} ({:.1f})", c.mae, c.mae_std); });
  header("RMSE");
  body([](const SeedMean& c) { return fmt::format("{:.1f}", c.rmse); });
  header("R2 x100");
  body([](const SeedMean& c) { return fmt::format("{:.1f}", 100.0 * c.r2); });
  return s;
}

fs::path norm_sidecar_path(const fs::path& checkpoint) {
  return fs::path(checkpoint.string() + ".norm.json");
}

TrainMetaOutputs run_train_meta(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  ensure_dir(cfg.output_dir);
  const MetaLearner learner = train_meta(data.sources, cfg.model, cfg.meta);
  TrainMetaOutputs out{cfg.output_dir / "meta_phi.ckpt", {}, cfg.output_dir / "meta_history.csv"};
  out.norm_stats = norm_sidecar_path(out.checkpoint);
  save_checkpoint(out.checkpoint, learner.phi);
  if (learner.stats) {
    save_norm_stats(out.norm_stats, *learner.stats);
  } else {
    out.norm_stats.clear();
  }
  write_history_csv(out.history, learner.history);
  return out;
}

namespace {

const SiteDataset& find_target(const ExperimentData& data, std::string_view id) {
  for (const auto& t : data.targets) {
    if (t.site_id == id) return t;
  }
  throw DataError(fmt::format("target site '{}' is not in the manifest", id));
}

// A checkpoint's sidecar wins; without one the target's own train window is used.
NormStats checkpoint_stats(const fs::path& checkpoint, const SiteDataset& target, const TaskSplit& split) {
  const fs::path sidecar = norm_sidecar_path(checkpoint);
  if (fs::exists(sidecar)) return load_norm_stats(sidecar);
  return fit_norm(slice(target, split.train()));
}

}  // namespace

AdaptOutputs run_adapt(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& checkpoint,
                       std::string_view target_id) {
  ensure_dir(cfg.output_dir);
  const SiteDataset& target = find_target(data, target_id);
  const TaskSplit split = split_target(target, cfg.split.trainval_hours, cfg.split.test_hours, cfg.split.val_fraction);
  const NormStats stats = checkpoint_stats(checkpoint, target, split);
  const MetaLearner learner{load_checkpoint(checkpoint), cfg.meta, {}, stats};
  const Batch train = apply_norm(slice(target, split.train()), stats);
  const Batch val = apply_norm(slice(target, split.val()), stats);
  const Batch test = apply_norm(slice(target, split.test), stats);
  const ParamVector adapted = deploy_target(learner, train, val, cfg.meta);

  AdaptOutputs out;
  out.checkpoint = cfg.output_dir / fmt::format("adapted_{}.ckpt", target.site_id);
  out.report = cfg.output_dir / fmt::format("report_{}.json", target.site_id);
  out.eval = evaluate(adapted, test, stats, target.site_id, Method::MAML);
  save_checkpoint(out.checkpoint, adapted);
  save_norm_stats(norm_sidecar_path(out.checkpoint), stats);
  auto f = open_out(out.report);
  f << report_to_json(out.eval) << '\n';
  return out;
}

void run_export_series(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& checkpoint,
                       std::string_view target_id, const fs::path& out_csv, bool adapt) {
  const SiteDataset& target = find_target(data, target_id);
  const TaskSplit split = split_target(target, cfg.split.trainval_hours, cfg.split.test_hours, cfg.split.val_fraction);
  const NormStats stats = checkpoint_stats(checkpoint, target, split);
  const MetaLearner learner{load_checkpoint(checkpoint), cfg.meta, {}, stats};
  ParamVector model = learner.phi;
  if (adapt) {
    model = deploy_target(learner, apply_norm(slice(target, split.train()), stats),
                          apply_norm(slice(target, split.val()), stats), cfg.meta);
  }
  const auto test = slice(target, split.test);
  const Eigen::VectorXd calibrated = calibrate(model, test, stats);
  if (out_csv.has_parent_path()) ensure_dir(out_csv.parent_path());
  auto out = open_out(out_csv);
  out << "timestamp,raw,reference,calibrated\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& r = test[i];
    out << fmt::format("{},{:.4f},{},{:.4f}\n", format_rfc3339(r.timestamp), r.pm25_raw,
                       r.pm25_ref ? fmt::format("{:.4f}", *r.pm25_ref) : std::string(), calibrated(Eigen::Index(i)));
  }
}

std::string report_to_json(const EvalReport& r) { return report_json(r).dump(2); }

}  // namespace metacal

// metacal: few-shot calibration of low-cost PM2.5 sensors.
//
//   metacal synth         --out DIR [--sources N --targets M --hours H --seed S]
//   metacal train-meta    --config FILE
//   metacal adapt         --config FILE --checkpoint FILE --target SITE
//   metacal compare       --config FILE
//   metacal export-series --config FILE --checkpoint FILE --target SITE --out CSV
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "metacal/error.hpp"
#include "metacal/experiment.hpp"
#include "metacal/synthgen.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTraining = 3;

struct Overrides {
  std::string config;
  std::string manifest;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  std::optional<std::size_t> meta_iterations;
  std::optional<std::size_t> threads;

  void attach(CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config, "Experiment config JSON");
    if (needs_config) c->required();
    cmd->add_option("--manifest", manifest, "Override the manifest path");
    cmd->add_option("--output-dir", out, "Override the output directory");
    cmd->add_option("--seeds", seeds, "Override the seed list");
    cmd->add_option("--methods", methods, "Override the method set (B1 B2 B3 MAML RAW)");
    cmd->add_option("--meta-iterations", meta_iterations, "Override meta.meta_iterations");
    cmd->add_option("--threads", threads, "Worker threads (default METACAL_THREADS or all cores)");
  }

  metacal::ExperimentConfig load() const {
    metacal::ExperimentConfig cfg = config.empty() ? metacal::ExperimentConfig{}
                                                   : metacal::load_experiment_config(config);
    if (!manifest.empty()) cfg.manifest = manifest;
    if (!out.empty()) cfg.output_dir = out;
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : methods) {
        const auto parsed = metacal::parse_method(m);
        if (!parsed) throw metacal::ConfigError("unknown method '" + m + "'");
        if (!cfg.uses(*parsed)) cfg.methods.push_back(*parsed);
      }
    }
    if (meta_iterations) cfg.meta.meta_iterations = *meta_iterations;
    if (threads) cfg.threads = *threads;
    cfg.validate();
    return cfg;
  }
};

void print_report(const metacal::EvalReport& r) {
  std::cout << r.site_id << ' ' << metacal::method_name(r.method) << ": MAE " << r.mae << " (std " << r.mae_std
            << "), RMSE " << r.rmse << ", R2 " << r.r2 << ", n=" << r.n_samples << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("metacal"));

  CLI::App app{"Few-shot calibration of low-cost PM2.5 sensors with meta-learning"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-site benchmark");
  std::string synth_out;
  std::size_t n_sources = 10, n_targets = 5, hours = 3000;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--sources", n_sources, "Number of source sites");
  synth->add_option("--targets", n_targets, "Number of target sites");
  synth->add_option("--hours", hours, "Hourly records per site");
  synth->add_option("--seed", synth_seed, "Generator seed");

  Overrides train_o, adapt_o, compare_o, export_o;
  auto* train = app.add_subcommand("train-meta", "Meta-train the shared initialization on source sites");
  train_o.attach(train, true);

  auto* adapt = app.add_subcommand("adapt", "Adapt a meta checkpoint to one target site");
  adapt_o.attach(adapt, true);
  std::string adapt_ckpt, adapt_target;
  adapt->add_option("--checkpoint", adapt_ckpt, "Meta checkpoint")->required();
  adapt->add_option("--target", adapt_target, "Target site id")->required();

  auto* compare = app.add_subcommand("compare", "Run every method on every target and tabulate");
  compare_o.attach(compare, true);

  auto* exporter = app.add_subcommand("export-series", "Write raw/reference/calibrated series of a target");
  export_o.attach(exporter, true);
  std::string export_ckpt, export_target, export_csv;
  bool no_adapt = false;
  exporter->add_option("--checkpoint", export_ckpt, "Meta or adapted checkpoint")->required();
  exporter->add_option("--target", export_target, "Target site id")->required();
  exporter->add_option("--out", export_csv, "Output CSV")->required();
  exporter->add_flag("--no-adapt", no_adapt, "Use the checkpoint as-is (already adapted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      const auto b = metacal::gen_benchmark(synth_out, n_sources, n_targets, hours, synth_seed);
      std::cout << b.manifest_path.string() << '\n';
    } else if (train->parsed()) {
      const auto cfg = train_o.load();
      const auto data = metacal::load_experiment_data(cfg);
      const auto out = metacal::run_train_meta(cfg, data);
      std::cout << out.checkpoint.string() << '\n' << out.history.string() << '\n';
    } else if (adapt->parsed()) {
      const auto cfg = adapt_o.load();
      const auto data = metacal::load_experiment_data(cfg);
      const auto out = metacal::run_adapt(cfg, data, adapt_ckpt, adapt_target);
      print_report(out.eval);
      std::cout << out.checkpoint.string() << '\n' << out.report.string() << '\n';
    } else if (compare->parsed()) {
      const auto cfg = compare_o.load();
      const auto data = metacal::load_experiment_data(cfg);
      const auto result = metacal::run_compare(cfg, data);
      metacal::write_compare_outputs(result, cfg.output_dir);
      std::cout << metacal::format_display_table(result);
      if (result.failed_runs() > 0) {
        spdlog::warn("{} of {} runs failed; see compare_runs.csv", result.failed_runs(), result.runs.size());
      }
      if (result.failed_runs() == result.runs.size()) return kExitTraining;
    } else if (exporter->parsed()) {
      const auto cfg = export_o.load();
      const auto data = metacal::load_experiment_data(cfg);
      metacal::run_export_series(cfg, data, export_ckpt, export_target, export_csv, !no_adapt);
      std::cout << export_csv << '\n';
    }
  } catch (const metacal::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const metacal::DataError& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  } catch (const metacal::Error& e) {
    spdlog::error("{}", e.what());
    return kExitTraining;
  }
  return kExitOk;
}

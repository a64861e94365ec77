#include "onlinehoi/archive.hpp"
#include "onlinehoi/errors.hpp"
#include "onlinehoi/harness.hpp"
#include "onlinehoi/plot.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

using namespace onlinehoi;
namespace fs = std::filesystem;
using harness::json;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericalExit = 3;

struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;
  std::string task, mode, memory, fusion, model;
  std::optional<int> S, L_cap, steps;

  void attach(CLI::App* cmd, bool required = true) {
    auto* opt = cmd->add_option("-c,--config", path, "run config (JSON)");
    if (required) opt->required();
    cmd->add_option("--set", overrides, "override a config entry, e.g. --set training.steps=50");
    cmd->add_option("--task", task, "generation | perception");
    cmd->add_option("--mode", mode, "online | offline");
    cmd->add_option("--memory", memory, "off | ms_only | ml_only | me");
    cmd->add_option("--fusion", fusion, "concat_maxpool | add | max");
    cmd->add_option("--model", model, "mamba | causal_transformer");
    cmd->add_option("--S", S, "short-term memory capacity");
    cmd->add_option("--L-cap", L_cap, "long-term memory capacity");
    cmd->add_option("--steps", steps, "training steps");
  }

  json merged() const {
    json j = json::parse(archive::read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": not valid JSON");
    for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
             {"task", task}, {"mode", mode}, {"memory", memory}, {"fusion", fusion}, {"model", model}})
      if (!value.empty()) j[key] = value;
    if (S) j["S"] = *S;
    if (L_cap) j["L_cap"] = *L_cap;
    if (steps) j["training"]["steps"] = *steps;
    for (const auto& o : overrides) j = harness::apply_override(j, o);
    return j;
  }

  harness::RunConfig load() const { return harness::parse_config(merged()); }
};

std::vector<std::uint64_t> seeds_for(const harness::RunConfig& cfg, const std::optional<std::uint64_t>& seed) {
  if (seed) return {*seed};
  return cfg.seeds;
}

void print_report(const json& report) {
  std::printf("%s seed %s config %s\n", report.value("name", "").c_str(), report["seed"].dump().c_str(),
              report.value("config_hash", "").c_str());
  for (const auto& c : report["columns"]) {
    const std::string col = c.get<std::string>();
    std::printf("  %-8s %.6g\n", col.c_str(), report["metrics"][col].get<double>());
  }
  if (report["metrics"].contains("DIV_gap")) {
    std::printf("  |DIV_gen - DIV_gt| = %.6g\n", report["metrics"]["DIV_gap"].get<double>());
  }
  if (report.contains("guard") && report["guard"].value("checked", false)) {
    std::printf("  causality guard: %d violation(s)\n", report["guard"]["violations"].get<int>());
  }
  if (report.contains("extractor") && report["extractor"].contains("warning")) {
    std::fprintf(stderr, "warning: %s\n", report["extractor"]["warning"].get<std::string>().c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online human-object interaction generation and perception harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ONLINEHOI_VERSION));
  std::string out_root;
  app.add_option("--out", out_root, "output root (default: $ONLINEHOI_OUT or ./runs)");

  ConfigFlags train_cfg, eval_cfg, data_cfg;
  std::optional<std::uint64_t> train_seed, eval_seed;
  std::string resume, checkpoint, grid_path, plot_out, data_dir;
  bool ground_truth = false;
  std::optional<std::uint64_t> shuffle_seed;
  std::vector<std::string> report_files;

  auto* train = app.add_subcommand("train", "train the configured model for each seed");
  train_cfg.attach(train);
  train->add_option("--seed", train_seed, "train only this seed");
  train->add_option("--resume", resume, "continue from this checkpoint (requires --seed)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write the metric report");
  eval_cfg.attach(eval);
  eval->add_option("--seed", eval_seed, "evaluate only this seed");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: the run directory's checkpoint.bin)");
  eval->add_flag("--ground-truth", ground_truth, "score the ground truth against itself");

  auto* ablate = app.add_subcommand("ablate", "run a grid of configs over seeds and tabulate");
  ablate->add_option("-c,--config", grid_path, "grid config (JSON with a \"grid\" entry)")->required();
  ablate->add_option("--shuffle-seed", shuffle_seed, "execute cells in a shuffled order");

  auto* plot = app.add_subcommand("plot", "render SVG figures from report files");
  plot->add_option("reports", report_files, "report.json or ablation.json files")->required();
  plot->add_option("--dir", plot_out, "figure directory (default: <out>/plots)");

  auto* datagen = app.add_subcommand("datagen", "write the synthetic dataset splits to disk");
  data_cfg.attach(datagen);
  datagen->add_option("--dir", data_dir, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  try {
    const fs::path root = harness::output_root(out_root);
    if (*train) {
      const auto cfg = train_cfg.load();
      if (!resume.empty() && !train_seed) throw ConfigError("--resume needs --seed");
      for (auto seed : seeds_for(cfg, train_seed)) {
        const fs::path dir = harness::run_dir(root, cfg, seed);
        const auto res = harness::train(cfg, seed, dir, {.resume = resume});
        std::printf("trained %s seed %llu: %zu steps, final loss %.6g, %zu parameters\n  checkpoint %s\n", cfg.name.c_str(),
                    static_cast<unsigned long long>(seed), res.losses.size(), res.losses.back(), res.parameter_count,
                    res.checkpoint.string().c_str());
      }
    } else if (*eval) {
      const auto cfg = eval_cfg.load();
      if (ground_truth) {
        const json report = harness::evaluate_ground_truth(cfg);
        const fs::path dir = root / (cfg.paths.out.empty() ? cfg.name : cfg.paths.out) / harness::config_hash(cfg) / "ground_truth";
        harness::write_report(report, dir);
        print_report(report);
      } else {
        if (!checkpoint.empty() && !eval_seed) throw ConfigError("--checkpoint needs --seed");
        for (auto seed : seeds_for(cfg, eval_seed)) {
          const fs::path dir = harness::run_dir(root, cfg, seed);
          const json report = harness::evaluate(cfg, seed, checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(checkpoint));
          harness::write_report(report, dir);
          print_report(report);
        }
      }
    } else if (*ablate) {
      const json j = json::parse(archive::read_file(grid_path), nullptr, false);
      if (j.is_discarded()) throw ConfigError(grid_path + ": not valid JSON");
      const auto grid = harness::parse_grid(j);
      harness::AblateOptions opts{.root = root, .shuffle = shuffle_seed.has_value(), .shuffle_seed = shuffle_seed.value_or(0)};
      const json result = harness::ablate(grid, opts);
      const fs::path dir = root / "ablate" / result["config_hash"].get<std::string>();
      archive::write_file_atomic(dir / "ablation.json", result.dump(2) + "\n");
      for (const auto& fam : result["families"]) {
        const std::string table = harness::format_table(fam);
        archive::write_file_atomic(dir / (fam["name"].get<std::string>() + ".txt"), table);
        std::cout << table << "\n";
      }
      std::printf("wrote %s\n", (dir / "ablation.json").string().c_str());
    } else if (*plot) {
      std::vector<fs::path> files(report_files.begin(), report_files.end());
      const auto res = plot::plot_reports(files, plot_out.empty() ? root / "plots" : fs::path(plot_out));
      for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      for (const auto& p : res.written) std::printf("%s\n", p.string().c_str());
    } else if (*datagen) {
      const auto cfg = data_cfg.load();
      harness::datagen(cfg, data_dir);
      std::printf("wrote %s dataset to %s\n", harness::to_string(cfg.task).c_str(), data_dir.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigExit;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

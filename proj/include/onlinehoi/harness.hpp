#pragma once

// Run configuration, training/evaluation drivers, ablation grids and dataset
// export behind the command-line verbs.

#include "onlinehoi/diffusion.hpp"
#include "onlinehoi/percept.hpp"
#include "onlinehoi/synthdata.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace onlinehoi::harness {

namespace fs = std::filesystem;
using nlohmann::json;

enum class Task { generation, perception };

std::string to_string(Task t);
Task parse_task(const std::string& s);

struct TrainingBudget {
  int steps = 200;
  int batch = 8;
  double lr = 2e-3;
  int checkpoint_every = 100;  // 0 writes only the final checkpoint
};

struct DiffusionSettings {
  int steps = 50;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::cosine;
};

struct NetworkSettings {
  int model_dim = 32;
  int depth = 2;  // U-Net blocks per side, or temporal blocks for perception
  int state_dim = 8;
  int conv_width = 4;
  int expansion = 2;
  int heads = 4;
};

struct DataSettings {
  std::uint64_t seed = 0;
  int train = 64;
  int val = 16;
  int test = 16;
  int T_seq = 48;
  int n_classes = 4;
  double noise = 0.01;
  double long_range_rate = 0.5;
  int cue_delay = 16;
  int n_pts = 32;
  int min_segment = 12;
  int max_segment = 40;
  int twin_from = -1;
  int pose_dim = 6;  // widths of actor/reactor rows and object pose rows
  int object_pose_dim = 6;
  int geometry_points = 32;  // object surface samples fed to the denoiser
};

struct EvalSettings {
  std::string split = "test";  // test | val
  int classifier_steps = 300;
  std::uint64_t classifier_seed = 0;
  int div_pairs = 8;
  bool guard = true;
};

struct Paths {
  std::string data;  // empty: generate the synthetic data in memory
  std::string out;   // run directory name under the output root; defaults to `name`
};

struct RunConfig {
  std::string name = "run";
  Task task = Task::generation;
  bool online = true;
  memory::MemoryMode memory = memory::MemoryMode::me;
  memory::Fusion fusion = memory::Fusion::concat_maxpool;
  BlockKind model = BlockKind::mamba;
  int S = 8;
  int L_cap = 8;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TrainingBudget training;
  DiffusionSettings diffusion;
  NetworkSettings network;
  DataSettings data;
  EvalSettings eval;
  Paths paths;

  void validate() const;
};

/// Missing keys take defaults; unknown keys and bad values throw ConfigError.
RunConfig parse_config(const json& j);
RunConfig load_config(const fs::path& path);
json to_json(const RunConfig& cfg);
/// FNV-1a of the canonical JSON without `paths`, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);
/// Applies "a.b=value" overrides; value is parsed as JSON, else taken as a string.
json apply_override(json j, const std::string& assignment);

diffusion::DenoiserConfig denoiser_config(const RunConfig& cfg);
percept::PerceptionConfig perception_config(const RunConfig& cfg);
synth::SynthGenSpec gen_spec(const RunConfig& cfg);
synth::SynthPcdSpec pcd_spec(const RunConfig& cfg);

/// `override_root`, else $ONLINEHOI_OUT, else "runs".
fs::path output_root(const std::string& override_root = "");
fs::path run_dir(const fs::path& root, const RunConfig& cfg, std::uint64_t seed);

struct GenerationData {
  std::vector<synth::MotionPair> train, val, test;
};
struct PerceptionData {
  std::vector<percept::PointCloudSequence> train, val, test;
};
GenerationData generation_data(const RunConfig& cfg);
PerceptionData perception_data(const RunConfig& cfg);
/// Writes the splits under `dir` in the clip/motion text layouts plus a manifest.
void datagen(const RunConfig& cfg, const fs::path& dir);

struct TrainOptions {
  fs::path resume;  // checkpoint to continue from
};

struct TrainResult {
  std::vector<double> losses;  // full history, including any resumed prefix
  fs::path checkpoint;
  std::size_t parameter_count = 0;
};

/// Writes checkpoint_step<N>.bin every checkpoint_every steps, checkpoint.bin
/// at the end, and train_log.csv. NumericalError on a non-finite loss.
TrainResult train(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir, const TrainOptions& opts = {});

/// Throws ConfigError when the checkpoint belongs to another task or config,
/// InvalidState when the online causality guard sees a violation.
json evaluate(const RunConfig& cfg, std::uint64_t seed, const fs::path& checkpoint);
/// Scores the ground truth of the eval split against itself.
json evaluate_ground_truth(const RunConfig& cfg);
/// report.json and report.csv, both written atomically.
void write_report(const json& report, const fs::path& dir);
std::vector<std::string> metric_columns(Task task);

struct GridFamily {
  std::string name;
  std::vector<std::pair<std::string, std::vector<json>>> axes;
};

struct Grid {
  json base;
  std::vector<GridFamily> families;
};

/// A run config plus "grid": {axis: [values]} or a list of {"name", "axes"}.
Grid parse_grid(const json& j);

struct AblateOptions {
  fs::path root;
  bool shuffle = false;  // execute cells in a permuted order
  std::uint64_t shuffle_seed = 0;
};

/// Runs every cell for every seed (train + eval). A failing run is recorded
/// in its cell and the grid continues. Returns {"families": [...]}.
json ablate(const Grid& grid, const AblateOptions& opts);
std::string format_table(const json& family);

}  // namespace onlinehoi::harness

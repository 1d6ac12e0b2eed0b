// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration, checkpoints and the command implementations behind the
// attnrl tool.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "attnrl/core.hpp"
#include "attnrl/pipeline.hpp"

namespace attnrl {

// Raised for bad configuration input; the message starts with the key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct Config {
  std::string arch = "adaptive";
  std::string env = "catch";
  std::uint64_t total_steps = 200000;
  std::size_t unroll_length = 239;
  std::size_t chunk_size = 80;  // 0: whole buffer
  std::size_t num_actors = 32;
  std::size_t num_buffers = 60;
  std::size_t batch_size = 16;
  std::size_t mem_len = 100;
  std::size_t emb_size = 16;
  std::size_t patch_size = 7;
  std::size_t n_layer = 1;
  std::size_t heads = 4;
  double gamma = 0.99;
  double rho_bar = 1.0;
  double c_bar = 1.0;
  double baseline_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 1e-3;
  bool rescale_images = false;
  std::size_t frame_stack = 4;
  std::uint64_t seed = 0;
  // Beyond the paper's tables.
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t metrics_window = 100;
  double target_return = 0.0;  // stop once mean_return reaches it; 0 disables
  std::string mode = "auto";   // auto, threaded or sequential
};

// Every key accepted in files and as --key flags, in declaration order.
const std::vector<std::string>& config_keys();

// Defaults for `arch`, taken from the per-architecture hyperparameter tables.
Config default_config(const std::string& arch);

// key=value lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Merges file entries with overrides (overrides win), picks the arch
// defaults, applies every entry and validates. Throws ConfigError.
Config parse_config(const std::map<std::string, std::string>& overrides,
                    const std::filesystem::path& file = {});

void validate(const Config& cfg);
std::string format_config(const Config& cfg);  // key=value lines, parseable
PipelineConfig pipeline_config(const Config& cfg);
CoreSpec core_spec(const Config& cfg);

// ---- Checkpoints
//
// "ATRL", version byte 1, u32 tensor count, then per tensor: u16 name
// length, name bytes, u8 rank, u32 dims, f32 values. Little endian.

inline constexpr char kCheckpointMagic[4] = {'A', 'T', 'R', 'L'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

void save_checkpoint(const ParamList& params, const std::filesystem::path& path);
void save_checkpoint(const ParamList& params, std::ostream& out);
std::vector<StoredTensor> read_checkpoint(const std::filesystem::path& path);
std::vector<StoredTensor> read_checkpoint(std::istream& in);
// Copies checkpoint values into params, matched by name. Missing, extra or
// reshaped tensors are errors.
void load_checkpoint(const ParamList& params, const std::filesystem::path& path);

// ---- Commands

struct TrainSummary {
  TrainingResult result;
  std::filesystem::path metrics_csv, checkpoint, config;
};

// Writes metrics.csv, model.ckpt and config.txt into out_dir.
TrainSummary train_command(const Config& cfg, const std::filesystem::path& out_dir, std::ostream& log);

// Builds the core described by cfg and loads the checkpoint into it.
std::unique_ptr<PolicyCore> load_core(const Config& cfg, const std::filesystem::path& checkpoint);

struct EvalSummary {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  double inference_ms = 0.0;
};

EvalSummary evaluate(const PolicyCore& core, const Config& cfg, std::size_t episodes, bool greedy = false);

// Plays `steps` steps and writes per-head overlays
// frame_<t>_head_<h>.ppm. Returns the written paths.
std::vector<std::filesystem::path> viz_attention(const PolicyCore& core, const Config& cfg, std::size_t steps,
                                                 const std::filesystem::path& out_dir);

// Plays `steps` steps and writes saliency_<policy|value>_<t>.ppm.
std::vector<std::filesystem::path> viz_saliency(const PolicyCore& core, const Config& cfg, std::size_t steps,
                                                const std::filesystem::path& out_dir, std::size_t stride = 5);

struct BenchRow {
  std::size_t tokens = 0;  // N
  std::size_t frames = 0;  // F
  std::uint64_t divided_count = 0;
  std::uint64_t joint_count = 0;
  double divided_ms = 0.0;
  double joint_ms = 0.0;
};

// One space-time block per scheme on random tokens of width emb; times are
// the best of `reps` repetitions of one query frame against F - 1 cached
// frames.
std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& tokens, const std::vector<std::size_t>& frames,
                                      std::size_t emb = 16, std::size_t heads = 4, std::size_t reps = 5,
                                      std::uint64_t seed = 0);
void print_bench(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace attnrl

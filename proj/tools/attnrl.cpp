// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// attnrl: train, evaluate and inspect attention policies on the toy
// environments.

#include <CLI11.hpp>

#include <deque>
#include <filesystem>
#include <iostream>

#include "attnrl/cli.hpp"

namespace fs = std::filesystem;
using namespace attnrl;

namespace {

// Every Config key becomes a --key option on a subcommand.
struct ConfigFlags {
  std::string file;
  std::deque<std::string> storage;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key=value file; flags override it");
    for (const auto& key : config_keys()) {
      storage.emplace_back();
      options.emplace_back(key, app->add_option("--" + key, storage.back(), "config: " + key));
    }
  }

  std::map<std::string, std::string> overrides() const {
    std::map<std::string, std::string> out;
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i].second->count() > 0) out[options[i].first] = storage[i];
    return out;
  }

  // A checkpoint's own config.txt is used unless --config names a file.
  Config resolve(const fs::path& checkpoint = {}) const {
    fs::path f = file;
    if (f.empty() && !checkpoint.empty() && fs::exists(checkpoint.parent_path() / "config.txt"))
      f = checkpoint.parent_path() / "config.txt";
    return parse_config(overrides(), f);
  }
};

std::vector<std::size_t> default_tokens() { return {4, 9, 16, 36}; }
std::vector<std::size_t> default_frames() { return {2, 4, 8, 16}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based actor-critic agents on toy environments"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, attn_flags, sal_flags;
  std::string out_dir = "run";
  auto* train = app.add_subcommand("train", "train a core; writes metrics.csv, model.ckpt and config.txt");
  train_flags.attach(train);
  train->add_option("--out", out_dir, "output directory");

  std::string checkpoint;
  std::size_t episodes = 100;
  bool greedy = false;
  auto* eval = app.add_subcommand("eval", "mean return, length and inference time over episodes");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--episodes", episodes);
  eval->add_flag("--greedy", greedy, "take the most likely action");

  std::size_t steps = 8;
  std::string viz_out = "viz";
  auto* attn = app.add_subcommand("viz-attn", "per-head attention overlays as PPM files");
  attn_flags.attach(attn);
  attn->add_option("--checkpoint", checkpoint)->required();
  attn->add_option("--steps", steps);
  attn->add_option("--out", viz_out);

  std::size_t stride = 5;
  auto* sal = app.add_subcommand("viz-saliency", "policy and value saliency overlays as PPM files");
  sal_flags.attach(sal);
  sal->add_option("--checkpoint", checkpoint)->required();
  sal->add_option("--steps", steps);
  sal->add_option("--out", viz_out);
  sal->add_option("--stride", stride, "sample one pixel in every stride");

  std::vector<std::size_t> tokens = default_tokens(), frames = default_frames();
  std::size_t emb = 16, heads = 4, reps = 5;
  auto* bench = app.add_subcommand("bench-attn", "comparison counts and timing, divided vs joint");
  bench->add_option("--tokens", tokens, "patch counts N")->delimiter(',');
  bench->add_option("--frames", frames, "frame counts F")->delimiter(',');
  bench->add_option("--emb", emb);
  bench->add_option("--heads", heads);
  bench->add_option("--reps", reps);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const Config cfg = train_flags.resolve();
      const auto s = train_command(cfg, out_dir, std::cout);
      std::cout << "metrics " << s.metrics_csv.string() << "\ncheckpoint " << s.checkpoint.string() << '\n';
    } else if (eval->parsed()) {
      const Config cfg = eval_flags.resolve(checkpoint);
      const auto core = load_core(cfg, checkpoint);
      const auto s = evaluate(*core, cfg, episodes, greedy);
      std::cout << "episodes " << s.episodes << "\nmean_return " << s.mean_return << "\nmean_length "
                << s.mean_length << "\ninference_ms " << s.inference_ms << '\n';
    } else if (attn->parsed()) {
      const Config cfg = attn_flags.resolve(checkpoint);
      const auto core = load_core(cfg, checkpoint);
      const auto files = viz_attention(*core, cfg, steps, viz_out);
      std::cout << files.size() << " files in " << viz_out << '\n';
    } else if (sal->parsed()) {
      const Config cfg = sal_flags.resolve(checkpoint);
      const auto core = load_core(cfg, checkpoint);
      const auto files = viz_saliency(*core, cfg, steps, viz_out, stride);
      std::cout << files.size() << " files in " << viz_out << '\n';
    } else if (bench->parsed()) {
      print_bench(std::cout, bench_attention(tokens, frames, emb, heads, reps));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

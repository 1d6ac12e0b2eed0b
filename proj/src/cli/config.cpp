// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "attnrl/cli.hpp"
#include "attnrl/envs.hpp"

namespace attnrl {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || text[0] == '-' || ec != std::errc() || p != end)
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end) throw ConfigError(key, "expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

struct Field {
  std::string name;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename T>
std::string show(const T& v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

#define ATTNRL_UINT(f, T) \
  Field{#f, [](Config& c, const std::string& v) { c.f = parse_unsigned<T>(#f, v); }, [](const Config& c) { return show(c.f); }}
#define ATTNRL_REAL(f) \
  Field{#f, [](Config& c, const std::string& v) { c.f = parse_double(#f, v); }, [](const Config& c) { return show(c.f); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"arch", [](Config& c, const std::string& v) { c.arch = v; }, [](const Config& c) { return c.arch; }},
      Field{"env", [](Config& c, const std::string& v) { c.env = v; }, [](const Config& c) { return c.env; }},
      ATTNRL_UINT(total_steps, std::uint64_t),
      ATTNRL_UINT(unroll_length, std::size_t),
      ATTNRL_UINT(chunk_size, std::size_t),
      ATTNRL_UINT(num_actors, std::size_t),
      ATTNRL_UINT(num_buffers, std::size_t),
      ATTNRL_UINT(batch_size, std::size_t),
      ATTNRL_UINT(mem_len, std::size_t),
      ATTNRL_UINT(emb_size, std::size_t),
      ATTNRL_UINT(patch_size, std::size_t),
      ATTNRL_UINT(n_layer, std::size_t),
      ATTNRL_UINT(heads, std::size_t),
      ATTNRL_REAL(gamma),
      ATTNRL_REAL(rho_bar),
      ATTNRL_REAL(c_bar),
      ATTNRL_REAL(baseline_coef),
      ATTNRL_REAL(entropy_coef),
      ATTNRL_REAL(learning_rate),
      Field{"rescale_images", [](Config& c, const std::string& v) { c.rescale_images = parse_bool("rescale_images", v); },
            [](const Config& c) { return std::string(c.rescale_images ? "true" : "false"); }},
      ATTNRL_UINT(frame_stack, std::size_t),
      ATTNRL_UINT(seed, std::uint64_t),
      ATTNRL_UINT(height, std::size_t),
      ATTNRL_UINT(width, std::size_t),
      ATTNRL_UINT(metrics_window, std::size_t),
      ATTNRL_REAL(target_return),
      Field{"mode", [](Config& c, const std::string& v) { c.mode = v; }, [](const Config& c) { return c.mode; }},
  };
  return all;
}

#undef ATTNRL_UINT
#undef ATTNRL_REAL

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ConfigError(key, "unknown key");
}

const std::vector<std::string> kArchs = {"mott", "adaptive", "sp-temp-seq", "sp-temp-oneshot", "divided", "joint"};

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.name);
    return k;
  }();
  return keys;
}

Config default_config(const std::string& arch) {
  Config c;
  c.arch = arch;
  auto table = [&](std::size_t unroll, std::size_t chunk, std::size_t buffers, std::size_t actors, std::size_t batch) {
    c.unroll_length = unroll;
    c.chunk_size = chunk;
    c.num_buffers = buffers;
    c.num_actors = actors;
    c.batch_size = batch;
  };
  if (arch == "mott") {
    table(160, 0, 60, 32, 12);
  } else if (arch == "sp-temp-seq" || arch == "sp-temp-oneshot") {
    table(239, 80, 62, 50, 12);  // the table lists 60 buffers, below 50 actors + 12
  } else if (arch == "divided") {
    table(239, 80, 56, 32, 24);  // the table lists 40 buffers, below 32 actors + 24
    c.total_steps = 400000;
  } else if (arch == "joint") {
    table(239, 10, 40, 32, 4);
    c.total_steps = 400000;
  }
  return c;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot read " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  for (std::size_t n = 1; std::getline(f, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config", path.string() + ":" + std::to_string(n) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

Config parse_config(const std::map<std::string, std::string>& overrides, const std::filesystem::path& file) {
  std::map<std::string, std::string> entries;
  if (!file.empty()) entries = read_config_file(file);
  for (const auto& [k, v] : overrides) entries[k] = v;
  for (const auto& [k, v] : entries) field(k);  // reject unknown keys first

  const auto arch = entries.find("arch");
  Config cfg = default_config(arch == entries.end() ? Config{}.arch : arch->second);
  for (const auto& [k, v] : entries) field(k).set(cfg, v);
  validate(cfg);
  return cfg;
}

void validate(const Config& c) {
  if (std::find(kArchs.begin(), kArchs.end(), c.arch) == kArchs.end())
    throw ConfigError("arch", "unknown architecture '" + c.arch + "'");
  if (c.mode != "auto" && c.mode != "threaded" && c.mode != "sequential")
    throw ConfigError("mode", "expected auto, threaded or sequential, got '" + c.mode + "'");
  for (const auto& [name, v] :
       {std::pair<const char*, std::size_t>{"total_steps", c.total_steps}, {"unroll_length", c.unroll_length},
        {"mem_len", c.mem_len}, {"emb_size", c.emb_size}, {"patch_size", c.patch_size}, {"n_layer", c.n_layer},
        {"heads", c.heads}, {"height", c.height}, {"width", c.width}})
    if (v == 0) throw ConfigError(name, "must be positive");
  const bool spacetime = c.arch == "divided" || c.arch == "joint";
  if (spacetime && c.emb_size % c.heads != 0)
    throw ConfigError("heads", std::to_string(c.heads) + " does not divide emb_size " + std::to_string(c.emb_size));
  if (!spacetime && CoreSpec{}.d_model % c.heads != 0)
    throw ConfigError("heads", std::to_string(c.heads) + " does not divide the model width " +
                                   std::to_string(CoreSpec{}.d_model));
  try {
    validate(pipeline_config(c));
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw ConfigError(colon == std::string::npos ? "config" : msg.substr(0, colon),
                      colon == std::string::npos ? msg : trim(msg.substr(colon + 1)));
  }
}

std::string format_config(const Config& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.name + "=" + f.get(cfg) + "\n";
  return out;
}

PipelineConfig pipeline_config(const Config& c) {
  PipelineConfig p;
  p.env = c.env;
  p.total_steps = c.total_steps;
  p.unroll_length = c.unroll_length;
  p.chunk_size = c.chunk_size;
  p.num_actors = c.num_actors;
  p.num_buffers = c.num_buffers;
  p.batch_size = c.batch_size;
  p.gamma = c.gamma;
  p.rho_bar = c.rho_bar;
  p.c_bar = c.c_bar;
  p.baseline_coef = c.baseline_coef;
  p.entropy_coef = c.entropy_coef;
  p.learning_rate = c.learning_rate;
  p.frame_stack = c.frame_stack;
  p.rescale_images = c.rescale_images;
  p.metrics_window = c.metrics_window;
  p.seed = c.seed;
  p.mode = c.mode == "threaded"     ? PipelineConfig::Mode::threaded
           : c.mode == "sequential" ? PipelineConfig::Mode::sequential
                                    : PipelineConfig::Mode::automatic;
  return p;
}

CoreSpec core_spec(const Config& c) {
  CoreSpec s;
  s.arch = c.arch;
  s.in_channels = c.frame_stack;
  s.height = c.height;
  s.width = c.width;
  s.num_actions = make_env(c.env, 0)->num_actions();
  s.heads = c.heads;
  s.n_layer = c.n_layer;
  s.mem_len = c.mem_len;
  s.max_pos = std::max(s.max_pos, c.mem_len + c.unroll_length + 1);
  s.emb_size = c.emb_size;
  s.patch_size = c.patch_size;
  s.seed = c.seed;
  return s;
}

}  // namespace attnrl

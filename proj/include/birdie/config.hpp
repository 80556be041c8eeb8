#pragma once

// Run configuration: a plain key = value file. '#' starts a comment. Every
// key has a default except `seed`, which is mandatory (BIRDIE_SEED in the
// environment overrides it).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "birdie/curriculum.hpp"
#include "birdie/error.hpp"
#include "birdie/model.hpp"
#include "birdie/objectives.hpp"
#include "birdie/optim.hpp"

namespace birdie {

enum class MixtureMode : std::uint8_t { Birdie, UL2, Fixed, NextToken };

inline std::string mixture_name(MixtureMode m) {
  switch (m) {
    case MixtureMode::Birdie: return "birdie";
    case MixtureMode::UL2: return "ul2";
    case MixtureMode::Fixed: return "fixed";
    case MixtureMode::NextToken: return "next-token";
  }
  return "birdie";
}

inline MixtureMode parse_mixture(const std::string& s) {
  if (s == "birdie") return MixtureMode::Birdie;
  if (s == "ul2") return MixtureMode::UL2;
  if (s == "fixed") return MixtureMode::Fixed;
  if (s == "next-token" || s == "next_token" || s == "ntp") return MixtureMode::NextToken;
  throw Error("unknown mixture '" + s + "' (expected birdie, ul2, fixed, next-token)");
}

// When a paradigm token is attached to transformed samples.
enum class ParadigmMode : std::uint8_t { UL2Only, Always, Never };

struct RunConfig {
  std::uint64_t seed = 0;
  bool has_seed = false;

  MixtureMode mixture = MixtureMode::Birdie;
  std::string grid = "desk";
  std::vector<double> fixed_weights;  // empty = uniform
  ParadigmMode paradigm = ParadigmMode::UL2Only;

  ModelConfig model = ModelConfig::gated_ssm();
  AdamWConfig optim;
  std::size_t steps = 3000;
  std::size_t batch_tokens = 2048;
  std::size_t checkpoint_every = 500;
  std::size_t log_every = 1;

  ControllerConfig controller;
  std::size_t eval_sequences = 32;

  std::string corpus = "synthetic";
  std::string out_dir = "run";
  std::size_t memory_limit_mb = 4096;
  std::size_t threads = 1;

  std::vector<ObjectiveConfig> objective_grid() const {
    if (mixture == MixtureMode::UL2) {
      std::vector<ObjectiveConfig> g;
      for (const auto& w : ul2_mixture()) g.push_back(w.config);
      return g;
    }
    if (mixture == MixtureMode::NextToken) return {make_simple(ObjectiveClass::NextToken, {128, 256})};
    if (grid == "desk") return desk_grid();
    if (grid == "paper") return paper_grid();
    throw Error("unknown grid '" + grid + "' (expected desk or paper)");
  }

  // Canonical text: every key in a fixed order. Used for hashing and the
  // manifest.
  std::string canonical() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || v.find('-') != std::string::npos) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error("config: '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace detail

// Applies one key; throws on unknown keys or bad values.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&, const std::string&)>> setters = {
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = parse_u64(k, v); c.has_seed = true; }},
      {"mixture", [](RunConfig& c, auto&, auto& v) { c.mixture = parse_mixture(v); }},
      {"grid", [](RunConfig& c, auto&, auto& v) { c.grid = v; }},
      {"fixed_weights", [](RunConfig& c, auto& k, auto& v) {
         c.fixed_weights.clear();
         std::stringstream ss(v);
         for (std::string item; std::getline(ss, item, ',');) c.fixed_weights.push_back(parse_double(k, trim(item)));
       }},
      {"paradigm_tokens", [](RunConfig& c, auto& k, auto& v) {
         if (v == "ul2") c.paradigm = ParadigmMode::UL2Only;
         else if (v == "always") c.paradigm = ParadigmMode::Always;
         else if (v == "never") c.paradigm = ParadigmMode::Never;
         else throw Error("config: '" + k + "' expects ul2, always or never");
       }},
      {"model.kind", [](RunConfig& c, auto&, auto& v) {
         c.model.kind = parse_kind(v);
         c.model.mlp = c.model.kind == LayerKind::RGLRU;
       }},
      {"model.layers", [](RunConfig& c, auto& k, auto& v) { c.model.num_layers = parse_u64(k, v); }},
      {"model.d_model", [](RunConfig& c, auto& k, auto& v) { c.model.d_model = parse_u64(k, v); }},
      {"model.state_size", [](RunConfig& c, auto& k, auto& v) { c.model.state_size = parse_u64(k, v); }},
      {"model.bidirectional", [](RunConfig& c, auto&, auto& v) { c.model.bidir = parse_pattern(v); }},
      {"model.conv_width", [](RunConfig& c, auto& k, auto& v) { c.model.conv_width = parse_u64(k, v); }},
      {"model.mlp", [](RunConfig& c, auto& k, auto& v) { c.model.mlp = parse_bool(k, v); }},
      {"model.mlp_expansion", [](RunConfig& c, auto& k, auto& v) { c.model.mlp_expansion = parse_double(k, v); }},
      {"model.max_gradient", [](RunConfig& c, auto& k, auto& v) { c.model.max_gradient = parse_double(k, v); }},
      {"train.steps", [](RunConfig& c, auto& k, auto& v) { c.steps = parse_u64(k, v); }},
      {"train.batch_tokens", [](RunConfig& c, auto& k, auto& v) { c.batch_tokens = parse_u64(k, v); }},
      {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.optim.lr = parse_double(k, v); }},
      {"train.min_lr", [](RunConfig& c, auto& k, auto& v) { c.optim.min_lr = parse_double(k, v); }},
      {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.optim.beta1 = parse_double(k, v); }},
      {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.optim.beta2 = parse_double(k, v); }},
      {"train.weight_decay", [](RunConfig& c, auto& k, auto& v) { c.optim.weight_decay = parse_double(k, v); }},
      {"train.grad_clip", [](RunConfig& c, auto& k, auto& v) { c.optim.grad_clip = parse_double(k, v); }},
      {"train.warmup_steps", [](RunConfig& c, auto& k, auto& v) { c.optim.warmup_steps = parse_u64(k, v); }},
      {"train.checkpoint_every", [](RunConfig& c, auto& k, auto& v) { c.checkpoint_every = parse_u64(k, v); }},
      {"train.log_every", [](RunConfig& c, auto& k, auto& v) { c.log_every = parse_u64(k, v); }},
      {"curriculum.warmup_steps", [](RunConfig& c, auto& k, auto& v) { c.controller.warmup_steps = parse_u64(k, v); }},
      {"curriculum.candidates", [](RunConfig& c, auto& k, auto& v) { c.controller.num_candidates = parse_u64(k, v); }},
      {"curriculum.top_k", [](RunConfig& c, auto& k, auto& v) { c.controller.top_k = parse_u64(k, v); }},
      {"curriculum.history_cap", [](RunConfig& c, auto& k, auto& v) { c.controller.history_cap = parse_u64(k, v); }},
      {"curriculum.reward_sensitivity", [](RunConfig& c, auto& k, auto& v) { c.controller.reward.sensitivity = parse_double(k, v); }},
      {"curriculum.reward_sign", [](RunConfig& c, auto& k, auto& v) {
         const double s = parse_double(k, v);
         if (s != 1.0 && s != -1.0) throw Error("config: curriculum.reward_sign must be 1 or -1");
         c.controller.reward.sign = s;
       }},
      {"curriculum.reward_layers", [](RunConfig& c, auto& k, auto& v) { c.controller.model.num_layers = parse_u64(k, v); }},
      {"curriculum.reward_hidden", [](RunConfig& c, auto& k, auto& v) { c.controller.model.hidden = parse_u64(k, v); }},
      {"curriculum.refit_steps", [](RunConfig& c, auto& k, auto& v) { c.controller.model.fit_steps = parse_u64(k, v); }},
      {"curriculum.reward_lr", [](RunConfig& c, auto& k, auto& v) {
         c.controller.model.optim.lr = c.controller.model.optim.min_lr = parse_double(k, v);
       }},
      {"curriculum.eval_sequences", [](RunConfig& c, auto& k, auto& v) { c.eval_sequences = parse_u64(k, v); }},
      {"corpus", [](RunConfig& c, auto&, auto& v) { c.corpus = v; }},
      {"out_dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
      {"memory_limit_mb", [](RunConfig& c, auto& k, auto& v) { c.memory_limit_mb = parse_u64(k, v); }},
      {"threads", [](RunConfig& c, auto& k, auto& v) { c.threads = parse_u64(k, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) {
    std::string known;
    for (const auto& [k, _] : setters) known += (known.empty() ? "" : ", ") + k;
    throw Error("config: unknown key '" + key + "' (known keys: " + known + ")");
  }
  it->second(c, key, v);
}

inline void validate(const RunConfig& c) {
  if (!c.has_seed) throw Error("config: 'seed' is mandatory (or set BIRDIE_SEED)");
  c.model.validate();
  if (c.steps == 0) throw Error("config: train.steps must be positive");
  if (c.batch_tokens < 16) throw Error("config: train.batch_tokens must be at least 16");
  if (c.threads == 0) throw Error("config: threads must be positive");
  if (c.corpus != "synthetic" && !std::filesystem::exists(c.corpus)) {
    throw Error("config: corpus path '" + c.corpus + "' does not exist");
  }
  const auto grid = c.objective_grid();
  if (c.mixture == MixtureMode::Fixed && !c.fixed_weights.empty() && c.fixed_weights.size() != grid.size()) {
    throw Error("config: fixed_weights has " + std::to_string(c.fixed_weights.size()) + " entries, grid has " +
                std::to_string(grid.size()));
  }
}

inline void apply_env(RunConfig& c) {
  if (const char* s = std::getenv("BIRDIE_SEED"); s && *s) apply_setting(c, "seed", s);
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
  RunConfig c;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse_config_text(ss.str(), path);
  apply_env(c);
  validate(c);
  return c;
}

inline std::string RunConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  const char* pm = paradigm == ParadigmMode::UL2Only ? "ul2" : paradigm == ParadigmMode::Always ? "always" : "never";
  os << "seed = " << seed << "\n"
     << "mixture = " << mixture_name(mixture) << "\n"
     << "grid = " << grid << "\n"
     << "fixed_weights = ";
  for (std::size_t i = 0; i < fixed_weights.size(); ++i) os << (i ? "," : "") << fixed_weights[i];
  os << "\n"
     << "paradigm_tokens = " << pm << "\n"
     << "model.kind = " << kind_name(model.kind) << "\n"
     << "model.layers = " << model.num_layers << "\n"
     << "model.d_model = " << model.d_model << "\n"
     << "model.state_size = " << model.state_size << "\n"
     << "model.bidirectional = " << pattern_name(model.bidir) << "\n"
     << "model.conv_width = " << model.conv_width << "\n"
     << "model.mlp = " << (model.mlp ? 1 : 0) << "\n"
     << "model.mlp_expansion = " << model.mlp_expansion << "\n"
     << "model.max_gradient = " << model.max_gradient << "\n"
     << "train.steps = " << steps << "\n"
     << "train.batch_tokens = " << batch_tokens << "\n"
     << "train.lr = " << optim.lr << "\n"
     << "train.min_lr = " << optim.min_lr << "\n"
     << "train.beta1 = " << optim.beta1 << "\n"
     << "train.beta2 = " << optim.beta2 << "\n"
     << "train.weight_decay = " << optim.weight_decay << "\n"
     << "train.grad_clip = " << optim.grad_clip << "\n"
     << "train.warmup_steps = " << optim.warmup_steps << "\n"
     << "train.checkpoint_every = " << checkpoint_every << "\n"
     << "train.log_every = " << log_every << "\n"
     << "curriculum.warmup_steps = " << controller.warmup_steps << "\n"
     << "curriculum.candidates = " << controller.num_candidates << "\n"
     << "curriculum.top_k = " << controller.top_k << "\n"
     << "curriculum.history_cap = " << controller.history_cap << "\n"
     << "curriculum.reward_sensitivity = " << controller.reward.sensitivity << "\n"
     << "curriculum.reward_sign = " << controller.reward.sign << "\n"
     << "curriculum.reward_layers = " << controller.model.num_layers << "\n"
     << "curriculum.reward_hidden = " << controller.model.hidden << "\n"
     << "curriculum.refit_steps = " << controller.model.fit_steps << "\n"
     << "curriculum.reward_lr = " << controller.model.optim.lr << "\n"
     << "curriculum.eval_sequences = " << eval_sequences << "\n"
     << "corpus = " << corpus << "\n"
     << "out_dir = " << out_dir << "\n"
     << "memory_limit_mb = " << memory_limit_mb << "\n"
     << "threads = " << threads << "\n";
  return os.str();
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace birdie

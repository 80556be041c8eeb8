#pragma once

// key = value configuration for the curriculum simulator.
//
//   seed = 3
//   grid = desk            # or paper; or classes = 0,0,1,2,...
//   dominant = 5           # or random
//   self_rate = 0.1
//   dominant_rate = 3.0
//   transfer.0 = 0.1,0,0   # explicit rows replace the dominant-arm matrix
//   eta = 1.5e-4
//   steps = 20000
//   baseline = 1
//   curriculum.reward_hidden = 64   # any curriculum.* key from run configs

#include <fstream>
#include <sstream>

#include "birdie/config.hpp"
#include "birdie/curriculum.hpp"

namespace birdie {

struct SimRunConfig {
  std::uint64_t seed = 0;
  std::uint64_t controller_seed = 0;
  bool has_controller_seed = false;
  std::string grid = "desk";
  std::vector<std::size_t> class_of;  // overrides grid when set
  std::optional<std::size_t> dominant;
  double self_rate = 0.1, dominant_rate = 3.0;
  std::map<std::size_t, std::vector<double>> transfer_rows;
  std::optional<double> eta, noise, eval_noise, floor, initial;
  std::size_t steps = 20000;
  bool baseline = false;
  ControllerConfig controller;

  ClassMap classes() const {
    if (!class_of.empty()) return ClassMap(class_of);
    if (grid == "desk") return ClassMap::from_configs(desk_grid());
    if (grid == "paper") return ClassMap::from_configs(paper_grid());
    throw Error("sim config: grid must be desk or paper, got '" + grid + "'");
  }

  std::size_t dominant_index(std::size_t n) const {
    if (dominant) {
      if (*dominant >= n) throw Error("sim config: dominant index out of range");
      return *dominant;
    }
    Rng r(seed * 7 + 1);
    return r.index(n);
  }

  SimDynamics dynamics() const {
    const std::size_t n = classes().size();
    SimDynamics d = dominant_arm_dynamics(n, dominant_index(n), self_rate, dominant_rate);
    if (!transfer_rows.empty()) {
      if (transfer_rows.size() != n) throw Error("sim config: need a transfer row for every configuration");
      for (const auto& [i, row] : transfer_rows) {
        if (i >= n || row.size() != n) throw Error("sim config: transfer." + std::to_string(i) + " must have " + std::to_string(n) + " entries");
        d.transfer[i] = row;
      }
    }
    if (eta) d.eta = *eta;
    if (noise) d.noise = *noise;
    if (eval_noise) d.eval_noise = *eval_noise;
    if (floor) d.floor.assign(n, *floor);
    if (initial) d.initial.assign(n, *initial);
    d.validate();
    return d;
  }
};

inline void apply_sim_setting(SimRunConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  const auto doubles = [&] {
    std::vector<double> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_double(key, trim(item)));
    return out;
  };
  if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "controller_seed") { c.controller_seed = parse_u64(key, v); c.has_controller_seed = true; }
  else if (key == "grid") c.grid = v;
  else if (key == "classes") {
    c.class_of.clear();
    for (const double x : doubles()) {
      if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x))) throw Error("sim config: classes must be nonnegative integers");
      c.class_of.push_back(static_cast<std::size_t>(x));
    }
  }
  else if (key == "dominant") {
    if (v == "random") c.dominant.reset();
    else c.dominant = parse_u64(key, v);
  }
  else if (key == "self_rate") c.self_rate = parse_double(key, v);
  else if (key == "dominant_rate") c.dominant_rate = parse_double(key, v);
  else if (key.rfind("transfer.", 0) == 0) c.transfer_rows[parse_u64(key, key.substr(9))] = doubles();
  else if (key == "eta") c.eta = parse_double(key, v);
  else if (key == "noise") c.noise = parse_double(key, v);
  else if (key == "eval_noise") c.eval_noise = parse_double(key, v);
  else if (key == "floor") c.floor = parse_double(key, v);
  else if (key == "initial") c.initial = parse_double(key, v);
  else if (key == "steps") c.steps = parse_u64(key, v);
  else if (key == "baseline") c.baseline = parse_bool(key, v);
  else if (key.rfind("curriculum.", 0) == 0 && key != "curriculum.eval_sequences") {
    RunConfig scratch;
    scratch.controller = c.controller;
    apply_setting(scratch, key, v);
    c.controller = scratch.controller;
  } else {
    throw Error("sim config: unknown key '" + key +
                "' (known: seed, controller_seed, grid, classes, dominant, self_rate, dominant_rate, transfer.<i>, eta, "
                "noise, eval_noise, floor, initial, steps, baseline, curriculum.*)");
  }
}

inline SimRunConfig parse_sim_config_text(const std::string& text, const std::string& origin = "<sim config>") {
  SimRunConfig c;
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
      apply_sim_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!c.has_controller_seed) c.controller_seed = 1000 + c.seed;
  return c;
}

inline SimRunConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sim config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  SimRunConfig c = parse_sim_config_text(ss.str(), path);
  if (const char* s = std::getenv("BIRDIE_SEED"); s && *s) {
    c.seed = detail::parse_u64("BIRDIE_SEED", s);
    if (!c.has_controller_seed) c.controller_seed = 1000 + c.seed;
  }
  c.dynamics();  // validates
  return c;
}

}  // namespace birdie

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcomp/channel/channel.hpp"
#include "dcomp/env/policy.hpp"
#include "dcomp/filter/estimator.hpp"
#include "dcomp/gru/train.hpp"

namespace dcomp::harness {

using json = nlohmann::json;

// ------------------------------------------------------------------ sections

struct CollectConfig {
  int episodes = 200;
  std::string out = "dataset.txt";
};

struct TrainConfig {
  std::string dataset = "dataset.txt";
  std::string out = "model.json";
  std::string loss_curve;  // default: <out>.loss.txt
  gru::TrainSpec spec;
};

struct FilterSettings {
  double rho = filter::kDefaultRho;
  double naive_damping = filter::kDefaultNaiveDamping;
  double p0_scale = 1.0;
  double process_var_floor = filter::kDefaultProcessVarFloor;
  std::vector<double> naive_process_var;  // used when no model is loaded
};

enum class DelayFamily { Constant, Uniform, Geometric };

struct ScheduleEntry {
  std::int64_t from_stamp = 0;
  int delay = 0;
};

struct ChannelSettings {
  DelayFamily family = DelayFamily::Constant;
  int uniform_spread = 2;  // Uniform: delay d is drawn from [d - spread, d + spread] clipped at 0
  channel::OrderPolicy order = channel::OrderPolicy::Clamp;
  channel::LossKind loss = channel::LossKind::Bernoulli;
  double burst_enter = 0.05;
  double burst_exit = 0.5;
  std::vector<ScheduleEntry> schedule;  // later segments with their own nominal delay

  channel::DelayModel model_for(int d) const {
    switch (family) {
      case DelayFamily::Constant: return channel::DelayModel::constant(d);
      case DelayFamily::Uniform:
        return channel::DelayModel::uniform(std::max(0, d - uniform_spread), d + uniform_spread);
      case DelayFamily::Geometric:
        return d == 0 ? channel::DelayModel::constant(0) : channel::DelayModel::geometric(d);
    }
    return channel::DelayModel::constant(d);
  }

  channel::ChannelConfig build(int delay, double loss_prob, std::uint64_t seed) const {
    channel::ChannelConfig c;
    c.delay = model_for(delay);
    for (const auto& s : schedule) c.schedule.push_back({s.from_stamp, model_for(s.delay)});
    c.loss_prob = loss_prob;
    c.loss_kind = loss;
    c.burst_enter = burst_enter;
    c.burst_exit = burst_exit;
    c.order = order;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct SweepSettings {
  std::string model;
  std::string out = "results.csv";
  std::string trace_out;  // optional: trace of the first episode of the first cell
  std::vector<int> delays{0};
  std::vector<double> loss_probs{0.0};
  std::vector<double> noise_fracs{0.0};
  std::vector<filter::EstimatorMode> modes{filter::EstimatorMode::GruKalman};
  std::vector<std::uint64_t> seeds{0};
  int episodes_per_seed = 1;
  int warmup = 0;
  bool timing = false;
};

struct BenchSettings {
  std::string model;  // optional; a random model of the given size otherwise
  std::string out;
  int state_dim = 32;
  int hidden_dim = 64;
  std::vector<int> depths{0, 6, 12};
  int calls = 10000;
  int warmup_calls = 200;
  std::uint64_t seed = 0;
};

struct ReplaySettings {
  std::string trace;
  std::string model;
  std::string out;
  std::vector<filter::EstimatorMode> modes{filter::EstimatorMode::GruKalman};
};

struct RunConfig {
  env::EnvSpec env;
  env::PolicyGains policy;
  CollectConfig collect;
  TrainConfig train;
  FilterSettings filter;
  ChannelSettings channel;
  SweepSettings sweep;
  BenchSettings bench;
  ReplaySettings replay;
  std::int64_t seed_offset = 0;

  /// Adds `offset` to every seed in the configuration.
  void apply_seed_offset(std::int64_t offset) {
    seed_offset += offset;
    const auto o = static_cast<std::uint64_t>(offset);
    env.seed += o;
    train.spec.seed += o;
    bench.seed += o;
    for (auto& s : sweep.seeds) s += o;
  }
};

// ------------------------------------------------------------------- parsing

namespace detail {

// Typed access to one JSON object with path-qualified diagnostics and a
// check that every key present was understood.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void mark(const std::string& key) { seen_.insert(key); }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline filter::EstimatorMode mode_from(const std::string& s, const std::string& where) {
  auto m = filter::parse_mode(s);
  if (!m) {
    throw ConfigError(where + ": unknown mode '" + s +
                      "' (GruKalman, NaiveKalman, GruOnly, NoCompensation)");
  }
  return *m;
}

inline std::vector<filter::EstimatorMode> modes_from(Section& s, const std::string& key,
                                                     std::vector<filter::EstimatorMode> dflt) {
  std::vector<std::string> names;
  s.get(key, names);
  if (names.empty()) return dflt;
  std::vector<filter::EstimatorMode> out;
  for (const auto& n : names) out.push_back(mode_from(n, s.path(key)));
  return out;
}

inline void parse_env(const json& j, env::EnvSpec& e) {
  Section s(j, "env");
  std::string kind = std::string(env::to_string(e.kind));
  s.get("kind", kind);
  auto k = env::parse_env_kind(kind);
  if (!k) {
    throw ConfigError("env.kind: unknown environment '" + kind +
                      "' (DoubleIntegratorRendezvous, UnicyclePursuit, SpreadLite)");
  }
  e.kind = *k;
  s.get("n_agents", e.n_agents);
  s.get("dt", e.dt);
  s.get("episode_len", e.episode_len);
  s.get("obs_noise_frac", e.obs_noise_frac);
  s.get("seed", e.seed);
  s.get("arena", e.arena);
  s.get("spawn_radius", e.spawn_radius);
  s.get("min_separation", e.min_separation);
  s.get("max_accel", e.max_accel);
  s.get("max_turn_rate", e.max_turn_rate);
  s.get("min_speed", e.min_speed);
  s.get("max_speed", e.max_speed);
  s.finish();
  e.validate();
}

inline void parse_policy(const json& j, env::PolicyGains& g) {
  Section s(j, "policy");
  s.get("kp", g.kp);
  s.get("kd", g.kd);
  s.get("repulse", g.repulse);
  s.get("safe_dist", g.safe_dist);
  s.get("orbit_radius", g.orbit_radius);
  s.get("orbit_speed", g.orbit_speed);
  s.get("orbit_radial", g.orbit_radial);
  s.get("heading", g.heading);
  s.get("speed", g.speed);
  s.get("gap_speed", g.gap_speed);
  s.get("max_lead", g.max_lead);
  s.finish();
}

inline void parse_collect(const json& j, CollectConfig& c) {
  Section s(j, "collect");
  s.get("episodes", c.episodes);
  s.get("out", c.out);
  s.finish();
  if (c.episodes < 0) throw ConfigError("collect.episodes must be >= 0");
}

inline void parse_train(const json& j, TrainConfig& c) {
  Section s(j, "train");
  s.get("dataset", c.dataset);
  s.get("out", c.out);
  s.get("loss_curve", c.loss_curve);
  s.get("epochs", c.spec.epochs);
  s.get("learning_rate", c.spec.learning_rate);
  s.get("batch_size", c.spec.batch_size);
  s.get("truncation_length", c.spec.truncation_length);
  s.get("hidden_dim", c.spec.hidden_dim);
  s.get("validation_fraction", c.spec.validation_fraction);
  s.get("seed", c.spec.seed);
  s.finish();
  try {
    c.spec.validate();
  } catch (const UsageError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

inline void parse_filter(const json& j, FilterSettings& f) {
  Section s(j, "filter");
  s.get("rho", f.rho);
  s.get("naive_damping", f.naive_damping);
  s.get("p0_scale", f.p0_scale);
  s.get("process_var_floor", f.process_var_floor);
  s.get("naive_process_var", f.naive_process_var);
  s.finish();
  if (!(f.rho > 0.0)) throw ConfigError("filter.rho must be > 0");
  if (!(f.naive_damping > 0.0 && f.naive_damping <= 1.0))
    throw ConfigError("filter.naive_damping must lie in (0, 1]");
  if (!(f.p0_scale > 0.0)) throw ConfigError("filter.p0_scale must be > 0");
  if (!(f.process_var_floor > 0.0)) throw ConfigError("filter.process_var_floor must be > 0");
  for (double q : f.naive_process_var)
    if (!(q > 0.0)) throw ConfigError("filter.naive_process_var entries must be > 0");
}

inline void parse_channel(const json& j, ChannelSettings& c) {
  Section s(j, "channel");
  std::string fam = "constant", order = "clamp", loss = "bernoulli";
  s.get("delay_model", fam);
  s.get("uniform_spread", c.uniform_spread);
  s.get("order", order);
  s.get("loss_model", loss);
  s.get("burst_enter", c.burst_enter);
  s.get("burst_exit", c.burst_exit);
  if (fam == "constant") c.family = DelayFamily::Constant;
  else if (fam == "uniform") c.family = DelayFamily::Uniform;
  else if (fam == "geometric") c.family = DelayFamily::Geometric;
  else throw ConfigError("channel.delay_model: expected constant, uniform or geometric");
  if (order == "clamp") c.order = channel::OrderPolicy::Clamp;
  else if (order == "drop_late") c.order = channel::OrderPolicy::DropLate;
  else throw ConfigError("channel.order: expected clamp or drop_late");
  if (loss == "bernoulli") c.loss = channel::LossKind::Bernoulli;
  else if (loss == "burst") c.loss = channel::LossKind::Burst;
  else throw ConfigError("channel.loss_model: expected bernoulli or burst");
  if (c.uniform_spread < 0) throw ConfigError("channel.uniform_spread must be >= 0");
  if (s.has("schedule")) {
    const json& arr = s.child("schedule");
    if (!arr.is_array()) throw ConfigError("channel.schedule: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section e(arr[i], "channel.schedule[" + std::to_string(i) + "]");
      ScheduleEntry entry;
      e.get("from_stamp", entry.from_stamp);
      e.get("delay", entry.delay);
      e.finish();
      if (entry.delay < 0) throw ConfigError(e.path("delay") + " must be >= 0");
      c.schedule.push_back(entry);
    }
  }
  s.finish();
}

inline void parse_sweep(const json& j, SweepSettings& w) {
  Section s(j, "sweep");
  s.get("model", w.model);
  s.get("out", w.out);
  s.get("trace_out", w.trace_out);
  s.get("delays", w.delays);
  s.get("loss_probs", w.loss_probs);
  s.get("noise_fracs", w.noise_fracs);
  w.modes = modes_from(s, "modes", w.modes);
  s.get("seeds", w.seeds);
  s.get("episodes_per_seed", w.episodes_per_seed);
  s.get("warmup", w.warmup);
  s.get("timing", w.timing);
  s.finish();
  if (w.delays.empty() || w.loss_probs.empty() || w.noise_fracs.empty() || w.modes.empty() ||
      w.seeds.empty()) {
    throw ConfigError("sweep: delays, loss_probs, noise_fracs, modes and seeds must be non-empty");
  }
  if (w.episodes_per_seed < 1) throw ConfigError("sweep.episodes_per_seed must be >= 1");
  if (w.warmup < 0) throw ConfigError("sweep.warmup must be >= 0");
  for (int d : w.delays)
    if (d < 0) throw ConfigError("sweep.delays entries must be >= 0");
  for (double p : w.loss_probs)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("sweep.loss_probs entries must lie in [0, 1]");
  for (double f : w.noise_fracs)
    if (!(f >= 0.0)) throw ConfigError("sweep.noise_fracs entries must be >= 0");
}

inline void parse_bench(const json& j, BenchSettings& b) {
  Section s(j, "bench");
  s.get("model", b.model);
  s.get("out", b.out);
  s.get("state_dim", b.state_dim);
  s.get("hidden_dim", b.hidden_dim);
  s.get("depths", b.depths);
  s.get("calls", b.calls);
  s.get("warmup_calls", b.warmup_calls);
  s.get("seed", b.seed);
  s.finish();
  if (b.state_dim < 1 || b.hidden_dim < 1) throw ConfigError("bench: dimensions must be >= 1");
  if (b.calls < 1 || b.warmup_calls < 0) throw ConfigError("bench: calls must be >= 1");
  if (b.depths.empty()) throw ConfigError("bench.depths must be non-empty");
  for (int d : b.depths)
    if (d < 0) throw ConfigError("bench.depths entries must be >= 0");
}

inline void parse_replay(const json& j, ReplaySettings& r) {
  Section s(j, "replay");
  s.get("trace", r.trace);
  s.get("model", r.model);
  s.get("out", r.out);
  r.modes = modes_from(s, "modes", r.modes);
  s.finish();
}

}  // namespace detail

/// Parses a configuration document. Missing keys keep their defaults;
/// unknown keys and wrong types are configuration errors.
inline RunConfig parse_config(const json& j) {
  RunConfig c;
  detail::Section top(j, "config");
  if (top.has("env")) detail::parse_env(top.child("env"), c.env);
  if (top.has("policy")) detail::parse_policy(top.child("policy"), c.policy);
  if (top.has("collect")) detail::parse_collect(top.child("collect"), c.collect);
  if (top.has("train")) detail::parse_train(top.child("train"), c.train);
  if (top.has("filter")) detail::parse_filter(top.child("filter"), c.filter);
  if (top.has("channel")) detail::parse_channel(top.child("channel"), c.channel);
  if (top.has("sweep")) detail::parse_sweep(top.child("sweep"), c.sweep);
  if (top.has("bench")) detail::parse_bench(top.child("bench"), c.bench);
  if (top.has("replay")) detail::parse_replay(top.child("replay"), c.replay);
  top.finish();
  if (c.train.loss_curve.empty()) c.train.loss_curve = c.train.out + ".loss.txt";
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ------------------------------------------------------------------ echoing

inline const char* family_name(DelayFamily f) {
  switch (f) {
    case DelayFamily::Constant: return "constant";
    case DelayFamily::Uniform: return "uniform";
    case DelayFamily::Geometric: return "geometric";
  }
  return "?";
}

/**
 * The settings that determine sweep results, with every default filled in.
 * Output paths are left out so the same experiment written to two places
 * produces identical files.
 */
inline json resolved_sweep_json(const RunConfig& c) {
  json e = {{"kind", std::string(env::to_string(c.env.kind))},
            {"n_agents", c.env.n_agents},
            {"dt", c.env.dt},
            {"episode_len", c.env.episode_len},
            {"obs_noise_frac", c.env.obs_noise_frac},
            {"seed", c.env.seed},
            {"arena", c.env.arena},
            {"spawn_radius", c.env.spawn_radius},
            {"min_separation", c.env.min_separation},
            {"max_accel", c.env.max_accel},
            {"max_turn_rate", c.env.max_turn_rate},
            {"min_speed", c.env.min_speed},
            {"max_speed", c.env.max_speed}};
  const auto& g = c.policy;
  json p = {{"kp", g.kp},           {"kd", g.kd},
            {"repulse", g.repulse}, {"safe_dist", g.safe_dist},
            {"orbit_radius", g.orbit_radius}, {"orbit_speed", g.orbit_speed},
            {"orbit_radial", g.orbit_radial}, {"heading", g.heading},
            {"speed", g.speed},     {"gap_speed", g.gap_speed},
            {"max_lead", g.max_lead}};
  json f = {{"rho", c.filter.rho},
            {"naive_damping", c.filter.naive_damping},
            {"p0_scale", c.filter.p0_scale},
            {"process_var_floor", c.filter.process_var_floor},
            {"naive_process_var", c.filter.naive_process_var}};
  json sched = json::array();
  for (const auto& s : c.channel.schedule) sched.push_back({{"from_stamp", s.from_stamp}, {"delay", s.delay}});
  json ch = {{"delay_model", family_name(c.channel.family)},
             {"uniform_spread", c.channel.uniform_spread},
             {"order", c.channel.order == channel::OrderPolicy::Clamp ? "clamp" : "drop_late"},
             {"loss_model", c.channel.loss == channel::LossKind::Bernoulli ? "bernoulli" : "burst"},
             {"burst_enter", c.channel.burst_enter},
             {"burst_exit", c.channel.burst_exit},
             {"schedule", sched}};
  std::vector<std::string> modes;
  for (auto m : c.sweep.modes) modes.emplace_back(filter::to_string(m));
  json sw = {{"model", c.sweep.model},
             {"delays", c.sweep.delays},
             {"loss_probs", c.sweep.loss_probs},
             {"noise_fracs", c.sweep.noise_fracs},
             {"modes", modes},
             {"seeds", c.sweep.seeds},
             {"episodes_per_seed", c.sweep.episodes_per_seed},
             {"warmup", c.sweep.warmup},
             {"timing", c.sweep.timing}};
  return {{"env", e}, {"policy", p}, {"filter", f}, {"channel", ch}, {"sweep", sw},
          {"seed_offset", c.seed_offset}};
}

}  // namespace dcomp::harness

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "purl/data.hpp"
#include "purl/dqn.hpp"
#include "purl/driver.hpp"
#include "purl/env.hpp"
#include "purl/errors.hpp"

namespace purl {

// Network being pruned and how it is pretrained before the pruning run.
struct ModelConfig {
  std::vector<std::size_t> hidden{64, 64, 64, 64, 64};
  std::size_t pretrain_epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

struct DataConfig {
  SyntheticSpec synthetic;
  bool seed_from_run = true;       // synthetic.seed follows the run seed unless set explicitly
  std::optional<std::string> dir;  // load IDX files written by gen-data instead of generating
};

// Everything a run needs. The JSON layout has one object per section and
// mirrors these structs field for field; unknown keys are rejected.
struct HarnessConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  EnvConfig env;
  // T_A is relative_target_accuracy * pre-prune accuracy unless env.target_accuracy is pinned.
  std::optional<double> relative_target_accuracy = 0.95;
  double action_step = 0.1;
  double max_alpha = 2.2;
  AgentConfig agent;
  DriverConfig driver;
  bool iterative = false;

  void validate() const {
    if (relative_target_accuracy && !(*relative_target_accuracy > 0.0 && *relative_target_accuracy <= 1.0)) {
      throw ConfigError("relative_target_accuracy must lie in (0, 1]");
    }
    if (model.batch_size == 0 || !(model.lr > 0.0)) throw ConfigError("model lr and batch size must be positive");
    data.synthetic.validate();
    env.validate();
    agent.validate();
    driver.validate();
  }
};

// splitmix64 finaliser over (seed, stream): independent seeds per subsystem.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {

template <class E>
struct EnumName {
  E value;
  const char* name;
};

inline constexpr EnumName<RewardVariant> kRewardVariants[] = {
    {RewardVariant::r1, "r1"}, {RewardVariant::r2, "r2"}, {RewardVariant::r3, "r3"}};
inline constexpr EnumName<SignConvention> kSigns[] = {
    {SignConvention::as_printed, "as_printed"}, {SignConvention::prose_corrected, "prose_corrected"}};
inline constexpr EnumName<RewardMode> kRewardModes[] = {{RewardMode::dense, "dense"}, {RewardMode::sparse, "sparse"}};
inline constexpr EnumName<StateKind> kStateKinds[] = {{StateKind::low, "low"}, {StateKind::high, "high"}};
inline constexpr EnumName<PruneRule> kPruneRules[] = {{PruneRule::std_dev, "std"}, {PruneRule::magnitude, "magnitude"}};
inline constexpr EnumName<QOptimizer> kOptimizers[] = {{QOptimizer::sgd, "sgd"}, {QOptimizer::adam, "adam"}};
inline constexpr EnumName<Stage2Rule> kStage2Rules[] = {{Stage2Rule::average, "average"}, {Stage2Rule::best, "best"}};
inline constexpr EnumName<Generator> kGenerators[] = {
    {Generator::gaussian_blobs, "gaussian_blobs"}, {Generator::spirals, "spirals"}};

template <class E, std::size_t N>
const char* enum_name(E v, const EnumName<E> (&table)[N]) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <class E, std::size_t N>
E enum_value(const std::string& s, const EnumName<E> (&table)[N], const std::string& key) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError("invalid value '" + s + "' for " + key + " (allowed: " + allowed + ")");
}

// Reads keys from one JSON object and rejects any it did not consume.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <class T>
  bool get(const char* key, T& out) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
    return true;
  }

  template <class T>
  bool get_optional(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return false;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return true;
    }
    T v{};
    get(key, v);
    out = v;
    return true;
  }

  template <class E, std::size_t N>
  bool get_enum(const char* key, E& out, const EnumName<E> (&table)[N]) {
    std::string s;
    if (!get(key, s)) return false;
    out = enum_value(s, table, path(key));
    return true;
  }

  const nlohmann::json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + path(item.key()) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline HarnessConfig config_from_json(const nlohmann::json& j) {
  using namespace detail;
  HarnessConfig c;
  ObjectReader root(j, "config");
  root.get("run_id", c.run_id);
  root.get("seed", c.seed);
  root.get("iterative", c.iterative);

  if (const auto* d = root.child("data")) {
    ObjectReader r(*d, "config.data");
    r.get_enum("generator", c.data.synthetic.generator, kGenerators);
    r.get("classes", c.data.synthetic.classes);
    r.get("features", c.data.synthetic.features);
    r.get("train", c.data.synthetic.train);
    r.get("test", c.data.synthetic.test);
    r.get("noise", c.data.synthetic.noise);
    std::optional<std::uint64_t> seed;
    if (r.get_optional("seed", seed) && seed) {
      c.data.synthetic.seed = *seed;
      c.data.seed_from_run = false;
    }
    r.get_optional("dir", c.data.dir);
    r.finish();
  }
  if (const auto* m = root.child("model")) {
    ObjectReader r(*m, "config.model");
    r.get("hidden", c.model.hidden);
    r.get("pretrain_epochs", c.model.pretrain_epochs);
    r.get("lr", c.model.lr);
    r.get("batch_size", c.model.batch_size);
    r.finish();
  }
  bool grid_given = false;
  if (const auto* e = root.child("env")) {
    ObjectReader r(*e, "config.env");
    std::optional<double> ta;
    if (r.get_optional("target_accuracy", ta) && ta) {
      c.env.target_accuracy = *ta;
      c.relative_target_accuracy.reset();
    }
    r.get_optional("relative_target_accuracy", c.relative_target_accuracy);
    r.get("target_sparsity", c.env.target_sparsity);
    r.get("beta", c.env.beta);
    r.get("action_step", c.action_step);
    r.get("max_alpha", c.max_alpha);
    grid_given = r.get("action_grid", c.env.action_grid);
    r.get_enum("reward_variant", c.env.reward_variant, kRewardVariants);
    r.get_enum("r2r3_sign", c.env.r2r3_sign, kSigns);
    r.get_enum("reward_mode", c.env.reward_mode, kRewardModes);
    r.get_enum("state_kind", c.env.state_kind, kStateKinds);
    r.get_enum("prune_rule", c.env.prune_rule, kPruneRules);
    r.get("retrain_subset_size", c.env.retrain_subset_size);
    r.get("retrain_epochs", c.env.retrain_epochs);
    r.get("retrain_lr", c.env.retrain.lr);
    r.get("retrain_batch_size", c.env.retrain.batch_size);
    r.get_optional("early_stop_threshold", c.env.early_stop_threshold);
    r.finish();
  }
  if (!grid_given) c.env.action_grid = make_action_grid(c.action_step, c.max_alpha);
  if (const auto* a = root.child("agent")) {
    ObjectReader r(*a, "config.agent");
    r.get("gamma", c.agent.gamma);
    r.get("epsilon_start", c.agent.epsilon_start);
    r.get("epsilon_end", c.agent.epsilon_end);
    r.get("epsilon_decay_steps", c.agent.epsilon_decay_steps);
    r.get("replay_capacity", c.agent.replay_capacity);
    r.get("batch_size", c.agent.batch_size);
    r.get("target_sync_interval", c.agent.target_sync_interval);
    r.get("updates_per_step", c.agent.updates_per_step);
    r.get("learning_rate", c.agent.learning_rate);
    r.get("hidden_sizes", c.agent.hidden_sizes);
    r.get_enum("optimizer", c.agent.optimizer, kOptimizers);
    r.finish();
  }
  if (const auto* d = root.child("driver")) {
    ObjectReader r(*d, "config.driver");
    r.get("max_episodes", c.driver.max_episodes);
    r.get("stage2_rollouts", c.driver.stage2_rollouts);
    r.get("fine_tune_epochs", c.driver.fine_tune_epochs);
    r.get("fine_tune_lr", c.driver.fine_tune_lr);
    r.get("fine_tune_batch_size", c.driver.fine_tune_batch);
    r.get_enum("stage2_rule", c.driver.stage2_rule, kStage2Rules);
    if (const auto* s = r.child("schedule")) {
      if (!s->is_array()) throw ConfigError("config.driver.schedule must be an array");
      c.driver.schedule.clear();
      for (const auto& item : *s) {
        ObjectReader rr(item, "config.driver.schedule[]");
        Round round;
        rr.get("target_sparsity", round.target_sparsity);
        rr.get("max_episodes", round.max_episodes);
        rr.finish();
        c.driver.schedule.push_back(round);
      }
    }
    r.finish();
  }
  root.finish();
  c.driver.seed = c.seed;
  if (c.data.seed_from_run) c.data.synthetic.seed = c.seed;
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const HarnessConfig& c) {
  using namespace detail;
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& r : c.driver.schedule) {
    schedule.push_back({{"target_sparsity", r.target_sparsity}, {"max_episodes", r.max_episodes}});
  }
  nlohmann::json env = {
      {"target_sparsity", c.env.target_sparsity},
      {"beta", c.env.beta},
      {"action_step", c.action_step},
      {"max_alpha", c.max_alpha},
      {"action_grid", c.env.action_grid},
      {"reward_variant", enum_name(c.env.reward_variant, kRewardVariants)},
      {"r2r3_sign", enum_name(c.env.r2r3_sign, kSigns)},
      {"reward_mode", enum_name(c.env.reward_mode, kRewardModes)},
      {"state_kind", enum_name(c.env.state_kind, kStateKinds)},
      {"prune_rule", enum_name(c.env.prune_rule, kPruneRules)},
      {"retrain_subset_size", c.env.retrain_subset_size},
      {"retrain_epochs", c.env.retrain_epochs},
      {"retrain_lr", c.env.retrain.lr},
      {"retrain_batch_size", c.env.retrain.batch_size},
      {"early_stop_threshold", c.env.early_stop_threshold ? nlohmann::json(*c.env.early_stop_threshold) : nlohmann::json()},
  };
  if (c.relative_target_accuracy) {
    env["relative_target_accuracy"] = *c.relative_target_accuracy;
  } else {
    env["target_accuracy"] = c.env.target_accuracy;
  }
  nlohmann::json data = {
      {"generator", enum_name(c.data.synthetic.generator, kGenerators)},
      {"classes", c.data.synthetic.classes},
      {"features", c.data.synthetic.features},
      {"train", c.data.synthetic.train},
      {"test", c.data.synthetic.test},
      {"noise", c.data.synthetic.noise},
  };
  if (!c.data.seed_from_run) data["seed"] = c.data.synthetic.seed;
  if (c.data.dir) data["dir"] = *c.data.dir;
  return {
      {"run_id", c.run_id},
      {"seed", c.seed},
      {"iterative", c.iterative},
      {"data", data},
      {"model",
       {{"hidden", c.model.hidden},
        {"pretrain_epochs", c.model.pretrain_epochs},
        {"lr", c.model.lr},
        {"batch_size", c.model.batch_size}}},
      {"env", env},
      {"agent",
       {{"gamma", c.agent.gamma},
        {"epsilon_start", c.agent.epsilon_start},
        {"epsilon_end", c.agent.epsilon_end},
        {"epsilon_decay_steps", c.agent.epsilon_decay_steps},
        {"replay_capacity", c.agent.replay_capacity},
        {"batch_size", c.agent.batch_size},
        {"target_sync_interval", c.agent.target_sync_interval},
        {"updates_per_step", c.agent.updates_per_step},
        {"learning_rate", c.agent.learning_rate},
        {"hidden_sizes", c.agent.hidden_sizes},
        {"optimizer", enum_name(c.agent.optimizer, kOptimizers)}}},
      {"driver",
       {{"max_episodes", c.driver.max_episodes},
        {"stage2_rollouts", c.driver.stage2_rollouts},
        {"fine_tune_epochs", c.driver.fine_tune_epochs},
        {"fine_tune_lr", c.driver.fine_tune_lr},
        {"fine_tune_batch_size", c.driver.fine_tune_batch},
        {"stage2_rule", enum_name(c.driver.stage2_rule, kStage2Rules)},
        {"schedule", schedule}}},
  };
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline HarnessConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path));
}

}  // namespace purl

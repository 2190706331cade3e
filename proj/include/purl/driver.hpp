#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "purl/dqn.hpp"
#include "purl/env.hpp"
#include "purl/errors.hpp"
#include "purl/nn.hpp"
#include "purl/pruning.hpp"

namespace purl {

// How the stage-2 greedy rollouts are combined into one alpha vector.
enum class Stage2Rule { average, best };

struct Round {
  double target_sparsity = 0.6;
  std::size_t max_episodes = 55;
};

struct DriverConfig {
  std::size_t max_episodes = 55;
  std::size_t stage2_rollouts = 5;
  std::size_t fine_tune_epochs = 10;
  double fine_tune_lr = 0.05;
  std::size_t fine_tune_batch = 32;
  std::vector<Round> schedule{{0.4, 55}, {0.6, 55}};  // used by run_iterative only
  std::uint64_t seed = 0;
  Stage2Rule stage2_rule = Stage2Rule::average;

  TrainConfig fine_tune_config() const { return {fine_tune_epochs, fine_tune_lr, fine_tune_batch}; }

  void validate() const {
    if (stage2_rollouts == 0) throw ConfigError("stage2_rollouts must be >= 1");
    if (!(fine_tune_lr > 0.0) || fine_tune_batch == 0) {
      throw ConfigError("fine-tune lr and batch size must be positive");
    }
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      if (!(schedule[i].target_sparsity > 0.0 && schedule[i].target_sparsity <= 1.0)) {
        throw ConfigError("schedule sparsity targets must lie in (0, 1]");
      }
      if (i > 0 && !(schedule[i].target_sparsity > schedule[i - 1].target_sparsity)) {
        throw ConfigError("schedule sparsity targets must be strictly increasing");
      }
    }
  }
};

enum class Phase { train, stage2 };

inline const char* to_string(Phase p) { return p == Phase::train ? "train" : "stage2"; }

struct EpisodeLog {
  Phase phase = Phase::train;
  std::size_t round = 0;
  std::size_t episode = 0;  // counted separately per phase and round
  std::vector<StepOutcome> steps;
  double total_reward = 0.0;
};

struct StepEvent {
  Phase phase;
  std::size_t round;
  std::size_t episode;
  std::size_t step;
  const StepOutcome& outcome;
  double ms;
};

using StepSink = std::function<void(const StepEvent&)>;

struct PruneResult {
  Network network;
  std::vector<double> alphas;
  SparsityReport sparsity;
  double baseline_accuracy = 0.0;  // before any pruning
  double pre_finetune_accuracy = 0.0;
  double post_finetune_accuracy = 0.0;
  std::vector<double> finetune_trace;  // test accuracy after each fine-tune epoch
  std::vector<EpisodeLog> episodes;

  std::size_t count_episodes(Phase p) const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.phase == p;
    return n;
  }
};

namespace detail {

inline EpisodeLog run_episode(PruneEnv& env, DqnAgent& agent, ActionMode mode, Phase phase,
                              std::size_t round, std::size_t episode, const StepSink& sink,
                              bool learn) {
  EpisodeLog log{phase, round, episode, {}, 0.0};
  EnvState s = env.reset();
  bool done = false;
  while (!done) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t a = agent.select_action(s, mode);
    StepOutcome out = env.step(a);
    if (learn) {
      agent.observe({s.features, a, out.reward, out.next_state.features, out.done});
      for (std::size_t k = 0; k < agent.config().updates_per_step; ++k) agent.train_step();
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (sink) sink(StepEvent{phase, round, episode, log.steps.size(), out, ms});
    log.total_reward += out.reward;
    done = out.done;
    s = out.next_state;
    log.steps.push_back(std::move(out));
  }
  return log;
}

inline void check_compatible(const PruneEnv& env, const DqnAgent& agent) {
  if (env.state_dim() != agent.state_dim() || env.num_actions() != agent.num_actions()) {
    throw ConfigError("environment state/action sizes (" + std::to_string(env.state_dim()) + ", " +
                      std::to_string(env.num_actions()) + ") do not match the agent (" +
                      std::to_string(agent.state_dim()) + ", " + std::to_string(agent.num_actions()) + ")");
  }
}

}  // namespace detail

// Stage 1: `episodes` exploring episodes with replay updates after every step.
inline std::vector<EpisodeLog> train_agent(PruneEnv& env, DqnAgent& agent, std::size_t episodes,
                                           const StepSink& sink = {}, std::size_t round = 0) {
  detail::check_compatible(env, agent);
  std::vector<EpisodeLog> logs;
  logs.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    logs.push_back(detail::run_episode(env, agent, ActionMode::explore, Phase::train, round, e, sink, true));
  }
  return logs;
}

inline std::vector<EpisodeLog> train_agent(PruneEnv& env, DqnAgent& agent, const DriverConfig& cfg,
                                           const StepSink& sink = {}) {
  return train_agent(env, agent, cfg.max_episodes, sink);
}

// Nearest grid value; exact midpoints go to the smaller alpha.
inline double snap_to_grid(double value, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("empty action grid");
  double best = grid.front();
  double best_d = std::abs(value - best);
  for (double g : grid.subspan(1)) {
    const double d = std::abs(value - g);
    if (d < best_d - 1e-9) {
      best = g;
      best_d = d;
    }
  }
  return best;
}

// Per-layer mean of the rollouts' alphas, snapped to the grid. Layers a
// rollout never reached (early stop) are left out of that layer's mean;
// layers no rollout reached get alpha 0.
inline std::vector<double> average_alphas(std::span<const std::vector<double>> rollouts,
                                          std::size_t layers, std::span<const double> grid) {
  std::vector<double> out(layers, 0.0);
  for (std::size_t l = 0; l < layers; ++l) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rollouts) {
      if (l < r.size()) {
        sum += r[l];
        ++n;
      }
    }
    out[l] = n == 0 ? 0.0 : snap_to_grid(sum / static_cast<double>(n), grid);
  }
  return out;
}

// Stage 2: greedy rollouts (always with dense rewards), combined per
// cfg.stage2_rule and applied once to the pristine network with the same
// prune-then-retrain dynamics as training. The result is not fine-tuned yet.
inline PruneResult prune_with_agent(PruneEnv& env, DqnAgent& agent, const DriverConfig& cfg,
                                    const StepSink& sink = {}, std::size_t round = 0) {
  cfg.validate();
  detail::check_compatible(env, agent);
  const RewardMode training_mode = env.config().reward_mode;
  env.set_reward_mode(RewardMode::dense);
  PruneResult result;
  std::vector<std::vector<double>> alphas;
  std::size_t best = 0;
  double best_reward = 0.0;
  for (std::size_t e = 0; e < cfg.stage2_rollouts; ++e) {
    EpisodeLog log = detail::run_episode(env, agent, ActionMode::greedy, Phase::stage2, round, e, sink, false);
    std::vector<double> a;
    for (const auto& s : log.steps) a.push_back(s.info.alpha);
    alphas.push_back(std::move(a));
    const double terminal = log.steps.back().reward;
    if (e == 0 || terminal > best_reward) {
      best = e;
      best_reward = terminal;
    }
    result.episodes.push_back(std::move(log));
  }

  const std::size_t layers = env.num_layers();
  if (cfg.stage2_rule == Stage2Rule::average) {
    result.alphas = average_alphas(alphas, layers, env.config().action_grid);
  } else {
    result.alphas = alphas[best];
    result.alphas.resize(layers, 0.0);
  }
  result.network = env.apply_alphas(result.alphas);
  env.set_reward_mode(training_mode);
  result.sparsity = sparsity_report(result.network);
  result.baseline_accuracy = env.baseline_accuracy();
  result.pre_finetune_accuracy = evaluate_accuracy(result.network, env.data().test);
  result.post_finetune_accuracy = result.pre_finetune_accuracy;
  return result;
}

// Full-train-split retraining with masks enforced; returns test accuracy per epoch.
inline std::vector<double> fine_tune(Network& net, const DataSplits& data, const TrainConfig& cfg,
                                     std::mt19937_64& rng) {
  std::vector<double> trace;
  TrainConfig one = cfg;
  one.epochs = 1;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    retrain(net, data, Split::train, one, rng);
    trace.push_back(evaluate_accuracy(net, data.test));
  }
  return trace;
}

inline std::uint64_t fine_tune_seed(const DriverConfig& cfg, std::size_t round) {
  return cfg.seed * 0x9E3779B97F4A7C15ULL + 0xF1E7 + round;
}

inline void finish_with_fine_tune(PruneResult& result, const DataSplits& data, const DriverConfig& cfg,
                                  std::size_t round) {
  std::mt19937_64 rng(fine_tune_seed(cfg, round));
  result.finetune_trace = fine_tune(result.network, data, cfg.fine_tune_config(), rng);
  if (!result.finetune_trace.empty()) result.post_finetune_accuracy = result.finetune_trace.back();
  result.sparsity = sparsity_report(result.network);
}

// Stage 1 + Stage 2 + fine-tuning for one sparsity target.
inline PruneResult run_purl(PruneEnv& env, DqnAgent& agent, const DriverConfig& cfg,
                            const StepSink& sink = {}, std::size_t round = 0,
                            std::optional<std::size_t> episodes = std::nullopt) {
  cfg.validate();
  auto train_logs = train_agent(env, agent, episodes.value_or(cfg.max_episodes), sink, round);
  PruneResult result = prune_with_agent(env, agent, cfg, sink, round);
  result.episodes.insert(result.episodes.begin(), std::make_move_iterator(train_logs.begin()),
                         std::make_move_iterator(train_logs.end()));
  finish_with_fine_tune(result, env.data(), cfg, round);
  return result;
}

using EnvFactory = std::function<PruneEnv(const Network& pristine, double target_sparsity)>;
using AgentFactory = std::function<DqnAgent(std::size_t state_dim, std::size_t num_actions, std::size_t round)>;

// Gradual targets: each round's fine-tuned network is the next round's pristine
// checkpoint, so masks accumulate across rounds.
inline PruneResult run_iterative(const Network& start, const EnvFactory& make_env,
                                 const AgentFactory& make_agent, const DriverConfig& cfg,
                                 const StepSink& sink = {}) {
  cfg.validate();
  if (cfg.schedule.empty()) throw ConfigError("iterative pruning needs a nonempty schedule");
  Network current = start;
  PruneResult last;
  std::vector<EpisodeLog> all_logs;
  double first_baseline = 0.0;
  for (std::size_t r = 0; r < cfg.schedule.size(); ++r) {
    const Round& round = cfg.schedule[r];
    const double achieved = sparsity_report(current).global;
    if (round.target_sparsity < achieved) {
      throw ConfigError("round " + std::to_string(r) + " target " + std::to_string(round.target_sparsity) +
                        " is below the sparsity already achieved (" + std::to_string(achieved) + ")");
    }
    PruneEnv env = make_env(current, round.target_sparsity);
    DqnAgent agent = make_agent(env.state_dim(), env.num_actions(), r);
    if (r == 0) first_baseline = env.baseline_accuracy();
    last = run_purl(env, agent, cfg, sink, r, round.max_episodes);
    for (auto& log : last.episodes) all_logs.push_back(std::move(log));
    current = last.network;
  }
  last.episodes = std::move(all_logs);
  last.baseline_accuracy = first_baseline;
  return last;
}

// Every layer pruned to the same magnitude-based sparsity, then fine-tuned
// exactly like a PuRL result.
inline PruneResult uniform_baseline(const Network& net, double target_sparsity, const DataSplits& data,
                                    const DriverConfig& cfg, std::size_t round = 0) {
  if (!(target_sparsity >= 0.0 && target_sparsity <= 1.0)) throw ConfigError("target sparsity must lie in [0, 1]");
  PruneResult result;
  result.network = net;
  result.baseline_accuracy = evaluate_accuracy(net, data.test);
  for (auto& layer : result.network.layers) {
    prune_by_magnitude_target(layer, std::max(target_sparsity, layer_sparsity(layer)));
  }
  result.sparsity = sparsity_report(result.network);
  result.pre_finetune_accuracy = evaluate_accuracy(result.network, data.test);
  result.post_finetune_accuracy = result.pre_finetune_accuracy;
  finish_with_fine_tune(result, data, cfg, round);
  return result;
}

}  // namespace purl

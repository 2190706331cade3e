#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "purl/env.hpp"
#include "purl/errors.hpp"
#include "purl/nn.hpp"

namespace purl {

enum class QOptimizer { sgd, adam };

struct AgentConfig {
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_decay_steps = 250;  // linear decay over this many explore steps
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  std::size_t target_sync_interval = 100;  // in train steps
  std::size_t updates_per_step = 1;        // replay minibatches per environment step
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden_sizes{64, 64};
  QOptimizer optimizer = QOptimizer::adam;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
      throw ConfigError("epsilon bounds must lie in [0, 1]");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (replay_capacity < batch_size) throw ConfigError("replay_capacity must be >= batch_size");
    if (target_sync_interval == 0) throw ConfigError("target_sync_interval must be positive");
    if (updates_per_step == 0) throw ConfigError("updates_per_step must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  }
};

struct Transition {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

// Fixed-capacity ring buffer with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
  }

  std::vector<std::size_t> sample_indices(std::size_t batch, std::mt19937_64& rng) const {
    if (items_.size() < batch) throw ConfigError("replay buffer smaller than batch");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = pick(rng);
    return idx;
  }

  const Transition& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

enum class ActionMode { explore, greedy };

class DqnAgent {
 public:
  DqnAgent(std::size_t state_dim, std::size_t num_actions, AgentConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), state_dim_(state_dim), num_actions_(num_actions), rng_(seed),
        buffer_(cfg_.replay_capacity) {
    cfg_.validate();
    if (state_dim == 0 || num_actions == 0) throw ConfigError("agent needs nonzero state and action sizes");
    std::vector<std::size_t> sizes{state_dim};
    sizes.insert(sizes.end(), cfg_.hidden_sizes.begin(), cfg_.hidden_sizes.end());
    sizes.push_back(num_actions);
    online_ = make_mlp(std::span<const std::size_t>(sizes), rng_);
    target_ = online_;
    if (cfg_.optimizer == QOptimizer::adam) adam_.emplace(online_, cfg_.learning_rate);
  }

  std::vector<double> q_values(std::span<const double> state) const { return eval(online_, state); }
  std::vector<double> target_q_values(std::span<const double> state) const { return eval(target_, state); }

  double epsilon() const {
    if (cfg_.epsilon_decay_steps == 0 || explore_steps_ >= cfg_.epsilon_decay_steps) return cfg_.epsilon_end;
    const double frac = static_cast<double>(explore_steps_) / static_cast<double>(cfg_.epsilon_decay_steps);
    return cfg_.epsilon_start + frac * (cfg_.epsilon_end - cfg_.epsilon_start);
  }

  // Greedy picks argmax Q with lowest-index tie-break; explore is epsilon-greedy
  // and advances the epsilon schedule.
  std::size_t select_action(std::span<const double> state, ActionMode mode) {
    check_state(state);
    if (mode == ActionMode::explore) {
      const double eps = epsilon();
      ++explore_steps_;
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      if (coin(rng_) < eps) {
        std::uniform_int_distribution<std::size_t> any(0, num_actions_ - 1);
        return any(rng_);
      }
    }
    const auto q = q_values(state);
    return argmax(q);
  }

  std::size_t select_action(const EnvState& state, ActionMode mode) {
    return select_action(std::span<const double>(state.features), mode);
  }

  void observe(Transition t) {
    check_state(t.state);
    check_state(t.next_state);
    if (t.action >= num_actions_) throw ConfigError("transition action outside the action space");
    buffer_.push(std::move(t));
  }

  // One update on a uniformly sampled minibatch. Returns nullopt while the
  // buffer holds fewer than batch_size transitions.
  std::optional<double> train_step() {
    if (buffer_.size() < cfg_.batch_size) return std::nullopt;
    const auto idx = buffer_.sample_indices(cfg_.batch_size, rng_);
    std::vector<const Transition*> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(&buffer_[i]);
    return train_batch(batch);
  }

  // Mean squared TD error on an explicit batch; y = r + gamma * max Q_target(s') * (1 - done).
  double train_batch(std::span<const Transition* const> batch) {
    const std::size_t b = batch.size();
    if (b == 0) throw ConfigError("empty training batch");
    Matrix states(b, state_dim_);
    Matrix next(b, state_dim_);
    for (std::size_t r = 0; r < b; ++r) {
      std::copy(batch[r]->state.begin(), batch[r]->state.end(), states.row(r).begin());
      std::copy(batch[r]->next_state.begin(), batch[r]->next_state.end(), next.row(r).begin());
    }
    const Matrix next_q = forward(target_, next);
    ForwardCache cache = forward_cached(online_, states);
    const Matrix& q = cache.logits();
    Matrix dq(b, num_actions_);
    double loss = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
      const Transition& t = *batch[r];
      double y = t.reward;
      if (!t.done) {
        auto nq = next_q.row(r);
        y += cfg_.gamma * *std::max_element(nq.begin(), nq.end());
      }
      const double err = q(r, t.action) - y;
      loss += err * err;
      dq(r, t.action) = 2.0 * err / static_cast<double>(b);
    }
    loss /= static_cast<double>(b);
    if (!std::isfinite(loss)) throw NumericError("non-finite TD loss", online_.num_layers() - 1);
    const Gradients g = backward(online_, cache, std::move(dq));
    if (adam_) {
      adam_->step(online_, g);
    } else {
      sgd_step(online_, g, cfg_.learning_rate);
    }
    ++train_steps_;
    if (train_steps_ % cfg_.target_sync_interval == 0) sync_target();
    return loss;
  }

  double train_batch(std::span<const Transition> batch) {
    std::vector<const Transition*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& t : batch) ptrs.push_back(&t);
    return train_batch(std::span<const Transition* const>(ptrs));
  }

  void sync_target() { target_ = online_; }

  // Installs a previously trained Q-network as both online and target.
  void load_online(Network net) {
    net.validate();
    if (net.input_size() != state_dim_ || net.output_size() != num_actions_) {
      throw DimensionError("Q-network shape does not match the agent");
    }
    online_ = std::move(net);
    target_ = online_;
    if (adam_) adam_.emplace(online_, cfg_.learning_rate);
  }

  const Network& online() const noexcept { return online_; }
  Network& online() noexcept { return online_; }
  const Network& target() const noexcept { return target_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  const AgentConfig& config() const noexcept { return cfg_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t num_actions() const noexcept { return num_actions_; }
  std::size_t train_steps() const noexcept { return train_steps_; }
  std::size_t explore_steps() const noexcept { return explore_steps_; }

 private:
  void check_state(std::span<const double> s) const {
    if (s.size() != state_dim_) {
      throw DimensionError("state of size " + std::to_string(s.size()) + " given to agent expecting " +
                           std::to_string(state_dim_));
    }
  }

  std::vector<double> eval(const Network& net, std::span<const double> state) const {
    check_state(state);
    Matrix x(1, state_dim_, std::vector<double>(state.begin(), state.end()));
    const Matrix q = forward(net, x);
    return {q.values().begin(), q.values().end()};
  }

  AgentConfig cfg_;
  std::size_t state_dim_;
  std::size_t num_actions_;
  std::mt19937_64 rng_;
  ReplayBuffer buffer_;
  Network online_;
  Network target_;
  std::optional<Adam> adam_;
  std::size_t explore_steps_ = 0;
  std::size_t train_steps_ = 0;
};

struct Rollout {
  std::vector<double> alphas;  // one per layer visited
  std::vector<StepOutcome> steps;
  double total_reward = 0.0;

  const StepOutcome& final() const { return steps.back(); }
};

// One full greedy episode from a fresh reset.
inline Rollout greedy_rollout(DqnAgent& agent, PruneEnv& env) {
  if (agent.state_dim() != env.state_dim() || agent.num_actions() != env.num_actions()) {
    throw ConfigError("agent and environment disagree on state or action sizes");
  }
  Rollout r;
  EnvState s = env.reset();
  bool done = false;
  while (!done) {
    const std::size_t a = agent.select_action(s, ActionMode::greedy);
    StepOutcome out = env.step(a);
    r.alphas.push_back(out.info.alpha);
    r.total_reward += out.reward;
    done = out.done;
    s = out.next_state;
    r.steps.push_back(std::move(out));
  }
  return r;
}

}  // namespace purl

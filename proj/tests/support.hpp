#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "purl/dataset.hpp"
#include "purl/dqn.hpp"
#include "purl/nn.hpp"

namespace purl::test {

// Fresh directory under the system temp dir, emptied if it exists.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("purl-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Linearly separable-ish blobs: class c centred at 3*e_c.
inline Dataset toy_dataset(std::size_t n, std::size_t features, std::size_t classes, std::uint64_t seed,
                           double noise = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise);
  Dataset d;
  d.classes = classes;
  d.inputs = Matrix(n, features);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % classes;
    d.labels.push_back(y);
    for (std::size_t f = 0; f < features; ++f) {
      d.inputs(i, f) = gauss(rng) + (f % classes == y ? 3.0 : 0.0);
    }
  }
  return d;
}

inline DataSplits toy_splits(std::uint64_t seed, std::size_t features = 4, std::size_t classes = 3) {
  return make_splits(toy_dataset(384, features, classes, seed), toy_dataset(192, features, classes, seed + 1000),
                     64, seed);
}

// Independent mask scan.
inline std::size_t count_zero_mask(const Network& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) {
    for (std::size_t i = 0; i < l.mask.size(); ++i) n += l.mask[i] == 0.0 ? 1 : 0;
  }
  return n;
}

inline std::size_t count_weights(const Network& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) n += l.mask.size();
  return n;
}

// Deterministic tabular MDP: next[s][a], reward[s][a]. States are fed to
// the agent one-hot.
struct TabularMdp {
  std::vector<std::vector<std::size_t>> next;
  std::vector<std::vector<double>> reward;

  std::size_t states() const { return next.size(); }
  std::size_t actions() const { return next.front().size(); }
  std::vector<double> one_hot(std::size_t s) const {
    std::vector<double> v(states(), 0.0);
    v[s] = 1.0;
    return v;
  }
};

// Two states; action 1 moves to (or stays in) s1, action 0 returns to s0.
// Only staying in s1 pays +1.
inline TabularMdp chain_mdp() {
  return {{{0, 1}, {0, 1}}, {{0.0, 0.0}, {0.0, 1.0}}};
}

// Optimal greedy action per state by value iteration.
inline std::vector<std::size_t> value_iteration_policy(const TabularMdp& m, double gamma) {
  std::vector<double> v(m.states(), 0.0);
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> nv(m.states());
    for (std::size_t s = 0; s < m.states(); ++s) {
      double best = -1e300;
      for (std::size_t a = 0; a < m.actions(); ++a) best = std::max(best, m.reward[s][a] + gamma * v[m.next[s][a]]);
      nv[s] = best;
    }
    v = nv;
  }
  std::vector<std::size_t> policy(m.states());
  for (std::size_t s = 0; s < m.states(); ++s) {
    double best = -1e300;
    for (std::size_t a = 0; a < m.actions(); ++a) {
      const double q = m.reward[s][a] + gamma * v[m.next[s][a]];
      if (q > best + 1e-12) {
        best = q;
        policy[s] = a;
      }
    }
  }
  return policy;
}

// Trains a fresh agent on uniformly random transitions of `m` and returns
// its greedy policy.
inline std::vector<std::size_t> learned_policy(const TabularMdp& m, double gamma, std::uint64_t seed,
                                               std::size_t steps) {
  AgentConfig cfg;
  cfg.gamma = gamma;
  cfg.epsilon_start = cfg.epsilon_end = 1.0;
  cfg.hidden_sizes = {16};
  DqnAgent agent(m.states(), m.actions(), cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_int_distribution<std::size_t> any_state(0, m.states() - 1);
  std::size_t s = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto state = m.one_hot(s);
    const std::size_t a = agent.select_action(std::span<const double>(state), ActionMode::explore);
    const std::size_t ns = m.next[s][a];
    agent.observe({state, a, m.reward[s][a], m.one_hot(ns), false});
    agent.train_step();
    s = t % 50 == 49 ? any_state(rng) : ns;
  }
  std::vector<std::size_t> policy;
  for (std::size_t st = 0; st < m.states(); ++st) {
    const auto state = m.one_hot(st);
    policy.push_back(agent.select_action(std::span<const double>(state), ActionMode::greedy));
  }
  return policy;
}

}  // namespace purl::test

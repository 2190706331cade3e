#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "purl/dataset.hpp"
#include "purl/errors.hpp"
#include "purl/nn.hpp"
#include "purl/pruning.hpp"

namespace purl {

enum class RewardVariant { r1, r2, r3 };
// The printed R2/R3 formulas negate the accuracy term, which penalises beating
// the accuracy target; `prose_corrected` rewards it instead.
enum class SignConvention { as_printed, prose_corrected };
enum class RewardMode { dense, sparse };
enum class StateKind { low, high };
enum class PruneRule { std_dev, magnitude };

// Evenly spaced alphas 0, step, 2*step, ... up to `max_alpha` inclusive.
inline std::vector<double> make_action_grid(double step, double max_alpha = 2.2) {
  if (!(step > 0.0) || !(max_alpha >= step)) throw ConfigError("invalid action grid step");
  const auto n = static_cast<std::size_t>(std::llround(max_alpha / step));
  if (std::abs(static_cast<double>(n) * step - max_alpha) > 1e-9) {
    throw ConfigError("action grid step must divide the maximum alpha");
  }
  std::vector<double> grid;
  for (std::size_t k = 0; k <= n; ++k) {
    grid.push_back(std::round(static_cast<double>(k) * step * 1e9) / 1e9);
  }
  return grid;
}

// Layer sparsity that a threshold of alpha standard deviations removes from
// a zero-mean Gaussian layer. Maps the alpha grid onto sparsity targets for
// the magnitude-target rule.
inline double magnitude_target_for(double alpha) { return std::erf(alpha / std::sqrt(2.0)); }

struct EnvConfig {
  double target_accuracy = 0.95;  // T_A
  double target_sparsity = 0.6;   // T_P
  double beta = 5.0;
  std::vector<double> action_grid = make_action_grid(0.1);
  RewardVariant reward_variant = RewardVariant::r1;
  SignConvention r2r3_sign = SignConvention::prose_corrected;
  RewardMode reward_mode = RewardMode::dense;
  StateKind state_kind = StateKind::low;
  PruneRule prune_rule = PruneRule::std_dev;
  std::size_t retrain_subset_size = 256;
  std::size_t retrain_epochs = 1;
  TrainConfig retrain{1, 0.05, 32};  // lr and batch size for subset retraining
  std::optional<double> early_stop_threshold = 0.001;

  void validate() const {
    if (!(target_accuracy > 0.0 && target_accuracy <= 1.0)) {
      throw ConfigError("target_accuracy must lie in (0, 1]");
    }
    if (!(target_sparsity > 0.0 && target_sparsity <= 1.0)) {
      throw ConfigError("target_sparsity must lie in (0, 1]");
    }
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (action_grid.empty() || action_grid.front() != 0.0) {
      throw ConfigError("action grid must start at 0.0");
    }
    for (std::size_t i = 1; i < action_grid.size(); ++i) {
      if (!(action_grid[i] > action_grid[i - 1])) {
        throw ConfigError("action grid must be strictly increasing");
      }
    }
    if (retrain_subset_size == 0) throw ConfigError("retrain_subset_size must be positive");
    if (!(retrain.lr > 0.0) || retrain.batch_size == 0) {
      throw ConfigError("retrain lr and batch size must be positive");
    }
  }
};

// R(s) = -beta * (max(1 - A/T_A, 0) + max(1 - P/T_P, 0))
inline double reward_r1(double accuracy, double sparsity, const EnvConfig& cfg) {
  return -cfg.beta * (std::max(1.0 - accuracy / cfg.target_accuracy, 0.0) +
                      std::max(1.0 - sparsity / cfg.target_sparsity, 0.0));
}

namespace detail {

inline double upside_reward(double accuracy_term, double sparsity, const EnvConfig& cfg) {
  const double prune_penalty = std::max(1.0 - sparsity / cfg.target_sparsity, 0.0);
  if (cfg.r2r3_sign == SignConvention::as_printed) {
    return -cfg.beta * (accuracy_term + prune_penalty);
  }
  return cfg.beta * accuracy_term - cfg.beta * prune_penalty;
}

}  // namespace detail

// Accuracy enters linearly and without a cap.
inline double reward_r2(double accuracy, double sparsity, const EnvConfig& cfg) {
  return detail::upside_reward(accuracy / cfg.target_accuracy - 1.0, sparsity, cfg);
}

// As reward_r2 with the accuracy ratio cubed.
inline double reward_r3(double accuracy, double sparsity, const EnvConfig& cfg) {
  const double ratio = accuracy / cfg.target_accuracy;
  return detail::upside_reward(ratio * ratio * ratio - 1.0, sparsity, cfg);
}

inline double compute_reward(double accuracy, double sparsity, const EnvConfig& cfg) {
  switch (cfg.reward_variant) {
    case RewardVariant::r1: return reward_r1(accuracy, sparsity, cfg);
    case RewardVariant::r2: return reward_r2(accuracy, sparsity, cfg);
    case RewardVariant::r3: return reward_r3(accuracy, sparsity, cfg);
  }
  return 0.0;
}

// Observation handed to the agent.
//   low:  <l/n, a, p>   (layer cursor, latest test accuracy, global sparsity)
//   high: <a_1, p_1, ..., a_n, p_n>, zero for layers not yet pruned
struct EnvState {
  StateKind kind = StateKind::low;
  std::vector<double> features;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

inline std::size_t state_dim(StateKind kind, std::size_t layers) {
  return kind == StateKind::low ? 3 : 2 * layers;
}

struct StepInfo {
  std::size_t layer = 0;
  double alpha = 0.0;
  double accuracy = 0.0;        // A(s)
  double sparsity = 0.0;        // P(s), global
  double layer_sparsity = 0.0;  // p_i of the layer just pruned
  bool retrained = false;
  bool early_stopped = false;
};

struct StepOutcome {
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

// Episodic pruning environment. Step t prunes layer t with the chosen alpha,
// retrains on the fixed subset (every step in dense mode, only after the last
// layer in sparse mode) and reports the reward.
class PruneEnv {
 public:
  PruneEnv(Network pristine, std::shared_ptr<const DataSplits> data, EnvConfig cfg,
           std::uint64_t seed)
      : pristine_(std::move(pristine)), data_(std::move(data)), cfg_(std::move(cfg)), rng_(seed) {
    cfg_.validate();
    pristine_.validate();
    if (!data_) throw ConfigError("environment needs data");
    if (data_->retrain_subset.empty() || data_->test.empty()) {
      throw ConfigError("environment needs nonempty retrain subset and test splits");
    }
    if (data_->test.features() != pristine_.input_size()) {
      throw DimensionError("dataset features do not match network input");
    }
    baseline_accuracy_ = evaluate_accuracy(pristine_, data_->test);
    pristine_checksum_ = checksum(pristine_);
    net_ = pristine_;
    high_.assign(2 * n(), 0.0);
  }

  EnvState reset() {
    net_ = pristine_;
    cursor_ = 0;
    accuracy_ = baseline_accuracy_;
    high_.assign(2 * n(), 0.0);
    started_ = true;
    done_ = false;
    ++episodes_;
    return build_state();
  }

  StepOutcome step(std::size_t action) {
    if (!started_ || done_) throw EpisodeStateError("step called on a finished or unstarted episode");
    if (action >= cfg_.action_grid.size()) {
      throw ConfigError("action index " + std::to_string(action) + " outside the action grid");
    }
    StepOutcome out;
    const std::size_t layer = cursor_;
    const double alpha = cfg_.action_grid[action];
    DenseLayer& target = net_.layers[layer];
    prune_layer(net_, layer, alpha);

    const bool terminal = layer + 1 == n();
    const bool evaluate = cfg_.reward_mode == RewardMode::dense || terminal;
    const double global = sparsity_report(net_).global;
    if (evaluate) {
      retrain_subset(net_);
      accuracy_ = evaluate_accuracy(net_, data_->test);
      out.reward = compute_reward(accuracy_, global, cfg_);
      out.info.retrained = true;
    }

    out.info.layer = layer;
    out.info.alpha = alpha;
    out.info.accuracy = accuracy_;
    out.info.sparsity = global;
    out.info.layer_sparsity = layer_sparsity(target);
    high_[2 * layer] = accuracy_;
    high_[2 * layer + 1] = out.info.layer_sparsity;

    ++cursor_;
    out.info.early_stopped =
        evaluate && cfg_.early_stop_threshold && accuracy_ < *cfg_.early_stop_threshold;
    done_ = cursor_ == n() || out.info.early_stopped;
    out.done = done_;
    out.next_state = build_state();
    return out;
  }

  EnvState build_state() const {
    EnvState s;
    s.kind = cfg_.state_kind;
    if (cfg_.state_kind == StateKind::low) {
      s.features = {static_cast<double>(cursor_) / static_cast<double>(n()), accuracy_,
                    sparsity_report(net_).global};
    } else {
      s.features = high_;
    }
    return s;
  }

  // Prunes a copy of the pristine network layer by layer with fixed alphas,
  // retraining on the subset after each layer as a dense episode would.
  // Not an episode: the cursor and episode count are untouched.
  Network apply_alphas(std::span<const double> alphas) {
    if (alphas.size() != n()) throw DimensionError("one alpha per layer required");
    Network net = pristine_;
    for (std::size_t l = 0; l < n(); ++l) {
      if (!(alphas[l] >= 0.0)) throw ConfigError("alpha must be nonnegative");
      prune_layer(net, l, alphas[l]);
      retrain_subset(net);
    }
    return net;
  }

  // Replaces the checkpoint episodes restart from.
  void set_pristine(Network net) {
    net.validate();
    pristine_ = std::move(net);
    baseline_accuracy_ = evaluate_accuracy(pristine_, data_->test);
    pristine_checksum_ = checksum(pristine_);
    started_ = false;
  }

  void set_reward_mode(RewardMode mode) { cfg_.reward_mode = mode; }
  void set_target_sparsity(double tp) {
    cfg_.target_sparsity = tp;
    cfg_.validate();
  }

  const Network& network() const noexcept { return net_; }
  const Network& pristine() const noexcept { return pristine_; }
  std::uint64_t pristine_checksum() const noexcept { return pristine_checksum_; }
  const EnvConfig& config() const noexcept { return cfg_; }
  const DataSplits& data() const noexcept { return *data_; }
  std::shared_ptr<const DataSplits> shared_data() const noexcept { return data_; }
  double baseline_accuracy() const noexcept { return baseline_accuracy_; }
  std::size_t num_layers() const noexcept { return n(); }
  std::size_t num_actions() const noexcept { return cfg_.action_grid.size(); }
  std::size_t state_dim() const noexcept { return purl::state_dim(cfg_.state_kind, n()); }
  std::size_t cursor() const noexcept { return cursor_; }
  bool done() const noexcept { return done_; }
  std::size_t retrain_passes() const noexcept { return retrain_passes_; }
  std::size_t episodes() const noexcept { return episodes_; }

 private:
  std::size_t n() const noexcept { return pristine_.num_layers(); }

  void prune_layer(Network& net, std::size_t layer, double alpha) const {
    DenseLayer& target = net.layers[layer];
    if (pruned_count(target) == target.mask.size()) return;
    if (cfg_.prune_rule == PruneRule::std_dev) {
      prune_by_std(target, alpha, layer);
    } else {
      prune_by_magnitude_target(target, std::max(magnitude_target_for(alpha), layer_sparsity(target)));
    }
  }

  void retrain_subset(Network& net) {
    TrainConfig tc = cfg_.retrain;
    tc.epochs = cfg_.retrain_epochs;
    retrain(net, data_->retrain_subset, tc, rng_);
    ++retrain_passes_;
  }

  Network pristine_;
  std::shared_ptr<const DataSplits> data_;
  EnvConfig cfg_;
  std::mt19937_64 rng_;
  Network net_;
  double baseline_accuracy_ = 0.0;
  std::uint64_t pristine_checksum_ = 0;
  std::size_t cursor_ = 0;
  double accuracy_ = 0.0;
  std::vector<double> high_;
  bool started_ = false;
  bool done_ = false;
  std::size_t retrain_passes_ = 0;
  std::size_t episodes_ = 0;
};

}  // namespace purl

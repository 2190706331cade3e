#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "purl/env.hpp"
#include "support.hpp"

using namespace purl;

namespace {

EnvConfig unit_cfg() {
  EnvConfig c;
  c.target_accuracy = 0.95;
  c.target_sparsity = 0.6;
  return c;
}

struct Fixture {
  std::shared_ptr<const DataSplits> data;
  Network net;
};

Fixture small_task(std::uint64_t seed = 1) {
  auto data = std::make_shared<const DataSplits>(test::toy_splits(seed));
  std::mt19937_64 rng(seed);
  Network net = make_mlp({4, 8, 6, 3}, rng);
  retrain(net, data->train, {3, 0.05, 16}, rng);
  return {data, std::move(net)};
}

PruneEnv make_env(EnvConfig cfg, std::uint64_t seed = 1) {
  Fixture f = small_task(seed);
  cfg.target_accuracy = 0.5;
  return PruneEnv(f.net, f.data, cfg, seed);
}

}  // namespace

TEST(Reward, R1UnitVectors) {
  const EnvConfig c = unit_cfg();
  EXPECT_NEAR(reward_r1(0.95, 0.6, c), 0.0, 1e-12);
  EXPECT_NEAR(reward_r1(0.0, 0.0, c), -10.0, 1e-12);
  EXPECT_NEAR(reward_r1(0.475, 0.6, c), -2.5, 1e-12);
}

TEST(Reward, R1NeverPositive) {
  const EnvConfig c = unit_cfg();
  for (double a = 0.0; a <= 1.0; a += 0.05) {
    for (double p = 0.0; p <= 1.0; p += 0.05) EXPECT_LE(reward_r1(a, p, c), 0.0);
  }
}

TEST(Reward, R2SignConventions) {
  EnvConfig c = unit_cfg();
  c.r2r3_sign = SignConvention::prose_corrected;
  EXPECT_NEAR(reward_r2(0.95, 0.6, c), 0.0, 1e-12);
  EXPECT_NEAR(reward_r2(1.045, 0.6, c), 0.5, 1e-12);
  c.r2r3_sign = SignConvention::as_printed;
  EXPECT_NEAR(reward_r2(0.95, 0.6, c), 0.0, 1e-12);
  EXPECT_NEAR(reward_r2(1.045, 0.6, c), -0.5, 1e-12);
}

TEST(Reward, R3CubesTheAccuracyRatio) {
  EnvConfig c = unit_cfg();
  EXPECT_NEAR(reward_r3(0.95, 0.6, c), 0.0, 1e-12);
  EXPECT_NEAR(reward_r3(1.045, 0.6, c), 5.0 * (1.331 - 1.0), 1e-12);
  for (double a = 0.96; a <= 1.0; a += 0.01) {
    for (double p : {0.0, 0.3, 0.6, 0.9}) EXPECT_GE(reward_r3(a, p, c), reward_r2(a, p, c));
  }
}

TEST(Reward, ComputeRewardDispatches) {
  EnvConfig c = unit_cfg();
  for (auto v : {RewardVariant::r1, RewardVariant::r2, RewardVariant::r3}) {
    c.reward_variant = v;
    EXPECT_NEAR(compute_reward(c.target_accuracy, c.target_sparsity, c), 0.0, 1e-12);
  }
}

TEST(ActionGrid, DefaultHasTwentyThreeValues) {
  const auto g = make_action_grid(0.1);
  ASSERT_EQ(g.size(), 23u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_DOUBLE_EQ(g.back(), 2.2);
  EXPECT_EQ(make_action_grid(0.2).size(), 12u);
  EXPECT_THROW(make_action_grid(0.15), ConfigError);
}

TEST(EnvConfig, RejectsBadGrids) {
  EnvConfig c = unit_cfg();
  c.action_grid = {0.1, 0.2};
  EXPECT_THROW(c.validate(), ConfigError);
  c.action_grid = {0.0, 0.2, 0.2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = unit_cfg();
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(State, Dimensions) {
  EXPECT_EQ(state_dim(StateKind::high, 6), 12u);
  EXPECT_EQ(state_dim(StateKind::high, 54), 108u);
  EXPECT_EQ(state_dim(StateKind::low, 54), 3u);
}

TEST(Env, HighStateStartsAtZero) {
  EnvConfig c = unit_cfg();
  c.state_kind = StateKind::high;
  PruneEnv env = make_env(c);
  const EnvState s = env.reset();
  ASSERT_EQ(s.features.size(), 6u);
  for (double v : s.features) EXPECT_EQ(v, 0.0);
}

TEST(Env, LowStateStartsAtBaseline) {
  PruneEnv env = make_env(unit_cfg());
  const EnvState s = env.reset();
  ASSERT_EQ(s.features.size(), 3u);
  EXPECT_EQ(s.features[0], 0.0);
  EXPECT_EQ(s.features[1], env.baseline_accuracy());
  EXPECT_EQ(s.features[2], 0.0);
}

TEST(Env, ResetIsDeterministic) {
  PruneEnv env = make_env(unit_cfg());
  const EnvState a = env.reset();
  const auto ca = checksum(env.network());
  env.step(12);
  const EnvState b = env.reset();
  EXPECT_EQ(a, b);
  EXPECT_EQ(ca, checksum(env.network()));
  EXPECT_EQ(ca, env.pristine_checksum());
}

TEST(Env, HighStateFillsOnlyVisitedSlots) {
  EnvConfig c = unit_cfg();
  c.state_kind = StateKind::high;
  PruneEnv env = make_env(c);
  env.reset();
  const auto out = env.step(10);
  ASSERT_GT(out.info.accuracy, 0.0);
  ASSERT_GT(out.info.layer_sparsity, 0.0);
  EXPECT_EQ(out.next_state.features[0], out.info.accuracy);
  EXPECT_EQ(out.next_state.features[1], out.info.layer_sparsity);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(out.next_state.features[i], 0.0);
}

TEST(Env, EpisodeLastsOneStepPerLayer) {
  PruneEnv env = make_env(unit_cfg());
  env.reset();
  for (std::size_t l = 0; l < 3; ++l) {
    const auto out = env.step(5);
    EXPECT_EQ(out.info.layer, l);
    EXPECT_EQ(out.done, l == 2);
  }
  EXPECT_THROW(env.step(0), EpisodeStateError);
}

TEST(Env, StepBeforeResetIsEpisodeStateError) {
  PruneEnv env = make_env(unit_cfg());
  EXPECT_THROW(env.step(0), EpisodeStateError);
}

TEST(Env, ActionOutsideGridIsConfigError) {
  PruneEnv env = make_env(unit_cfg());
  env.reset();
  EXPECT_THROW(env.step(23), ConfigError);
}

TEST(Env, DenseModeRetrainsEveryStep) {
  PruneEnv env = make_env(unit_cfg());
  env.reset();
  for (int i = 0; i < 3; ++i) {
    const auto out = env.step(3);
    EXPECT_TRUE(out.info.retrained);
    EXPECT_NEAR(out.reward, compute_reward(out.info.accuracy, out.info.sparsity, env.config()), 1e-15);
  }
  EXPECT_EQ(env.retrain_passes(), 3u);
}

TEST(Env, SparseModeRewardsOnlyTheTerminalStep) {
  EnvConfig c = unit_cfg();
  c.reward_mode = RewardMode::sparse;
  PruneEnv env = make_env(c);
  env.reset();
  for (int i = 0; i < 2; ++i) {
    const auto out = env.step(8);
    EXPECT_EQ(out.reward, 0.0);
    EXPECT_FALSE(out.info.retrained);
    EXPECT_EQ(env.retrain_passes(), 0u);
  }
  const auto last = env.step(8);
  EXPECT_TRUE(last.done);
  EXPECT_TRUE(last.info.retrained);
  EXPECT_EQ(env.retrain_passes(), 1u);
  EXPECT_LT(last.reward, 0.0);
}

TEST(Env, GlobalSparsityMatchesMaskScan) {
  PruneEnv env = make_env(unit_cfg());
  env.reset();
  bool done = false;
  while (!done) {
    const auto out = env.step(14);
    EXPECT_DOUBLE_EQ(out.info.sparsity, static_cast<double>(test::count_zero_mask(env.network())) /
                                            static_cast<double>(test::count_weights(env.network())));
    done = out.done;
  }
}

TEST(Env, PristineIsNeverModified) {
  PruneEnv env = make_env(unit_cfg());
  const auto before = checksum(env.pristine());
  env.reset();
  while (!env.step(22).done) {
  }
  EXPECT_EQ(checksum(env.pristine()), before);
}

TEST(Env, FullyPrunedLayerIsSkipped) {
  Fixture f = small_task();
  f.net.layers[1].mask.fill(0.0);
  f.net.layers[1].enforce_mask();
  EnvConfig c = unit_cfg();
  c.target_accuracy = 0.5;
  PruneEnv env(f.net, f.data, c, 1);
  env.reset();
  env.step(4);
  const auto out = env.step(4);
  EXPECT_EQ(out.info.layer_sparsity, 1.0);
}

TEST(Env, MagnitudeRuleHitsErfTarget) {
  EnvConfig c = unit_cfg();
  c.prune_rule = PruneRule::magnitude;
  PruneEnv env = make_env(c);
  env.reset();
  const auto out = env.step(10);  // alpha 1.0
  const std::size_t total = env.network().layers[0].mask.size();
  const double target = magnitude_target_for(1.0);
  EXPECT_GE(out.info.layer_sparsity, target);
  EXPECT_LT(out.info.layer_sparsity - 1.0 / static_cast<double>(total), target);
}

TEST(Env, ApplyAlphasIsNotAnEpisode) {
  PruneEnv env = make_env(unit_cfg());
  env.reset();
  const std::size_t episodes = env.episodes();
  const std::vector<double> alphas{0.5, 1.0, 0.0};
  const Network pruned = env.apply_alphas(alphas);
  EXPECT_EQ(env.episodes(), episodes);
  EXPECT_EQ(env.cursor(), 0u);
  EXPECT_GT(sparsity_report(pruned).layer[0], 0.0);
  EXPECT_EQ(sparsity_report(pruned).layer[2], 0.0);
  EXPECT_NO_THROW(pruned.validate());
  EXPECT_THROW(env.apply_alphas(std::vector<double>{0.5}), DimensionError);
}

namespace {

// Predicts class 0 for every input while 1999 of 2000 test labels are 1.
PruneEnv collapsing_env(std::optional<double> early_stop) {
  Network net;
  net.layers.emplace_back(2, 3, Activation::relu);
  net.layers.emplace_back(3, 2, Activation::identity);
  net.layers[1].bias = {100.0, 0.0};
  for (auto& l : net.layers) {
    for (double& w : l.weights.values()) w = 0.01;
  }
  Dataset test;
  test.classes = 2;
  test.inputs = Matrix(2000, 2);
  test.labels.assign(2000, 1);
  test.labels[0] = 0;
  Dataset train = test;
  auto splits = std::make_shared<const DataSplits>(make_splits(train, test, 32, 1));
  EnvConfig c = unit_cfg();
  c.retrain.lr = 1e-9;
  c.early_stop_threshold = early_stop;
  return PruneEnv(net, splits, c, 1);
}

}  // namespace

TEST(Env, EarlyStopOnCollapsedAccuracy) {
  PruneEnv env = collapsing_env(0.001);
  env.reset();
  const auto out = env.step(0);
  EXPECT_DOUBLE_EQ(out.info.accuracy, 0.0005);
  EXPECT_TRUE(out.done);
  EXPECT_TRUE(out.info.early_stopped);
  EXPECT_THROW(env.step(0), EpisodeStateError);
}

TEST(Env, EarlyStopCanBeDisabled) {
  PruneEnv env = collapsing_env(std::nullopt);
  env.reset();
  const auto out = env.step(0);
  EXPECT_FALSE(out.done);
  EXPECT_FALSE(out.info.early_stopped);
}

TEST(Env, MismatchedDataIsDimensionError) {
  Fixture f = small_task();
  std::mt19937_64 rng(1);
  EXPECT_THROW(PruneEnv(make_mlp({5, 3}, rng), f.data, unit_cfg(), 1), DimensionError);
}

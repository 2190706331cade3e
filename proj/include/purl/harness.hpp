#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "purl/checkpoint.hpp"
#include "purl/config.hpp"
#include "purl/data.hpp"
#include "purl/dqn.hpp"
#include "purl/driver.hpp"
#include "purl/env.hpp"
#include "purl/metrics.hpp"
#include "purl/nn.hpp"
#include "purl/pruning.hpp"

namespace purl {

// Seed streams handed to each subsystem of a run.
enum SeedStream : std::uint64_t {
  kModelInit = 1,
  kPretrain = 2,
  kRetrainSubset = 3,
  kEnv = 4,
  kAgent = 5,  // + round
};

inline void apply_seed(HarnessConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.driver.seed = seed;
  if (cfg.data.seed_from_run) cfg.data.synthetic.seed = seed;
}

// Data splits plus the trained network that is about to be pruned.
struct Task {
  std::shared_ptr<const DataSplits> data;
  Network model;
  double baseline_accuracy = 0.0;
};

inline TrainTest obtain_data(const HarnessConfig& cfg) {
  if (cfg.data.dir) return load_dataset(DataFiles::in(*cfg.data.dir));
  return generate(cfg.data.synthetic);
}

inline Network pretrain_model(const HarnessConfig& cfg, const DataSplits& data) {
  std::vector<std::size_t> sizes{data.train.features()};
  sizes.insert(sizes.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  sizes.push_back(data.train.classes);
  std::mt19937_64 init_rng(derive_seed(cfg.seed, kModelInit));
  Network net = make_mlp(std::span<const std::size_t>(sizes), init_rng);
  std::mt19937_64 train_rng(derive_seed(cfg.seed, kPretrain));
  retrain(net, data.train, {cfg.model.pretrain_epochs, cfg.model.lr, cfg.model.batch_size}, train_rng);
  return net;
}

inline Task prepare_task(const HarnessConfig& cfg, std::optional<Network> model = std::nullopt) {
  TrainTest tt = obtain_data(cfg);
  auto splits = std::make_shared<DataSplits>(make_splits(std::move(tt.train), std::move(tt.test),
                                                         cfg.env.retrain_subset_size,
                                                         derive_seed(cfg.seed, kRetrainSubset)));
  Task task;
  task.model = model ? std::move(*model) : pretrain_model(cfg, *splits);
  task.model.validate();
  if (task.model.input_size() != splits->train.features() || task.model.output_size() != splits->train.classes) {
    throw DimensionError("model shape does not match the dataset");
  }
  task.baseline_accuracy = evaluate_accuracy(task.model, splits->test);
  task.data = std::move(splits);
  return task;
}

// EnvConfig with T_A resolved against the measured pre-prune accuracy.
inline EnvConfig resolved_env(const HarnessConfig& cfg, double baseline_accuracy) {
  EnvConfig env = cfg.env;
  if (cfg.relative_target_accuracy) env.target_accuracy = *cfg.relative_target_accuracy * baseline_accuracy;
  if (!(env.target_accuracy > 0.0)) {
    throw ConfigError("resolved target accuracy is zero; the pretrained model scores 0 on the test split");
  }
  env.validate();
  return env;
}

inline std::string record_run_name(const HarnessConfig& cfg, Phase phase, std::size_t round) {
  std::string name = cfg.run_id;
  if (cfg.iterative) name += ".r" + std::to_string(round);
  if (phase == Phase::stage2) name += ".stage2";
  return name;
}

inline RunRecord to_record(const HarnessConfig& cfg, const StepEvent& ev) {
  RunRecord r;
  r.run = record_run_name(cfg, ev.phase, ev.round);
  r.seed = cfg.seed;
  r.episode = ev.episode;
  r.step = ev.step;
  r.layer = ev.outcome.info.layer;
  r.alpha = ev.outcome.info.alpha;
  r.layer_sparsity = ev.outcome.info.layer_sparsity;
  r.global_sparsity = ev.outcome.info.sparsity;
  r.accuracy = ev.outcome.info.accuracy;
  r.reward = ev.outcome.reward;
  r.ms = ev.ms;
  return r;
}

inline nlohmann::json sparsity_to_json(const SparsityReport& s) {
  return {{"global", s.global}, {"layers", s.layer}, {"pruned", s.pruned}, {"totals", s.totals}};
}

inline nlohmann::json result_to_json(const HarnessConfig& cfg, const PruneResult& r, double target_accuracy) {
  return {
      {"run_id", cfg.run_id},
      {"seed", cfg.seed},
      {"alphas", r.alphas},
      {"sparsity", sparsity_to_json(r.sparsity)},
      {"baseline_accuracy", r.baseline_accuracy},
      {"target_accuracy", target_accuracy},
      {"target_sparsity", cfg.env.target_sparsity},
      {"pre_finetune_accuracy", r.pre_finetune_accuracy},
      {"post_finetune_accuracy", r.post_finetune_accuracy},
      {"finetune_trace", r.finetune_trace},
      {"train_episodes", r.count_episodes(Phase::train)},
      {"stage2_episodes", r.count_episodes(Phase::stage2)},
      {"checkpoint", "pruned.json"},
  };
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

struct RunOptions {
  std::optional<Network> model;  // pretrained network to prune; pretrain when absent
  std::optional<Network> qnet;   // reuse a trained agent and skip stage 1
  bool stage1_only = false;      // stop after agent training (the `train` subcommand)
};

struct RunOutput {
  PruneResult result;
  double target_accuracy = 0.0;
  Network qnet;
};

// One full pipeline: pretrain (or load), stage 1, stage 2, fine-tune. Streams
// metrics.csv as it goes and leaves config.json, base.json, qnet.json,
// pruned.json and result.json in out_dir.
inline RunOutput run_single(const HarnessConfig& cfg, const std::filesystem::path& out_dir,
                            RunOptions opts = {}) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  write_json(out_dir / "config.json", config_to_json(cfg));
  Task task = prepare_task(cfg, std::move(opts.model));
  save_checkpoint(task.model, out_dir / "base.json", cfg.seed, "model");

  RunOutput out;
  MetricsWriter metrics(out_dir / "metrics.csv");
  StepSink sink = [&](const StepEvent& ev) { metrics.write(to_record(cfg, ev)); };

  auto make_env = [&](const Network& pristine, double target_sparsity) {
    const double base = evaluate_accuracy(pristine, task.data->test);
    EnvConfig env = resolved_env(cfg, base);
    env.target_sparsity = target_sparsity;
    out.target_accuracy = env.target_accuracy;
    return PruneEnv(pristine, task.data, env, derive_seed(cfg.seed, kEnv));
  };
  auto make_agent = [&](std::size_t state_dim, std::size_t actions, std::size_t round) {
    DqnAgent agent(state_dim, actions, cfg.agent, derive_seed(cfg.seed, kAgent + round));
    if (opts.qnet) agent.load_online(*opts.qnet);
    return agent;
  };

  if (cfg.iterative) {
    AgentFactory factory = [&](std::size_t s, std::size_t a, std::size_t round) {
      return make_agent(s, a, round);
    };
    out.result = run_iterative(task.model, make_env, factory, cfg.driver, sink);
  } else {
    PruneEnv env = make_env(task.model, cfg.env.target_sparsity);
    DqnAgent agent = make_agent(env.state_dim(), env.num_actions(), 0);
    const std::size_t episodes = opts.qnet ? 0 : cfg.driver.max_episodes;
    if (opts.stage1_only) {
      out.result.episodes = train_agent(env, agent, episodes, sink);
      out.result.baseline_accuracy = env.baseline_accuracy();
    } else {
      out.result = run_purl(env, agent, cfg.driver, sink, 0, episodes);
    }
    out.qnet = agent.online();
  }
  if (!out.qnet.layers.empty()) save_checkpoint(out.qnet, out_dir / "qnet.json", cfg.seed, "qnet");
  if (!opts.stage1_only) {
    save_checkpoint(out.result.network, out_dir / "pruned.json", cfg.seed, "model");
    write_json(out_dir / "result.json", result_to_json(cfg, out.result, out.target_accuracy));
  }
  return out;
}

// Pretrains (or loads) the same model a PuRL run would see and prunes it
// uniformly to `target_sparsity`, with the identical fine-tune budget.
inline PruneResult run_baseline(const HarnessConfig& cfg, double target_sparsity,
                                const std::filesystem::path& out_dir, std::optional<Network> model = std::nullopt) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  Task task = prepare_task(cfg, std::move(model));
  PruneResult r = uniform_baseline(task.model, target_sparsity, *task.data, cfg.driver);
  save_checkpoint(r.network, out_dir / "pruned.json", cfg.seed, "model");
  auto j = result_to_json(cfg, r, resolved_env(cfg, task.baseline_accuracy).target_accuracy);
  j["target_sparsity"] = target_sparsity;
  j["method"] = "uniform_baseline";
  write_json(out_dir / "result.json", j);
  return r;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationEntry {
  std::string id;
  std::optional<RewardMode> reward_mode = {};
  std::optional<RewardVariant> reward_variant = {};
  std::optional<StateKind> state_kind = {};
  std::optional<double> action_step = {};
  std::optional<PruneRule> prune_rule = {};
};

struct AblationSpec {
  std::vector<AblationEntry> configs;
  std::size_t trials = 3;

  void validate() const {
    if (trials == 0) throw ConfigError("ablation trials must be >= 1");
    if (configs.empty()) throw ConfigError("ablation needs at least one configuration");
    std::set<std::string> ids;
    for (const auto& c : configs) {
      if (c.id.empty() || !ids.insert(c.id).second) throw ConfigError("ablation ids must be unique and nonempty");
    }
  }
};

// The seven design-space rows: sparse vs dense rewards, then single changes
// against the dense baseline.
inline AblationSpec default_ablation(std::size_t trials = 3) {
  AblationSpec s;
  s.trials = trials;
  s.configs = {
      {.id = "sparse_rewards", .reward_mode = RewardMode::sparse},
      {.id = "dense_rewards"},
      {.id = "magnitude_target", .prune_rule = PruneRule::magnitude},
      {.id = "reward_2", .reward_variant = RewardVariant::r2},
      {.id = "reward_3", .reward_variant = RewardVariant::r3},
      {.id = "action_2", .action_step = 0.2},
      {.id = "state_2", .state_kind = StateKind::high},
  };
  return s;
}

inline AblationSpec ablation_from_json(const nlohmann::json& j) {
  using namespace detail;
  AblationSpec s;
  ObjectReader root(j, "ablation");
  root.get("trials", s.trials);
  const auto* configs = root.child("configs");
  if (!configs || !configs->is_array()) throw ConfigError("ablation.configs must be an array");
  for (const auto& item : *configs) {
    ObjectReader r(item, "ablation.configs[]");
    AblationEntry e;
    r.get("id", e.id);
    RewardMode mode;
    if (r.get_enum("reward_mode", mode, kRewardModes)) e.reward_mode = mode;
    RewardVariant variant;
    if (r.get_enum("reward_variant", variant, kRewardVariants)) e.reward_variant = variant;
    StateKind kind;
    if (r.get_enum("state_kind", kind, kStateKinds)) e.state_kind = kind;
    double step;
    if (r.get("action_step", step)) e.action_step = step;
    PruneRule rule;
    if (r.get_enum("prune_rule", rule, kPruneRules)) e.prune_rule = rule;
    r.finish();
    s.configs.push_back(std::move(e));
  }
  root.finish();
  s.validate();
  return s;
}

inline HarnessConfig apply_entry(HarnessConfig cfg, const AblationEntry& e, std::size_t trial) {
  if (e.reward_mode) cfg.env.reward_mode = *e.reward_mode;
  if (e.reward_variant) cfg.env.reward_variant = *e.reward_variant;
  if (e.state_kind) cfg.env.state_kind = *e.state_kind;
  if (e.prune_rule) cfg.env.prune_rule = *e.prune_rule;
  if (e.action_step) {
    cfg.action_step = *e.action_step;
    cfg.env.action_grid = make_action_grid(cfg.action_step, cfg.max_alpha);
  }
  cfg.run_id = e.id + ".t" + std::to_string(trial);
  apply_seed(cfg, cfg.seed + trial);
  cfg.validate();
  return cfg;
}

struct TrialResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // post fine-tune
  double sparsity = 0.0;  // global
  double pre_finetune_accuracy = 0.0;
  double baseline_accuracy = 0.0;
};

struct AblationRow {
  AblationEntry entry;
  HarnessConfig config;  // trial 0, with the entry applied
  std::size_t state_dim = 0;
  double action_step = 0.0;
  std::vector<TrialResult> trials;
  MeanSe accuracy;
  MeanSe sparsity;
};

inline TrialResult read_trial_result(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  TrialResult t;
  t.seed = j.at("seed").get<std::uint64_t>();
  t.accuracy = j.at("post_finetune_accuracy").get<double>();
  t.sparsity = j.at("sparsity").at("global").get<double>();
  t.pre_finetune_accuracy = j.at("pre_finetune_accuracy").get<double>();
  t.baseline_accuracy = j.at("baseline_accuracy").get<double>();
  return t;
}

inline std::string format_table(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "Experiment" << std::setw(7) << "State" << std::setw(8) << "Action"
     << std::setw(9) << "Reward" << std::setw(8) << "Mode" << std::setw(11) << "Prune" << std::setw(18)
     << "Accuracy%" << "Sparsity%" << '\n';
  for (const auto& r : rows) {
    auto pm = [](const MeanSe& m) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(1) << 100.0 * m.mean << " +- " << 100.0 * m.se;
      return s.str();
    };
    const EnvConfig& env = r.config.env;
    std::ostringstream step;
    step << std::setprecision(2) << r.action_step;
    os << std::left << std::setw(20) << r.entry.id << std::setw(7) << r.state_dim << std::setw(8) << step.str()
       << std::setw(9) << detail::enum_name(env.reward_variant, detail::kRewardVariants)
       << std::setw(8) << detail::enum_name(env.reward_mode, detail::kRewardModes)
       << std::setw(11) << detail::enum_name(env.prune_rule, detail::kPruneRules)
       << std::setw(18) << pm(r.accuracy) << pm(r.sparsity) << '\n';
  }
  return os.str();
}

// Runs trials x configs cells (each in its own directory, reusing any cell
// that already has a result.json), then writes ablation.csv and
// ablation.txt with mean +- standard error per configuration.
inline std::vector<AblationRow> run_ablation(const AblationSpec& spec, const HarnessConfig& base,
                                             const std::filesystem::path& out_dir, std::size_t jobs = 1) {
  spec.validate();
  base.validate();
  std::filesystem::create_directories(out_dir);
  struct Cell {
    std::size_t row, trial;
    HarnessConfig cfg;
    std::filesystem::path dir;
  };
  std::vector<AblationRow> rows;
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < spec.configs.size(); ++i) {
    const auto& e = spec.configs[i];
    AblationRow row;
    row.entry = e;
    for (std::size_t t = 0; t < spec.trials; ++t) {
      HarnessConfig cfg = apply_entry(base, e, t);
      if (t == 0) {
        row.config = cfg;
        row.state_dim = state_dim(cfg.env.state_kind, cfg.model.hidden.size() + 1);
        row.action_step = cfg.action_step;
      }
      cells.push_back({i, t, cfg, out_dir / e.id / ("trial" + std::to_string(t))});
    }
    row.trials.resize(spec.trials);
    rows.push_back(std::move(row));
  }

  auto run_cell = [](const Cell& c) {
    const auto result_path = c.dir / "result.json";
    if (!std::filesystem::exists(result_path)) run_single(c.cfg, c.dir);
    return read_trial_result(result_path);
  };
  jobs = std::max<std::size_t>(jobs, 1);
  for (std::size_t start = 0; start < cells.size(); start += jobs) {
    const std::size_t end = std::min(cells.size(), start + jobs);
    std::vector<std::future<TrialResult>> wave;
    for (std::size_t k = start; k < end; ++k) {
      wave.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, run_cell, std::cref(cells[k])));
    }
    for (std::size_t k = start; k < end; ++k) rows[cells[k].row].trials[cells[k].trial] = wave[k - start].get();
  }

  std::ofstream csv(out_dir / "ablation.csv");
  if (!csv) throw IoError("cannot write ablation.csv");
  csv << "id,state_dim,action_step,reward_variant,reward_mode,prune_rule,trials,accuracy_mean,accuracy_se,"
         "sparsity_mean,sparsity_se\n";
  for (auto& r : rows) {
    std::vector<double> acc, sp;
    for (const auto& t : r.trials) {
      acc.push_back(t.accuracy);
      sp.push_back(t.sparsity);
    }
    r.accuracy = mean_se(acc);
    r.sparsity = mean_se(sp);
    const EnvConfig& env = r.config.env;
    csv << r.entry.id << ',' << r.state_dim << ',' << format_double(r.action_step) << ','
        << detail::enum_name(env.reward_variant, detail::kRewardVariants) << ','
        << detail::enum_name(env.reward_mode, detail::kRewardModes) << ','
        << detail::enum_name(env.prune_rule, detail::kPruneRules) << ','
        << r.trials.size() << ',' << format_double(r.accuracy.mean) << ',' << format_double(r.accuracy.se) << ','
        << format_double(r.sparsity.mean) << ',' << format_double(r.sparsity.se) << '\n';
  }
  std::ofstream txt(out_dir / "ablation.txt");
  txt << format_table(rows);
  return rows;
}

}  // namespace purl

// purl: command-line front end for the pruning laboratory.
//
//   purl gen-data  --out DIR                 write synthetic train/test IDX files
//   purl train     --out DIR                 stage 1 only; writes qnet.json + metrics.csv
//   purl prune     --out DIR [--qnet F]      full pipeline; writes pruned.json + result.json
//   purl baseline  --out DIR [--target P]    uniform magnitude baseline
//   purl ablate    --out DIR [--spec F]      design-space ablation table
//   purl summarize FILE.csv... [--out F]     aggregate metrics into JSON
//
// Exit codes: 0 success, 2 config error, 3 data-format error, 4 numeric failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "purl/checkpoint.hpp"
#include "purl/config.hpp"
#include "purl/data.hpp"
#include "purl/harness.hpp"
#include "purl/metrics.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "purl-out";
  std::size_t trials = 1;
};

void add_common(CLI::App* app, CommonFlags& f, bool with_trials) {
  app->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Run seed (overrides the config)");
  app->add_option("--out", f.out, "Output directory");
  if (with_trials) app->add_option("--trials", f.trials, "Independent seeded trials")->check(CLI::PositiveNumber);
}

purl::HarnessConfig load(const CommonFlags& f) {
  purl::HarnessConfig cfg = f.config.empty() ? purl::config_from_json(nlohmann::json::object())
                                             : purl::load_config(f.config);
  if (f.seed) purl::apply_seed(cfg, *f.seed);
  return cfg;
}

std::optional<purl::Network> maybe_checkpoint(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return purl::load_checkpoint(path);
}

// Runs `body` once per trial; trial k uses seed + k and its own subdirectory.
template <class F>
void for_trials(const CommonFlags& f, purl::HarnessConfig cfg, F&& body) {
  if (f.trials == 1) {
    body(cfg, fs::path(f.out));
    return;
  }
  const std::uint64_t base = cfg.seed;
  const std::string id = cfg.run_id;
  for (std::size_t t = 0; t < f.trials; ++t) {
    purl::apply_seed(cfg, base + t);
    cfg.run_id = id + ".t" + std::to_string(t);
    body(cfg, fs::path(f.out) / ("trial" + std::to_string(t)));
  }
}

void print_result(const purl::PruneResult& r) {
  std::cout << "sparsity " << r.sparsity.global << "  accuracy before/after fine-tune "
            << r.pre_finetune_accuracy << " / " << r.post_finetune_accuracy << "  (unpruned "
            << r.baseline_accuracy << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense-reward reinforcement-learning pruning laboratory"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, prune_flags, base_flags, abl_flags;
  std::string train_model, prune_model, prune_qnet, base_model, abl_spec;
  std::optional<double> base_target;
  std::size_t jobs = 1;
  std::vector<std::string> sum_inputs;
  std::string sum_out;
  double sum_threshold = -1.0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset as IDX files");
  add_common(gen, gen_flags, false);

  auto* train = app.add_subcommand("train", "Train the DQN agent (stage 1) and save its Q-network");
  add_common(train, train_flags, true);
  train->add_option("--model", train_model, "Pretrained model checkpoint to prune")->check(CLI::ExistingFile);

  auto* prune = app.add_subcommand("prune", "Run the full pipeline: agent training, pruning, fine-tuning");
  add_common(prune, prune_flags, true);
  prune->add_option("--model", prune_model, "Pretrained model checkpoint to prune")->check(CLI::ExistingFile);
  prune->add_option("--qnet", prune_qnet, "Trained Q-network; skips agent training")->check(CLI::ExistingFile);

  auto* baseline = app.add_subcommand("baseline", "Uniform magnitude pruning baseline");
  add_common(baseline, base_flags, true);
  baseline->add_option("--model", base_model, "Pretrained model checkpoint to prune")->check(CLI::ExistingFile);
  baseline->add_option("--target", base_target, "Per-layer sparsity target (default: env.target_sparsity)");

  auto* ablate = app.add_subcommand("ablate", "Run the state/action/reward ablation matrix");
  add_common(ablate, abl_flags, true);
  abl_flags.trials = 3;
  ablate->add_option("--spec", abl_spec, "Ablation spec JSON (default: the seven standard rows)")
      ->check(CLI::ExistingFile);
  ablate->add_option("--jobs", jobs, "Cells to run concurrently")->check(CLI::PositiveNumber);

  auto* summarize = app.add_subcommand("summarize", "Aggregate metrics CSV files into JSON");
  summarize->add_option("inputs", sum_inputs, "metrics.csv files")->required()->check(CLI::ExistingFile);
  summarize->add_option("--out", sum_out, "Output JSON file (default: stdout)");
  summarize->add_option("--reward-threshold", sum_threshold, "Terminal reward counted as solved");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const auto cfg = load(gen_flags);
      const auto data = purl::generate(cfg.data.synthetic);
      const auto files = purl::write_dataset(data, gen_flags.out);
      std::cout << "wrote " << data.train.size() << " train / " << data.test.size() << " test examples to "
                << files.train_images.parent_path().string() << '\n';
    } else if (*train) {
      for_trials(train_flags, load(train_flags), [&](const purl::HarnessConfig& cfg, const fs::path& out) {
        purl::RunOptions opts;
        opts.model = maybe_checkpoint(train_model);
        opts.stage1_only = true;
        const auto r = purl::run_single(cfg, out, std::move(opts));
        std::cout << cfg.run_id << ": trained for " << r.result.episodes.size() << " episodes -> "
                  << (out / "qnet.json").string() << '\n';
      });
    } else if (*prune) {
      for_trials(prune_flags, load(prune_flags), [&](const purl::HarnessConfig& cfg, const fs::path& out) {
        purl::RunOptions opts;
        opts.model = maybe_checkpoint(prune_model);
        opts.qnet = maybe_checkpoint(prune_qnet);
        const auto r = purl::run_single(cfg, out, std::move(opts));
        std::cout << cfg.run_id << ": ";
        print_result(r.result);
      });
    } else if (*baseline) {
      for_trials(base_flags, load(base_flags), [&](const purl::HarnessConfig& cfg, const fs::path& out) {
        const auto r = purl::run_baseline(cfg, base_target.value_or(cfg.env.target_sparsity), out,
                                          maybe_checkpoint(base_model));
        std::cout << cfg.run_id << " (uniform): ";
        print_result(r);
      });
    } else if (*ablate) {
      const auto cfg = load(abl_flags);
      purl::AblationSpec spec = abl_spec.empty() ? purl::default_ablation(abl_flags.trials)
                                                 : purl::ablation_from_json(purl::read_json_file(abl_spec));
      if (ablate->count("--trials") > 0) spec.trials = abl_flags.trials;
      const auto rows = purl::run_ablation(spec, cfg, abl_flags.out, jobs);
      std::cout << purl::format_table(rows);
    } else if (*summarize) {
      std::vector<purl::RunRecord> records;
      for (const auto& path : sum_inputs) {
        auto part = purl::read_metrics(path);
        records.insert(records.end(), part.begin(), part.end());
      }
      const auto runs = purl::summarize(records, sum_threshold);
      const auto j = purl::summaries_to_json(runs, sum_threshold);
      if (sum_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        purl::write_json(sum_out, j);
      }
    }
  } catch (const purl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return purl::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

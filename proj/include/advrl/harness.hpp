#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "advrl/agent.hpp"
#include "advrl/baselines.hpp"
#include "advrl/dataset.hpp"
#include "advrl/env.hpp"
#include "advrl/victim.hpp"

namespace advrl {

// ------------------------------------------------------------------ metrics

struct MetricsRow {
  std::string attack;
  std::string variant;
  std::string split;
  std::string victim;
  std::uint64_t seed = 0;
  int update = 0;
  std::size_t episodes = 0;
  double asr = 0.0;
  std::optional<double> aq;  // mean queries over successful episodes
  std::optional<double> l2;  // mean l2 distortion over successful episodes

  bool operator==(const MetricsRow&) const = default;
};

/// ASR over all episodes; AQ and l2 over successful episodes only (empty when
/// none succeeded). Context fields are copied from `context`.
MetricsRow aggregate(const std::vector<EpisodeResult>& episodes, MetricsRow context);

extern const char* const kResultsHeader;
extern const char* const kEpisodesHeader;

std::string format_row(const MetricsRow& row);
MetricsRow parse_row(const std::string& line);

/// Writes header + rows (truncating). Empty input gives a header-only file.
void write_results(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
/// Appends rows, writing the header first if the file is new or empty.
void append_results(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_results(const std::filesystem::path& path);
/// Concatenates part files in the given order into `path`, then removes them.
void merge_results(const std::vector<std::filesystem::path>& parts, const std::filesystem::path& path);

/// Raw per-episode log; re-aggregating it reproduces the MetricsRow table.
struct EpisodeLogRow {
  MetricsRow context;  // metric fields unused
  std::size_t episode = 0;
  EpisodeResult result;
};

void append_episodes(const std::vector<EpisodeLogRow>& rows, const std::filesystem::path& path);
std::vector<EpisodeLogRow> read_episodes(const std::filesystem::path& path);

// ------------------------------------------------------------------ config

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | cifar10
  SyntheticSpec synthetic;
  int test_per_class = 250;
  std::uint64_t seed = 7;
  std::string cifar_dir;
};

struct ExperimentConfig {
  EnvConfig env;
  PPOConfig ppo;
  PolicyConfig policy;  // shape / classes / N / theta are filled from data + env
  VictimTrainConfig victim_train;
  DatasetConfig dataset;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int eval_every = 25;
  int eval_episodes = 100;
  std::uint64_t baseline_budget = 1500;
  std::string victim_path;  // checkpoint to load (trained and saved there if absent)
  std::string victim_id = "victim";
  std::string out_dir = "results";
  int workers = 1;

  void validate() const;
};

/// Flat `key = value` text; '#' starts a comment; unknown keys throw ConfigError.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
std::string config_to_text(const ExperimentConfig& config);

// ------------------------------------------------------------------ pipeline

/// Victim training data and the D / D' attack partitions.
DatasetSplit prepare_data(const DatasetConfig& config);

struct VictimBundle {
  std::shared_ptr<const Classifier> model;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

/// Loads config.victim_path when it exists, otherwise trains a victim (and
/// saves it when victim_path is set).
VictimBundle prepare_victim(const ExperimentConfig& config, const DatasetSplit& data);

struct EvalResult {
  MetricsRow row;
  std::vector<EpisodeResult> episodes;
};

/// Stochastic-policy evaluation. episode_count == 0 attacks every sample of
/// the split once in order; otherwise start samples are drawn uniformly with
/// replacement. Each episode uses its own child stream of `rng`. Transitions
/// are appended to `trace` when given.
EvalResult evaluate_policy(const Policy& policy, std::shared_ptr<const Classifier> victim,
                           const Dataset& split, const EnvConfig& env, int episode_count,
                           const RngStream& rng, MetricsRow context = {},
                           std::vector<TransitionRecord>* trace = nullptr);

PolicyConfig make_policy_config(const ExperimentConfig& config, const Dataset& data);

struct TrainingRun {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> curve;
  std::vector<UpdateStats> updates;
  Policy policy;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Optional CSV sinks of a training run. The episode log holds every finished
/// rollout episode (split "rollout", tagged with the update it fed) and every
/// evaluation episode (split "D").
struct TrainingLogs {
  std::filesystem::path curve_csv;
  std::filesystem::path episodes_csv;
};

/// One seed: interleaves rollout collection on D, ppo_update and evaluation
/// on D every eval_every updates (plus update 0 and the final update).
TrainingRun train_agent(const ExperimentConfig& config, std::shared_ptr<const Classifier> victim,
                        const Dataset& attack_train, std::uint64_t seed,
                        const TrainingLogs& logs = {}, const ProgressFn& progress = {});

/// All seeds of config.seeds; curves written incrementally to
/// out_dir/training.csv and episodes to out_dir/episodes.csv.
std::vector<TrainingRun> run_training(const ExperimentConfig& config,
                                      std::shared_ptr<const Classifier> victim,
                                      const DatasetSplit& data, const ProgressFn& progress = {});

struct SweepCell {
  double eps = 0.0;
  double c = 0.0;
  int num_pairs = 0;
  double theta = 0.0;
  std::uint64_t seed = 0;
  MetricsRow row;
  double median_queries = 0.0;
  std::shared_ptr<const Policy> policy;  // the trained agent of this cell
};

struct SweepSummary {
  double param = 0.0;
  double mean_asr = 0.0;
  std::optional<double> mean_l2;
  std::vector<double> asr_per_seed;
  std::vector<double> l2_per_seed;
};

/// Trains one Max Loss agent per (eps, seed), evaluates on D.
std::vector<SweepCell> sweep_epsilon(const ExperimentConfig& base, const std::vector<double>& eps_list,
                                     std::shared_ptr<const Classifier> victim, const DatasetSplit& data,
                                     const ProgressFn& progress = {});
/// Trains one Min Norm agent per (c, seed), evaluates on D.
std::vector<SweepCell> sweep_c(const ExperimentConfig& base, const std::vector<double>& c_list,
                               std::shared_ptr<const Classifier> victim, const DatasetSplit& data,
                               const ProgressFn& progress = {});
/// Full factorial (N, theta) sweep with the base variant.
std::vector<SweepCell> sweep_action_space(const ExperimentConfig& base, const std::vector<int>& n_list,
                                          const std::vector<double>& theta_list,
                                          std::shared_ptr<const Classifier> victim,
                                          const DatasetSplit& data, const ProgressFn& progress = {});

/// Groups cells by eps (or c) and averages ASR and l2 over seeds.
std::vector<SweepSummary> summarize_by(const std::vector<SweepCell>& cells, bool by_c);

/// ASR at eps = 0: one minus victim accuracy on the split.
double zero_budget_asr(const Classifier& victim, const Dataset& split);

/// One row per (attack, split): RL agents on D and D', baselines on D' only.
struct CompareInputs {
  std::vector<std::pair<EnvConfig, const Policy*>> agents;
  std::uint64_t seed = 0;
};

std::vector<MetricsRow> compare_attacks(const ExperimentConfig& config, const CompareInputs& inputs,
                                        std::shared_ptr<const Classifier> victim,
                                        const DatasetSplit& data, const ProgressFn& progress = {});

/// Runs the random-search and square baselines over every sample of a split.
EvalResult evaluate_random_search(std::shared_ptr<const Classifier> victim, const Dataset& split,
                                  const EnvConfig& env, std::uint64_t budget, const RngStream& rng,
                                  MetricsRow context = {});
EvalResult evaluate_square(std::shared_ptr<const Classifier> victim, const Dataset& split,
                           double eps, std::uint64_t budget, const RngStream& rng,
                           MetricsRow context = {}, double* max_distortion = nullptr);

/// Runs `jobs` on up to `workers` threads; each job writes its own part file.
void run_parallel(std::vector<std::function<void()>> jobs, int workers);

}  // namespace advrl

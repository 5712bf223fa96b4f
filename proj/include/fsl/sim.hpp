#pragma once

// Federated training loop: selection, local training, defended aggregation
// and per-round evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsl/aggregation.hpp"
#include "fsl/attacks.hpp"
#include "fsl/data.hpp"
#include "fsl/nn.hpp"

namespace fsl {

enum class DefenseKind { kFedAvg, kMedian, kTrimmedMean, kMultiKrum, kFoolsGold, kFlDefender };

std::string to_string(DefenseKind kind);
DefenseKind parse_defense(const std::string& text);

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kFedAvg;
  double trim_beta = 0.2;
  std::optional<std::size_t> krum_f;
  std::optional<std::size_t> krum_select;
};

enum class DataSource { kMnist, kSynth };

struct DataConfig {
  DataSource source = DataSource::kSynth;
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t max_train = 0;  // 0 = all
  int synth_classes = 10;
  std::size_t synth_per_class = 100;
  std::size_t synth_test_per_class = 50;
  std::size_t synth_dim = 32;
  double synth_spread = 0.15;
  PartitionRegime partition = PartitionRegime::kIid;
  double alpha = 1.0;
};

struct ExperimentConfig {
  std::size_t num_workers = 20;       // K
  double fraction = 1.0;              // C
  std::size_t batch_size = 64;        // BS
  std::size_t local_epochs = 3;       // E
  double learning_rate = 0.01;        // eta
  double momentum = 0.9;
  std::size_t rounds = 60;            // T
  std::uint64_t seed = 1;
  std::size_t report_window = 10;
  DataConfig data;
  Architecture model;
  DefenseConfig defense;
  AttackConfig attack;

  // Throws ConfigError for anything that would fail mid-run.
  void validate() const;
};

struct RoundMetrics {
  std::size_t round = 0;
  double test_error = 0.0;
  double all_acc = 0.0;
  double src_acc = 0.0;
  double asr = 0.0;
  std::vector<double> gamma;  // K entries
  double agg_wall_time_s = 0.0;
  bool trust_fallback = false;
};

struct ExperimentSummary {
  std::size_t window = 0;
  double test_error = 0.0;
  double all_acc = 0.0;
  double src_acc = 0.0;
  double asr = 0.0;
  double agg_wall_time_s = 0.0;
};

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  ExperimentSummary summary;
  ParameterSet final_model;
};

struct EvalMetrics {
  double test_error = 0.0;
  double all_acc = 0.0;
  double src_acc = 0.0;
  double asr = 0.0;
};

// m = max(floor(C K), 1) distinct ids in ascending order.
std::vector<std::size_t> select_workers(std::size_t num_workers, double fraction, std::uint64_t round_seed);

WorkerUpdate worker_update(std::size_t worker_id, const ParameterSet& global, const Dataset& local_data,
                           const ExperimentConfig& config, std::uint64_t shuffle_seed);

// `trigger_set` is required for backdoor attacks and ignored otherwise.
EvalMetrics evaluate(const ParameterSet& model, const Dataset& clean_test, const AttackConfig& attack,
                     const Batch* trigger_set = nullptr);

ExperimentSummary summarize(const std::vector<RoundMetrics>& rounds, std::size_t window);

// Stateful server-side aggregator for one run.
class Defense {
 public:
  Defense(DefenseConfig config, std::size_t num_workers);

  // Aggregates the round's updates (ascending worker id). Records a K-length
  // weight snapshot: FL-Defender trust, FoolsGold weights, Multi-Krum
  // selection, 1 for participants of the other rules.
  ParameterSet aggregate(const ParameterSet& global, std::span<const WorkerUpdate> updates);

  const std::vector<double>& snapshot() const { return snapshot_; }
  bool last_fallback() const { return fallback_; }
  const TrustState& trust() const { return trust_; }

 private:
  DefenseConfig config_;
  TrustState trust_;
  std::vector<std::vector<double>> histories_;  // FoolsGold
  std::vector<double> snapshot_;
  bool fallback_ = false;
};

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const DataConfig& config, std::uint64_t seed);

// Worker-training parallelism from FSL_THREADS: 0 = sequential. Unset means
// the hardware thread count.
std::size_t thread_count_from_env();

// Called after each round's local training, before aggregation.
using RoundObserver =
    std::function<void(std::size_t round, const ParameterSet& global, std::span<const WorkerUpdate> updates)>;

struct RunOptions {
  std::optional<std::size_t> threads;  // overrides FSL_THREADS
  RoundObserver observer;
  std::optional<std::size_t> stop_after_round;  // run rounds [0, stop] only
};

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
ExperimentResult run_experiment(const ExperimentConfig& config, const LoadedData& data,
                                const RunOptions& options = {});

}  // namespace fsl

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fame/baseline.hpp"
#include "fame/config.hpp"
#include "fame/model.hpp"

namespace fame {

using Predictions = std::vector<std::vector<std::vector<double>>>;  // sample, output, point

/// Mean over samples of the mean squared residual over each sample's output
/// points (all output channels pooled).
double mse_loss(const Predictions& predicted, const Dataset& observed);

struct Entropy {
  std::vector<double> per_channel;  // normalized, averaged over samples
  double pooled = 0.0;
};

/// Normalized routing entropy of gate matrices (K x d per sample). K = 1 gives 0.
Entropy routing_entropy(std::span<const Matrix> gates);

struct Metrics {
  std::vector<double> train_loss;  // per epoch
  double test_mse = NAN;
  double baseline_mse = NAN;
  Entropy entropy;
  double lipschitz = NAN;
  double seconds = 0.0;
  double max_cross_norm = NAN;
  std::optional<std::string> aborted;  // reason when training stopped early
};

nlohmann::json to_json(const Metrics& m);

struct TrainResult {
  FameModel model;
  Metrics metrics;
};

/// Called after every epoch with (epoch, mean training loss).
using EpochHook = std::function<void(int, double)>;

/// Minibatch Adam training. On solver divergence or a non-finite gradient
/// the parameters of the last completed epoch are restored and
/// metrics.aborted records the cause.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const EpochHook& hook = {});
/// Continues training an existing model.
void train_model(FameModel& model, const TrainConfig& cfg, const Dataset& train_set, Metrics& metrics,
                 const EpochHook& hook = {});

Predictions predict(const FameModel& model, const Dataset& ds);
Predictions predict(const RidgeFofr& model, const Dataset& ds);

/// Gates of every sample, for routing_entropy.
std::vector<Matrix> collect_gates(const FameModel& model, const Dataset& ds);

struct LipschitzPoint {
  double delta = 0.0;      // requested 1-variation of the bump
  double ratio = 0.0;      // max over samples of sup |dY| / (measured 1-variation)
};

/// Adds a hat bump of 1-variation delta to input channel 0 of each sample
/// and records sup |Y(x + bump) - Y(x)| / delta.
std::vector<LipschitzPoint> estimate_lipschitz(const FameModel& model, const Dataset& ds,
                                               std::span<const double> deltas);

/// Log-spaced sweep of `count` values in [lo, hi].
std::vector<double> log_space(double lo, double hi, int count);

struct ExperimentOptions {
  TrainConfig train;
  std::filesystem::path out_dir = "results";
  std::vector<int> sample_sizes;  // empty: per-experiment default
  std::uint64_t data_seed = 0;
  std::optional<std::filesystem::path> csv;  // custom-csv input
  bool quiet = false;
};

/// Trains and evaluates FAME plus the ridge baseline on one dataset; writes
/// <tag>.metrics.json, <tag>.epochs.csv and <tag>.predictions.csv.
nlohmann::json run_single(const std::string& tag, const Dataset& ds, const TrainConfig& cfg,
                          const std::filesystem::path& out_dir, bool quiet = false);

/// Names: case1..case8, sweep-k, ablation, custom-csv. Returns the report
/// that is also written to <out_dir>/<name>.report.json.
nlohmann::json run_experiment(const std::string& name, const ExperimentOptions& opts);

void write_predictions_csv(const std::filesystem::path& file, const Dataset& ds, const Predictions& pred);

}  // namespace fame

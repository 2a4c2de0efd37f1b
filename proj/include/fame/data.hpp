#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fame/funcpath.hpp"
#include "fame/params.hpp"

namespace fame {

/// One regression pair: d input functions and m output functions.
struct Sample {
  std::vector<FunctionSample> inputs;
  std::vector<FunctionSample> outputs;
};

struct Dataset {
  std::vector<Sample> samples;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  int input_channels() const;
  int output_channels() const;
  /// Throws when channel counts differ between samples or a sample is invalid.
  void validate() const;
};

enum class Target { sin_sum, sin_cos_sum };

/// Synthetic generator settings. Defaults correspond to Case 1.
struct GenSpec {
  int case_id = 1;
  int samples = 200;
  int inputs = 3;
  int outputs = 1;
  std::vector<double> widths;  // one per input; empty means 0.3 everywhere
  int input_points = 20;
  int output_points = 20;
  std::vector<int> input_point_choices;  // non-empty: drawn per sample
  bool shared_grid = true;               // one grid for every sample (inputs and outputs aligned)
  double noise = 0.0;     // lambda
  double noise_sd = 1.0;  // sigma
  Target target = Target::sin_sum;
  std::uint64_t seed = 0;

  void validate() const;
  double width(int channel) const;
};

nlohmann::json to_json(const GenSpec& spec);
GenSpec gen_spec_from_json(const nlohmann::json& j);

/// Defaults of synthetic Case 1..8; unknown ids raise Errc::config.
GenSpec case_defaults(int case_id);

/// `n` sorted instants in [0, 1]: 0, 1 and n - 2 uniform draws.
std::vector<double> irregular_grid(int n, Rng& rng);

/// Zero-mean GP with RBF kernel of width sigma at `points`. Coincident points
/// receive identical values. Cholesky jitter starts at 1e-8 and escalates to
/// 1e-4 before giving up with Errc::domain.
Vector sample_gp_values(double sigma, std::span<const double> points, Rng& rng);
FunctionSample sample_gp(double sigma, std::span<const double> grid, Rng& rng);

/// Response at one instant given the input values there.
std::vector<double> response(Target target, double input_sum);

Dataset make_case(const GenSpec& spec);

/// CSV with header sample_id,role,channel,t,value (role in|out).
Dataset load_csv(const std::filesystem::path& file);
Dataset parse_csv(const std::string& text);
std::string to_csv(const Dataset& ds);
void save_csv(const std::filesystem::path& file, const Dataset& ds);

/// 64-bit FNV-1a of the CSV serialisation.
std::uint64_t content_hash(const Dataset& ds);
/// Provenance echo plus content hash and shape summary.
nlohmann::json manifest(const Dataset& ds);

/// Seeded shuffle into train/test. Round(ratio n) training samples, at least
/// one on each side.
std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio = 0.8, std::uint64_t seed = 0);

/// Index form of split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double ratio,
                                                                            std::uint64_t seed);

/// Independent stream for (seed, stream id).
Rng derived_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace fame

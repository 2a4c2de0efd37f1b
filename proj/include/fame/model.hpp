#pragma once

#include <span>
#include <vector>

#include "fame/attention.hpp"
#include "fame/crossfusion.hpp"
#include "fame/data.hpp"
#include "fame/decoder.hpp"
#include "fame/encoder.hpp"

namespace fame {

struct ModelConfig {
  int inputs = 3;   // d
  int outputs = 1;  // m
  int grid_size = 64;  // Q uniform points merged with the input breakpoints
  Interp interp = Interp::linear;
  EncoderConfig encoder;
  AttentionConfig attention;
  CrossConfig cross;
  DecoderConfig decoder;

  /// Copies the shared dimensions (2h, d_f, 2h d + 1, m) and the encoder's MLP
  /// widths, dropout and solver scheme into the sub-configs.
  void finalize();
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// A sample with its grid and solver inputs precomputed.
struct PreparedSample {
  QuadratureGrid grid;
  std::vector<ChannelInputs> channels;        // d
  std::vector<std::vector<double>> queries;   // per output, normalized instants
  std::vector<std::vector<double>> targets;   // per output
  std::size_t output_points() const;
};

class FameModel {
 public:
  FameModel() = default;
  FameModel(ModelConfig cfg, std::uint64_t seed);
  FameModel(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  PreparedSample prepare(const Sample& sample) const;

  /// Records the forward pass of samples that share one grid. Each sample's
  /// squared residuals are averaged over its output points and scaled by
  /// `sample_weight`. Returns the 1 x 1 loss; `predictions` (optional)
  /// receives the 1 x E readout in sample, output, point order.
  ad::Var batch_loss(ad::Tape& tape, std::span<const PreparedSample* const> group, double sample_weight, bool training,
                     Rng* rng, ad::Var* predictions = nullptr) const;

  /// Evaluation-mode predictions per output channel at the sample's output instants.
  std::vector<std::vector<double>> predict(const PreparedSample& sample) const;
  /// Batched predictions; samples are grouped by grid internally.
  std::vector<std::vector<std::vector<double>>> predict(std::span<const PreparedSample> samples) const;

  /// Router gates (K x d) of a sample's input channels.
  Matrix gates(const PreparedSample& sample) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

/// Partition of sample indices into runs that share a bit-identical grid.
std::vector<std::vector<std::size_t>> group_by_grid(std::span<const PreparedSample* const> samples);

}  // namespace fame

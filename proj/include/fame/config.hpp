#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fame/data.hpp"
#include "fame/model.hpp"

namespace fame {

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  int batch = 16;
  std::uint64_t seed = 0;
  double dropout = 0.2;
  int grid = 64;  // Q
  double split_ratio = 0.8;
  bool no_bidir = false;
  bool no_moe = false;
  bool no_crossattn = false;
  int hidden = 16;  // h
  int attn_dim = 32;  // d_f
  int head_dim = 8;   // d_c
  int heads = 4;      // M
  int experts = 3;    // K
  int summary_dim = 8;  // h0
  int conv_width = 3;
  std::vector<int> mlp_widths{32, 64};
  double temperature = 1.0;
  double norm_cap = 3.0;
  SolverScheme scheme = SolverScheme::euler;
  Interp interp = Interp::linear;
  bool per_output = false;

  void validate() const;
  /// Model configuration for d inputs and m outputs with the ablation flags applied.
  ModelConfig model_config(int inputs, int outputs) const;
};

nlohmann::json to_json(const TrainConfig& cfg);

using KeyValues = std::map<std::string, std::string>;

/// `key = value` per line; blank lines and lines starting with '#' are ignored.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& file);

/// Applies recognised keys; unknown keys or malformed values raise Errc::config.
/// Generator keys: case, samples, inputs, outputs, widths, input_points,
/// output_points, input_point_choices, shared_grid, noise, noise_sd, target,
/// data_seed. Every other key belongs to TrainConfig.
void apply(const KeyValues& kv, TrainConfig& train, GenSpec* gen = nullptr);

/// Accepted keys, for usage messages.
std::vector<std::string> config_keys();

}  // namespace fame

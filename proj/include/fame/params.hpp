#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace fame {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Named learnable arrays. Insertion order defines the flattened ordering
/// used by the optimizer and by checkpoints.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix init);

  bool contains(std::string_view name) const;
  std::size_t slot(std::string_view name) const;

  Matrix& value(std::size_t slot) { return values_[slot]; }
  const Matrix& value(std::size_t slot) const { return values_[slot]; }
  Matrix& operator[](std::string_view name) { return values_[slot(name)]; }
  const Matrix& operator[](std::string_view name) const { return values_[slot(name)]; }
  const std::string& name(std::size_t slot) const { return names_[slot]; }

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t scalar_count() const noexcept;

  /// Flat view in slot order, row-major inside each array.
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);

  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient buffers shaped like a ParamStore.
struct GradStore {
  std::vector<Matrix> grads;

  GradStore() = default;
  explicit GradStore(const ParamStore& params);
  void zero();
  bool all_finite() const;
  double squared_norm() const;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint layout (JSON):
///   {"format": "fame-checkpoint", "version": 1, "meta": {...},
///    "params": [{"name": ..., "shape": [rows, cols], "values": [row-major]}]}
nlohmann::json params_to_json(const ParamStore& params);
ParamStore params_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& file, const ParamStore& params,
                     const nlohmann::json& meta);
/// Returns the stored meta block.
nlohmann::json load_checkpoint(const std::filesystem::path& file, ParamStore& params);

}  // namespace fame

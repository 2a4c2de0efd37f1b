#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fame/autodiff.hpp"
#include "fame/params.hpp"

namespace fame {

/// Tanh MLP: input -> hidden[0] -> ... -> output, linear output layer.
struct MlpSpec {
  int input = 1;
  std::vector<int> hidden{32, 64};
  int output = 1;
  double dropout = 0.2;  // training only, hidden layers only

  void validate() const;
};

/// Registers `prefix.W<i>` / `prefix.b<i>` with Glorot weights and zero biases.
void register_mlp(ParamStore& params, const std::string& prefix, const MlpSpec& spec, Rng& rng);

/// Inverted-dropout masks for one MLP, one per hidden layer, shaped
/// width x columns. Empty when dropout is off.
struct DropoutMasks {
  std::vector<Matrix> layers;
  bool empty() const noexcept { return layers.empty(); }
};

DropoutMasks sample_masks(const MlpSpec& spec, Eigen::Index columns, Rng& rng);

/// Binds an MLP's parameters on a tape once so repeated evaluations (one per
/// solver step) reuse the same leaves.
class MlpOnTape {
 public:
  MlpOnTape(ad::Tape& tape, const ParamStore& params, const std::string& prefix, const MlpSpec& spec);

  /// x is input x columns; masks may be empty (evaluation mode).
  ad::Var operator()(const ad::Var& x, const DropoutMasks& masks = {}) const;

  const MlpSpec& spec() const noexcept { return spec_; }

 private:
  MlpSpec spec_;
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

/// Single-vector evaluation of an MLP. With training set, masks are drawn from rng.
Vector mlp_eval(const MlpSpec& spec, const ParamStore& params, const std::string& prefix, const Vector& x,
                bool training, Rng* rng = nullptr);

struct SoftmaxResult {
  Vector weights;
  double temperature = 1.0;        // temperature actually used
  std::optional<std::string> warning;  // set when the requested temperature was clamped
};

/// exp(l_i / tau - m) / sum_j exp(l_j / tau - m), m = max_j l_j / tau.
/// Temperatures below `floor` are clamped and reported.
SoftmaxResult softmax_stable(const Vector& logits, double temperature = 1.0, double floor = 0.1);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const ParamStore& params, double learning_rate = 1e-3);
};

/// Bias-corrected Adam update. Throws Errc::non_finite_gradient (naming the
/// offending parameter) before touching any state if a gradient is not finite.
void adam_step(AdamState& state, ParamStore& params, const GradStore& grads);

}  // namespace fame

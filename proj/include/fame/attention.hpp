#pragma once

#include <array>

#include "fame/autodiff.hpp"
#include "fame/funcpath.hpp"

namespace fame {

/// Continuous self-attention over one latent trajectory. Integrals over
/// [0, 1] use the trapezoid rule on the shared quadrature grid.
struct AttentionConfig {
  int latent = 32;  // 2h
  int dim = 32;     // d_f
  double temperature = 1.0;
  double temperature_floor = 0.1;

  void validate() const;
  /// Temperature after applying the floor.
  double effective_temperature() const;
  /// Multiplier applied to <Q, K>: 1 / (sqrt(d_f) * tau).
  double score_scale() const;
};

/// Parameters attn.WQ, attn.WK, attn.WV (d_f x 2h).
void register_attention(ParamStore& params, const AttentionConfig& cfg, Rng& rng);

Vector trapezoid_weights(const QuadratureGrid& grid);

/// Q, K, V trajectories (d_f x G) of a latent trajectory Z (2h x G).
std::array<Matrix, 3> qkv_project(const ParamStore& params, const Matrix& z);

/// Normalised densities a(t_a, tau_b) (G x G): every row integrates to 1
/// under the trapezoid rule.
Matrix attention_weights(const AttentionConfig& cfg, const Matrix& q, const Matrix& k, const QuadratureGrid& grid);

/// Zhat(t_a) = trapezoid_b a(t_a, tau_b) V(tau_b); returns d_f x G.
Matrix attend(const Matrix& weights, const Matrix& v, const QuadratureGrid& grid);

/// Smallest row normaliser min_a trapezoid_b exp(score_ab / tau), returned
/// as its logarithm to avoid overflow.
double log_min_normaliser(const AttentionConfig& cfg, const Matrix& q, const Matrix& k, const QuadratureGrid& grid);

/// Batched tape version. z has columns g * columns + n (grid-major); the
/// result has the same layout with d_f rows.
ad::Var continuous_attention(ad::Tape& tape, const ParamStore& params, const AttentionConfig& cfg, const ad::Var& z,
                             Eigen::Index columns, const QuadratureGrid& grid);

}  // namespace fame

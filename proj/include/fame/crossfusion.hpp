#pragma once

#include <vector>

#include "fame/autodiff.hpp"
#include "fame/funcpath.hpp"

namespace fame {

/// Pointwise multi-head attention across input channels.
struct CrossConfig {
  int heads = 4;       // M
  int head_dim = 8;    // d_c
  int input_dim = 32;  // d_f
  int output_dim = 32;  // 2h
  double norm_cap = 3.0;  // M_mat
  bool enabled = true;    // false: H^(j) = W_bypass Zhat^(j)

  void validate() const;
};

/// Parameters cross.WQ.<p>, cross.WK.<p>, cross.WV.<p> (d_c x d_f) and
/// cross.WO (2h x M d_c); or cross.bypass (2h x d_f) when disabled.
/// Matrices are rescaled at creation so that their operator norm is at most norm_cap.
void register_cross(ParamStore& params, const CrossConfig& cfg, Rng& rng);

/// Largest singular value estimated by power iteration on A^T A.
double operator_norm(const Matrix& a, int iterations = 100);

/// Largest operator norm among the cross-attention matrices.
double max_cross_norm(const ParamStore& params, const CrossConfig& cfg);

/// Rescales any cross-attention matrix whose norm exceeds the cap. Returns
/// the number of matrices that were rescaled.
int enforce_norm_cap(ParamStore& params, const CrossConfig& cfg);

/// beta(j, l) = softmax over l of <q_j, k_l> / sqrt(d_c); q and k are d_c x d.
Matrix cross_weights(const Matrix& q, const Matrix& k);

/// W_O [beta_1 V_1 ; ... ; beta_M V_M] per channel: betas are d x d, values d_c x d.
/// Returns 2h x d.
Matrix fuse_heads(const std::vector<Matrix>& betas, const std::vector<Matrix>& values, const Matrix& w_o);

/// Fused vectors (2h x d) of the attended latents of all channels (d_f x d) at one instant.
Matrix fuse_instant(const ParamStore& params, const CrossConfig& cfg, const Matrix& zhat);

/// Pointwise concatenation of per-channel trajectories (each rows x G) with
/// a trailing time row; returns (rows d + 1) x G.
Matrix stack_context(const std::vector<Matrix>& channels, const QuadratureGrid& grid);

/// Inverse of stack_context without the time row.
std::vector<Matrix> unstack_context(const Matrix& stacked, int channels);

/// Batched tape version. zhat is d_f x (G S d) with column (g S + s) d + j.
/// Returns 2h x (G S d) in the same order.
ad::Var cross_fuse(ad::Tape& tape, const ParamStore& params, const CrossConfig& cfg, const ad::Var& zhat,
                   Eigen::Index channels);

/// Reshapes fused columns (2h x (G S d)) into the decoder control path
/// ((2h d + 1) x (G S), column g S + s) with the time row appended.
ad::Var stack_context(ad::Tape& tape, const ad::Var& fused, Eigen::Index channels, const QuadratureGrid& grid,
                      Eigen::Index samples);

}  // namespace fame

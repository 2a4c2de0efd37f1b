#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fame/autodiff.hpp"
#include "fame/funcpath.hpp"
#include "fame/nn.hpp"

namespace fame {

enum class SolverScheme { euler, midpoint };

struct EncoderConfig {
  int hidden = 16;           // h
  int experts = 3;           // K
  int summary_dim = 8;       // h0, also the number of convolution filters
  int conv_width = 3;
  int router_resolution = 32;  // uniform resampling of the path fed to the router
  std::vector<int> mlp_widths{32, 64};
  double dropout = 0.2;
  bool bidirectional = true;
  SolverScheme scheme = SolverScheme::euler;

  void validate() const;
  MlpSpec expert_spec() const;  // h -> 2h (one column per control channel)
  MlpSpec init_spec() const;    // (x, t) -> h
  MlpSpec gate_spec() const;    // h0 -> K
};

/// Parameters:
///   router.conv.W (h0 x width), router.conv.b, router.gate.*   (only when K > 1)
///   enc.init.fwd.*, enc.init.bwd.*, enc.expert.fwd.<k>.*, enc.expert.bwd.<k>.*
/// Expert banks are shared by all input channels; the router specialises
/// the mixture per function.
void register_encoder(ParamStore& params, const EncoderConfig& cfg, Rng& rng);

// ---- router ----------------------------------------------------------------

/// Path values at `resolution` uniform instants of [0, 1].
std::vector<double> resample_path(const ControlPath& path, int resolution);

/// Mean over positions of every length-`width` window of `sequence`
/// (valid convolution). Sequences shorter than the window are reflect-padded.
Vector conv_window_means(std::span<const double> sequence, int width);

/// 1-D convolution (filters are rows of conv_w) followed by global average pooling.
Vector conv_pool_summary(std::span<const double> sequence, const Matrix& conv_w, const Vector& conv_b);

/// Router summary of a function: ConvPool over its resampled control path.
Vector conv_pool_summary(const ControlPath& path, const ParamStore& params, const EncoderConfig& cfg);

/// softmax(g_phi(summary)); K = 1 yields [1].
Vector route_gates(const Vector& summary, const ParamStore& params, const EncoderConfig& cfg);

// ---- vector fields and the solver ------------------------------------------

/// Expert networks of one direction bound on a tape, with their dropout masks.
struct ExpertBank {
  std::vector<MlpOnTape> experts;
  std::vector<DropoutMasks> masks;
};

ExpertBank bind_experts(ad::Tape& tape, const ParamStore& params, const EncoderConfig& cfg, const char* direction,
                        Eigen::Index columns, bool training, Rng* rng);

/// sum_k gates(k) f_k(z): a (2h) x N matrix whose rows [c*h, (c+1)*h) act on control channel c.
ad::Var mixed_field(const ad::Var& gates, const ExpertBank& bank, const ad::Var& z);

using FieldFn = std::function<ad::Var(const ad::Var&)>;

/// Discretised solution of dz = f(z) dX over the increments (channels x columns
/// per interval). Returns the state at every grid point, init first. A
/// non-finite state raises Errc::solver_divergence naming the step.
std::vector<ad::Var> solve_cde(const FieldFn& field, const ad::Var& init, std::span<const Matrix> increments,
                               SolverScheme scheme = SolverScheme::euler);
/// Same, with increments that are themselves tape values (the decoder's context path).
std::vector<ad::Var> solve_cde(const FieldFn& field, const ad::Var& init, std::span<const ad::Var> increments,
                               SolverScheme scheme = SolverScheme::euler);

/// Everything the encoder needs about one input channel on a fixed grid.
struct ChannelInputs {
  Matrix fwd_increments;  // 2 x (G-1): (dt, dx) per interval
  Matrix bwd_increments;  // 2 x (G-1): increments of the reversed path, reversed-time order
  double first_value = 0.0;
  double last_value = 0.0;
  Vector router_windows;  // conv_width
};

ChannelInputs prepare_channel(const ControlPath& path, const QuadratureGrid& grid, const EncoderConfig& cfg);

/// Batched encoder inputs; column n is one (sample, channel) function.
struct EncoderBatch {
  std::vector<Matrix> fwd;  // G-1 entries of 2 x N
  std::vector<Matrix> bwd;
  Matrix init_fwd;  // 2 x N: (x(0), 0)
  Matrix init_bwd;  // 2 x N: (x(1), 1)
  Matrix windows;   // conv_width x N

  Eigen::Index columns() const { return init_fwd.cols(); }
};

EncoderBatch assemble(std::span<const ChannelInputs* const> channels);

struct EncoderOutput {
  ad::Var gates;                // K x N
  std::vector<ad::Var> states;  // per grid point, 2h x N: [Z_fwd; Z_bwd]
};

EncoderOutput encode(ad::Tape& tape, const ParamStore& params, const EncoderConfig& cfg, const EncoderBatch& batch,
                     bool training, Rng* rng);

/// Single-function convenience wrapper; returns the 2h x G latent trajectory.
Matrix encode_channel(const ParamStore& params, const EncoderConfig& cfg, const ControlPath& path,
                      const QuadratureGrid& grid);

}  // namespace fame

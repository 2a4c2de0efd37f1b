#pragma once

#include <span>
#include <vector>

#include "fame/autodiff.hpp"
#include "fame/encoder.hpp"
#include "fame/funcpath.hpp"
#include "fame/nn.hpp"

namespace fame {

/// CDE decoder dy = f(y) dH driven by the stacked context path H
/// (2h d context rows plus the time row).
struct DecoderConfig {
  int outputs = 1;        // m
  int context_dim = 97;   // 2h d + 1, time row included
  std::vector<int> mlp_widths{32, 64};
  double dropout = 0.2;
  bool per_output = false;  // one field network per output instead of a shared one
  SolverScheme scheme = SolverScheme::euler;

  void validate() const;
  MlpSpec field_spec() const;
};

/// Parameters dec.init.W (m x (C - 1)), dec.init.b, and dec.field.* (shared)
/// or dec.field.<zeta>.* (per output).
void register_decoder(ParamStore& params, const DecoderConfig& cfg, Rng& rng);

/// Solves the decoder along the context path. h is C x (G S) with column
/// g S + s; returns the m x (G S) states in the same layout.
ad::Var decode_states(ad::Tape& tape, const ParamStore& params, const DecoderConfig& cfg, const ad::Var& h,
                      Eigen::Index samples, bool training, Rng* rng);

/// Appends interpolation entries that read output `output` of sample
/// `sample` at the normalized instants `queries`. Queries outside [0, 1]
/// raise Errc::domain.
void append_readout(std::vector<ad::InterpEntry>& entries, const QuadratureGrid& grid, std::span<const double> queries,
                    Eigen::Index output, Eigen::Index sample, Eigen::Index samples);

/// Evaluation-mode decode of one sample: h is C x G on `grid`, queries are
/// sorted instants in [0, 1]. Returns m x queries.size().
Matrix decode(const ParamStore& params, const DecoderConfig& cfg, const Matrix& h, const QuadratureGrid& grid,
              std::span<const double> queries);

}  // namespace fame

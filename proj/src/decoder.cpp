#include "fame/decoder.hpp"

#include <algorithm>
#include <string>

#include "fame/error.hpp"

namespace fame {

void DecoderConfig::validate() const {
  if (outputs < 1) throw Error(Errc::config, "decoder needs at least one output");
  if (context_dim < 2) throw Error(Errc::config, "decoder context must hold at least one channel and time");
  field_spec().validate();
}

MlpSpec DecoderConfig::field_spec() const {
  return MlpSpec{outputs, mlp_widths, per_output ? context_dim : outputs * context_dim, dropout};
}

void register_decoder(ParamStore& params, const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  params.add("dec.init.W", glorot_uniform(cfg.outputs, cfg.context_dim - 1, rng));
  params.add("dec.init.b", Matrix::Zero(cfg.outputs, 1));
  if (cfg.per_output) {
    for (int z = 0; z < cfg.outputs; ++z) register_mlp(params, "dec.field." + std::to_string(z), cfg.field_spec(), rng);
  } else {
    register_mlp(params, "dec.field", cfg.field_spec(), rng);
  }
}

ad::Var decode_states(ad::Tape& tape, const ParamStore& params, const DecoderConfig& cfg, const ad::Var& h,
                      Eigen::Index samples, bool training, Rng* rng) {
  if (h.rows() != cfg.context_dim) {
    throw Error(Errc::dimension, "context path has " + std::to_string(h.rows()) + " rows, decoder expects " +
                                     std::to_string(cfg.context_dim));
  }
  if (samples < 1 || h.cols() % samples != 0 || h.cols() / samples < 2) {
    throw Error(Errc::dimension, "context path columns do not form a grid of at least two points");
  }
  const bool drop = training && cfg.dropout > 0.0;
  if (drop && rng == nullptr) throw Error(Errc::config, "training-mode decoding needs an rng");
  const Eigen::Index g_count = h.cols() / samples;
  const Eigen::Index m = cfg.outputs;
  const Eigen::Index c_dim = cfg.context_dim;

  const ad::Var h0 = ad::row_block(ad::col_block(h, 0, samples), 0, c_dim - 1);
  const ad::Var y0 = ad::affine(tape.parameter(params, "dec.init.W"), h0, tape.parameter(params, "dec.init.b"));

  std::vector<ad::Var> dh;
  dh.reserve(static_cast<std::size_t>(g_count - 1));
  ad::Var prev = ad::col_block(h, 0, samples);
  for (Eigen::Index g = 1; g < g_count; ++g) {
    ad::Var cur = ad::col_block(h, g * samples, samples);
    dh.push_back(ad::sub(cur, prev));
    prev = cur;
  }

  FieldFn field;
  std::vector<MlpOnTape> nets;
  std::vector<DropoutMasks> masks;
  const MlpSpec spec = cfg.field_spec();
  const int n_nets = cfg.per_output ? cfg.outputs : 1;
  for (int z = 0; z < n_nets; ++z) {
    nets.emplace_back(tape, params, cfg.per_output ? "dec.field." + std::to_string(z) : std::string("dec.field"), spec);
    masks.push_back(drop ? sample_masks(spec, samples, *rng) : DropoutMasks{});
  }
  if (!cfg.per_output) {
    field = [&](const ad::Var& y) { return nets[0](y, masks[0]); };
  } else {
    // Stacked per-output fields have rows zeta C + c; the step wants c m + zeta.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m * c_dim));
    for (Eigen::Index c = 0; c < c_dim; ++c)
      for (Eigen::Index z = 0; z < m; ++z) order[static_cast<std::size_t>(c * m + z)] = z * c_dim + c;
    field = [&, order](const ad::Var& y) {
      std::vector<ad::Var> parts;
      for (int z = 0; z < cfg.outputs; ++z) parts.push_back(nets[static_cast<std::size_t>(z)](y, masks[static_cast<std::size_t>(z)]));
      return ad::gather_rows(ad::vstack(parts), order);
    };
  }
  const auto states = solve_cde(field, y0, std::span<const ad::Var>(dh), cfg.scheme);
  return ad::hstack(states);
}

void append_readout(std::vector<ad::InterpEntry>& entries, const QuadratureGrid& grid, std::span<const double> queries,
                    Eigen::Index output, Eigen::Index sample, Eigen::Index samples) {
  const auto& u = grid.points;
  if (u.size() < 2) throw Error(Errc::quadrature, "readout grid needs at least two points");
  for (double s : queries) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error(Errc::domain, "decoder query " + std::to_string(s) + " outside [0, 1]");
    auto it = std::upper_bound(u.begin(), u.end(), s);
    std::size_t k = it == u.begin() ? 0 : static_cast<std::size_t>(it - u.begin()) - 1;
    k = std::min(k, u.size() - 2);
    const double w = (s - u[k]) / (u[k + 1] - u[k]);
    const auto ki = static_cast<Eigen::Index>(k);
    entries.push_back({output, ki * samples + sample, (ki + 1) * samples + sample, w});
  }
}

Matrix decode(const ParamStore& params, const DecoderConfig& cfg, const Matrix& h, const QuadratureGrid& grid,
              std::span<const double> queries) {
  if (!std::is_sorted(queries.begin(), queries.end())) throw Error(Errc::ordering, "decoder queries must be sorted");
  if (h.cols() != static_cast<Eigen::Index>(grid.size())) throw Error(Errc::grid_mismatch, "context path is not on the grid");
  if (!h.allFinite()) throw Error(Errc::domain, "context path must be finite");
  ad::Tape tape;
  const ad::Var states = decode_states(tape, params, cfg, tape.constant(h), 1, false, nullptr);
  Matrix out(cfg.outputs, static_cast<Eigen::Index>(queries.size()));
  for (int z = 0; z < cfg.outputs; ++z) {
    std::vector<ad::InterpEntry> entries;
    append_readout(entries, grid, queries, z, 0, 1);
    out.row(z) = ad::interp_gather(states, std::move(entries)).value().row(0);
  }
  return out;
}

}  // namespace fame

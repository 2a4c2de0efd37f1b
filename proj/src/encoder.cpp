#include "fame/encoder.hpp"

#include <cmath>

#include "fame/error.hpp"

namespace fame {

void EncoderConfig::validate() const {
  if (hidden <= 0 || experts <= 0 || summary_dim <= 0 || conv_width <= 0 || router_resolution < 2) {
    throw Error(Errc::config, "encoder dimensions must be positive (router resolution >= 2)");
  }
}

MlpSpec EncoderConfig::expert_spec() const { return MlpSpec{hidden, mlp_widths, 2 * hidden, dropout}; }
MlpSpec EncoderConfig::init_spec() const { return MlpSpec{2, mlp_widths, hidden, dropout}; }
MlpSpec EncoderConfig::gate_spec() const { return MlpSpec{summary_dim, mlp_widths, experts, dropout}; }

void register_encoder(ParamStore& params, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.experts > 1) {
    params.add("router.conv.W", glorot_uniform(cfg.summary_dim, cfg.conv_width, rng));
    params.add("router.conv.b", Matrix::Zero(cfg.summary_dim, 1));
    register_mlp(params, "router.gate", cfg.gate_spec(), rng);
  }
  register_mlp(params, "enc.init.fwd", cfg.init_spec(), rng);
  if (cfg.bidirectional) register_mlp(params, "enc.init.bwd", cfg.init_spec(), rng);
  for (int k = 0; k < cfg.experts; ++k) {
    register_mlp(params, "enc.expert.fwd." + std::to_string(k), cfg.expert_spec(), rng);
  }
  if (cfg.bidirectional) {
    for (int k = 0; k < cfg.experts; ++k) {
      register_mlp(params, "enc.expert.bwd." + std::to_string(k), cfg.expert_spec(), rng);
    }
  }
}

std::vector<double> resample_path(const ControlPath& path, int resolution) {
  if (resolution < 2) throw Error(Errc::config, "router resolution must be at least 2");
  std::vector<double> out(static_cast<std::size_t>(resolution));
  for (int i = 0; i < resolution; ++i) {
    const double t = i == resolution - 1 ? 1.0 : static_cast<double>(i) / (resolution - 1);
    out[static_cast<std::size_t>(i)] = path.value_at(t);
  }
  return out;
}

Vector conv_window_means(std::span<const double> sequence, int width) {
  if (sequence.empty()) throw Error(Errc::degenerate_sample, "convolution over an empty sequence");
  if (width <= 0) throw Error(Errc::config, "convolution width must be positive");
  const long n = static_cast<long>(sequence.size());
  std::vector<double> seq;
  if (n >= width) {
    seq.assign(sequence.begin(), sequence.end());
  } else {
    // Reflect-pad without repeating the edge sample: [c b | a b c | b a].
    const long pad = width - n;
    const long left = pad / 2;
    const long period = n > 1 ? 2 * (n - 1) : 1;
    for (long i = -left; i < n + (pad - left); ++i) {
      long j = ((i % period) + period) % period;
      if (j >= n) j = period - j;
      seq.push_back(sequence[static_cast<std::size_t>(n > 1 ? j : 0)]);
    }
  }
  const std::size_t positions = seq.size() - static_cast<std::size_t>(width) + 1;
  Vector means = Vector::Zero(width);
  for (std::size_t p = 0; p < positions; ++p)
    for (int k = 0; k < width; ++k) means[k] += seq[p + static_cast<std::size_t>(k)];
  return means / static_cast<double>(positions);
}

Vector conv_pool_summary(std::span<const double> sequence, const Matrix& conv_w, const Vector& conv_b) {
  if (conv_b.size() != conv_w.rows()) throw Error(Errc::dimension, "convolution bias must match filter count");
  return conv_w * conv_window_means(sequence, static_cast<int>(conv_w.cols())) + conv_b;
}

Vector conv_pool_summary(const ControlPath& path, const ParamStore& params, const EncoderConfig& cfg) {
  const auto seq = resample_path(path, cfg.router_resolution);
  return conv_pool_summary(seq, params["router.conv.W"], params["router.conv.b"].col(0));
}

Vector route_gates(const Vector& summary, const ParamStore& params, const EncoderConfig& cfg) {
  if (cfg.experts == 1) return Vector::Ones(1);
  if (summary.size() != cfg.summary_dim) throw Error(Errc::dimension, "router summary has the wrong dimension");
  const Vector logits = mlp_eval(cfg.gate_spec(), params, "router.gate", summary, false);
  return softmax_stable(logits, 1.0).weights;
}

ExpertBank bind_experts(ad::Tape& tape, const ParamStore& params, const EncoderConfig& cfg, const char* direction,
                        Eigen::Index columns, bool training, Rng* rng) {
  ExpertBank bank;
  const MlpSpec spec = cfg.expert_spec();
  for (int k = 0; k < cfg.experts; ++k) {
    bank.experts.emplace_back(tape, params, std::string("enc.expert.") + direction + "." + std::to_string(k), spec);
    // One mask per expert per pass: the field stays fixed along the solve.
    bank.masks.push_back(training && rng != nullptr ? sample_masks(spec, columns, *rng) : DropoutMasks{});
  }
  return bank;
}

ad::Var mixed_field(const ad::Var& gates, const ExpertBank& bank, const ad::Var& z) {
  if (bank.experts.size() == 1) return bank.experts[0](z, bank.masks[0]);
  std::vector<ad::Var> outs;
  outs.reserve(bank.experts.size());
  for (std::size_t k = 0; k < bank.experts.size(); ++k) outs.push_back(bank.experts[k](z, bank.masks[k]));
  return ad::mix(gates, outs);
}

std::vector<ad::Var> solve_cde(const FieldFn& field, const ad::Var& init, std::span<const ad::Var> increments,
                               SolverScheme scheme) {
  std::vector<ad::Var> states;
  states.reserve(increments.size() + 1);
  states.push_back(init);
  ad::Var z = init;
  for (std::size_t k = 0; k < increments.size(); ++k) {
    const ad::Var& dx = increments[k];
    if (scheme == SolverScheme::euler) {
      z = ad::cde_step(z, field(z), dx);
    } else {
      const ad::Var mid = ad::cde_step(z, field(z), ad::scale(dx, 0.5));
      z = ad::cde_step(z, field(mid), dx);
    }
    if (!z.value().allFinite()) {
      throw Error(Errc::solver_divergence, "CDE state became non-finite at step " + std::to_string(k + 1) +
                                               " of " + std::to_string(increments.size()));
    }
    states.push_back(z);
  }
  return states;
}

std::vector<ad::Var> solve_cde(const FieldFn& field, const ad::Var& init, std::span<const Matrix> increments,
                               SolverScheme scheme) {
  ad::Tape& tape = *init.tape();
  std::vector<ad::Var> dx;
  dx.reserve(increments.size());
  for (const Matrix& m : increments) dx.push_back(tape.constant(m));
  return solve_cde(field, init, std::span<const ad::Var>(dx), scheme);
}

ChannelInputs prepare_channel(const ControlPath& path, const QuadratureGrid& grid, const EncoderConfig& cfg) {
  const auto inc = increments(path, grid);
  const Eigen::Index steps = static_cast<Eigen::Index>(inc.size());
  ChannelInputs ch;
  ch.fwd_increments.resize(2, steps);
  ch.bwd_increments.resize(2, steps);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const auto& d = inc[static_cast<std::size_t>(k)];
    ch.fwd_increments(0, k) = d[0];
    ch.fwd_increments(1, k) = d[1];
    // The reversed path X~(u) = X(1 - u) on the reflected grid traverses the
    // same intervals backwards: the time channel still advances, the data
    // channel increments flip sign.
    const auto& r = inc[static_cast<std::size_t>(steps - 1 - k)];
    ch.bwd_increments(0, k) = r[0];
    ch.bwd_increments(1, k) = -r[1];
  }
  ch.first_value = path.value_at(0.0);
  ch.last_value = path.value_at(1.0);
  ch.router_windows = conv_window_means(resample_path(path, cfg.router_resolution), cfg.conv_width);
  return ch;
}

EncoderBatch assemble(std::span<const ChannelInputs* const> channels) {
  if (channels.empty()) throw Error(Errc::dimension, "empty encoder batch");
  const Eigen::Index n = static_cast<Eigen::Index>(channels.size());
  const Eigen::Index steps = channels[0]->fwd_increments.cols();
  const Eigen::Index width = channels[0]->router_windows.size();
  EncoderBatch b;
  b.fwd.assign(static_cast<std::size_t>(steps), Matrix(2, n));
  b.bwd.assign(static_cast<std::size_t>(steps), Matrix(2, n));
  b.init_fwd.resize(2, n);
  b.init_bwd.resize(2, n);
  b.windows.resize(width, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const ChannelInputs& ch = *channels[static_cast<std::size_t>(c)];
    if (ch.fwd_increments.cols() != steps) throw Error(Errc::grid_mismatch, "batched channels must share a grid");
    for (Eigen::Index k = 0; k < steps; ++k) {
      b.fwd[static_cast<std::size_t>(k)].col(c) = ch.fwd_increments.col(k);
      b.bwd[static_cast<std::size_t>(k)].col(c) = ch.bwd_increments.col(k);
    }
    b.init_fwd(0, c) = ch.first_value;
    b.init_fwd(1, c) = 0.0;
    b.init_bwd(0, c) = ch.last_value;
    b.init_bwd(1, c) = 1.0;
    b.windows.col(c) = ch.router_windows;
  }
  return b;
}

EncoderOutput encode(ad::Tape& tape, const ParamStore& params, const EncoderConfig& cfg, const EncoderBatch& batch,
                     bool training, Rng* rng) {
  const Eigen::Index n = batch.columns();
  const bool drop = training && rng != nullptr;
  EncoderOutput out;
  if (cfg.experts == 1) {
    out.gates = tape.constant(Matrix::Ones(1, n));
  } else {
    const ad::Var summary = ad::affine(tape.parameter(params, "router.conv.W"), tape.constant(batch.windows),
                                       tape.parameter(params, "router.conv.b"));
    MlpOnTape gate(tape, params, "router.gate", cfg.gate_spec());
    const DropoutMasks masks = drop ? sample_masks(cfg.gate_spec(), n, *rng) : DropoutMasks{};
    out.gates = ad::softmax_cols(gate(summary, masks));
  }

  MlpOnTape init_fwd(tape, params, "enc.init.fwd", cfg.init_spec());
  const ad::Var z0 =
      init_fwd(tape.constant(batch.init_fwd), drop ? sample_masks(cfg.init_spec(), n, *rng) : DropoutMasks{});
  const ExpertBank fwd_bank = bind_experts(tape, params, cfg, "fwd", n, training, rng);
  const ad::Var gates = out.gates;
  const auto fwd_states =
      solve_cde([&](const ad::Var& z) { return mixed_field(gates, fwd_bank, z); }, z0, batch.fwd, cfg.scheme);

  const std::size_t g_count = fwd_states.size();
  out.states.reserve(g_count);
  if (!cfg.bidirectional) {
    for (const auto& s : fwd_states) {
      const ad::Var parts[] = {s, s};
      out.states.push_back(ad::vstack(parts));
    }
    return out;
  }

  MlpOnTape init_bwd(tape, params, "enc.init.bwd", cfg.init_spec());
  const ad::Var zb0 =
      init_bwd(tape.constant(batch.init_bwd), drop ? sample_masks(cfg.init_spec(), n, *rng) : DropoutMasks{});
  const ExpertBank bwd_bank = bind_experts(tape, params, cfg, "bwd", n, training, rng);
  const auto bwd_states =
      solve_cde([&](const ad::Var& z) { return mixed_field(gates, bwd_bank, z); }, zb0, batch.bwd, cfg.scheme);
  for (std::size_t g = 0; g < g_count; ++g) {
    const ad::Var parts[] = {fwd_states[g], bwd_states[g_count - 1 - g]};
    out.states.push_back(ad::vstack(parts));
  }
  return out;
}

Matrix encode_channel(const ParamStore& params, const EncoderConfig& cfg, const ControlPath& path,
                      const QuadratureGrid& grid) {
  const ChannelInputs ch = prepare_channel(path, grid, cfg);
  const ChannelInputs* ptr[] = {&ch};
  const EncoderBatch batch = assemble(ptr);
  ad::Tape tape;
  const EncoderOutput out = encode(tape, params, cfg, batch, false, nullptr);
  Matrix z(2 * cfg.hidden, static_cast<Eigen::Index>(out.states.size()));
  for (std::size_t g = 0; g < out.states.size(); ++g) z.col(static_cast<Eigen::Index>(g)) = out.states[g].value();
  return z;
}

}  // namespace fame

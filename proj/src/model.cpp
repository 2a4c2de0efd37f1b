#include "fame/model.hpp"

#include <map>

#include "fame/error.hpp"

namespace fame {

void ModelConfig::finalize() {
  attention.latent = 2 * encoder.hidden;
  cross.input_dim = attention.dim;
  cross.output_dim = 2 * encoder.hidden;
  decoder.context_dim = 2 * encoder.hidden * inputs + 1;
  decoder.outputs = outputs;
  decoder.mlp_widths = encoder.mlp_widths;
  decoder.dropout = encoder.dropout;
  decoder.scheme = encoder.scheme;
}

void ModelConfig::validate() const {
  if (inputs < 1 || outputs < 1) throw Error(Errc::config, "model needs at least one input and one output");
  if (grid_size < 2) throw Error(Errc::config, "grid size must be at least 2");
  encoder.validate();
  attention.validate();
  cross.validate();
  decoder.validate();
  if (attention.latent != 2 * encoder.hidden || cross.input_dim != attention.dim ||
      cross.output_dim != 2 * encoder.hidden || decoder.context_dim != 2 * encoder.hidden * inputs + 1 ||
      decoder.outputs != outputs) {
    throw Error(Errc::config, "sub-configurations disagree; call finalize()");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"inputs", c.inputs},
          {"outputs", c.outputs},
          {"grid_size", c.grid_size},
          {"interp", c.interp == Interp::linear ? "linear" : "cubic"},
          {"hidden", c.encoder.hidden},
          {"experts", c.encoder.experts},
          {"summary_dim", c.encoder.summary_dim},
          {"conv_width", c.encoder.conv_width},
          {"router_resolution", c.encoder.router_resolution},
          {"mlp_widths", c.encoder.mlp_widths},
          {"dropout", c.encoder.dropout},
          {"bidirectional", c.encoder.bidirectional},
          {"scheme", c.encoder.scheme == SolverScheme::euler ? "euler" : "midpoint"},
          {"attn_dim", c.attention.dim},
          {"temperature", c.attention.temperature},
          {"temperature_floor", c.attention.temperature_floor},
          {"heads", c.cross.heads},
          {"head_dim", c.cross.head_dim},
          {"norm_cap", c.cross.norm_cap},
          {"cross", c.cross.enabled},
          {"per_output", c.decoder.per_output}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.inputs = j.at("inputs").get<int>();
  c.outputs = j.at("outputs").get<int>();
  c.grid_size = j.at("grid_size").get<int>();
  c.interp = j.at("interp").get<std::string>() == "cubic" ? Interp::natural_cubic : Interp::linear;
  c.encoder.hidden = j.at("hidden").get<int>();
  c.encoder.experts = j.at("experts").get<int>();
  c.encoder.summary_dim = j.at("summary_dim").get<int>();
  c.encoder.conv_width = j.at("conv_width").get<int>();
  c.encoder.router_resolution = j.at("router_resolution").get<int>();
  c.encoder.mlp_widths = j.at("mlp_widths").get<std::vector<int>>();
  c.encoder.dropout = j.at("dropout").get<double>();
  c.encoder.bidirectional = j.at("bidirectional").get<bool>();
  c.encoder.scheme = j.at("scheme").get<std::string>() == "midpoint" ? SolverScheme::midpoint : SolverScheme::euler;
  c.attention.dim = j.at("attn_dim").get<int>();
  c.attention.temperature = j.at("temperature").get<double>();
  c.attention.temperature_floor = j.at("temperature_floor").get<double>();
  c.cross.heads = j.at("heads").get<int>();
  c.cross.head_dim = j.at("head_dim").get<int>();
  c.cross.norm_cap = j.at("norm_cap").get<double>();
  c.cross.enabled = j.at("cross").get<bool>();
  c.decoder.per_output = j.at("per_output").get<bool>();
  c.finalize();
  return c;
}

std::size_t PreparedSample::output_points() const {
  std::size_t n = 0;
  for (const auto& q : queries) n += q.size();
  return n;
}

FameModel::FameModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  register_encoder(params_, cfg_.encoder, rng);
  register_attention(params_, cfg_.attention, rng);
  register_cross(params_, cfg_.cross, rng);
  register_decoder(params_, cfg_.decoder, rng);
}

FameModel::FameModel(ModelConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  // Shape check against a freshly initialised store.
  const FameModel fresh(cfg_, 0);
  if (fresh.params_.size() != params_.size()) throw Error(Errc::dimension, "parameter set does not match the configuration");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& a = fresh.params_.value(i);
    const Matrix& b = params_[fresh.params_.name(i)];
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw Error(Errc::dimension, "parameter '" + fresh.params_.name(i) + "' has the wrong shape");
    }
  }
}

PreparedSample FameModel::prepare(const Sample& sample) const {
  if (static_cast<int>(sample.inputs.size()) != cfg_.inputs || static_cast<int>(sample.outputs.size()) != cfg_.outputs) {
    throw Error(Errc::dimension, "sample has " + std::to_string(sample.inputs.size()) + " inputs / " +
                                     std::to_string(sample.outputs.size()) + " outputs, model expects " +
                                     std::to_string(cfg_.inputs) + " / " + std::to_string(cfg_.outputs));
  }
  std::vector<ControlPath> paths;
  paths.reserve(sample.inputs.size());
  for (const auto& f : sample.inputs) paths.push_back(build_path(f, cfg_.interp));
  PreparedSample p;
  p.grid = make_grid(std::span<const ControlPath>(paths), cfg_.grid_size);
  for (const auto& path : paths) p.channels.push_back(prepare_channel(path, p.grid, cfg_.encoder));
  for (const auto& f : sample.outputs) {
    validate(f);
    std::vector<double> q(f.times.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = f.times[i] / f.horizon;
    p.queries.push_back(std::move(q));
    p.targets.push_back(f.values);
  }
  return p;
}

ad::Var FameModel::batch_loss(ad::Tape& tape, std::span<const PreparedSample* const> group, double sample_weight,
                              bool training, Rng* rng, ad::Var* predictions) const {
  if (group.empty()) throw Error(Errc::dimension, "empty batch");
  const QuadratureGrid& grid = group[0]->grid;
  const auto s_count = static_cast<Eigen::Index>(group.size());
  const Eigen::Index d = cfg_.inputs;
  std::vector<const ChannelInputs*> cols;
  for (const auto* s : group) {
    if (s->grid.points != grid.points) throw Error(Errc::grid_mismatch, "batched samples must share one grid");
    for (const auto& c : s->channels) cols.push_back(&c);
  }
  const EncoderBatch batch = assemble(cols);
  const EncoderOutput enc = encode(tape, params_, cfg_.encoder, batch, training, rng);
  const ad::Var z = ad::hstack(enc.states);
  const ad::Var zhat = continuous_attention(tape, params_, cfg_.attention, z, s_count * d, grid);
  const ad::Var fused = cross_fuse(tape, params_, cfg_.cross, zhat, d);
  const ad::Var h = stack_context(tape, fused, d, grid, s_count);
  const ad::Var states = decode_states(tape, params_, cfg_.decoder, h, s_count, training, rng);

  std::vector<ad::InterpEntry> entries;
  std::vector<double> target, weight;
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const PreparedSample& ps = *group[static_cast<std::size_t>(s)];
    const double w = sample_weight / static_cast<double>(ps.output_points());
    for (int z_out = 0; z_out < cfg_.outputs; ++z_out) {
      const auto& q = ps.queries[static_cast<std::size_t>(z_out)];
      append_readout(entries, grid, q, z_out, s, s_count);
      const auto& t = ps.targets[static_cast<std::size_t>(z_out)];
      target.insert(target.end(), t.begin(), t.end());
      weight.insert(weight.end(), q.size(), w);
    }
  }
  const ad::Var pred = ad::interp_gather(states, std::move(entries));
  if (predictions != nullptr) *predictions = pred;
  return ad::weighted_sse(pred, Eigen::Map<const Vector>(target.data(), static_cast<Eigen::Index>(target.size())),
                          Eigen::Map<const Vector>(weight.data(), static_cast<Eigen::Index>(weight.size())));
}

std::vector<std::vector<double>> FameModel::predict(const PreparedSample& sample) const {
  return predict(std::span<const PreparedSample>(&sample, 1))[0];
}

std::vector<std::vector<std::vector<double>>> FameModel::predict(std::span<const PreparedSample> samples) const {
  std::vector<const PreparedSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  std::vector<std::vector<std::vector<double>>> out(samples.size());
  for (const auto& group_idx : group_by_grid(ptrs)) {
    std::vector<const PreparedSample*> group;
    for (auto i : group_idx) group.push_back(ptrs[i]);
    ad::Tape tape;
    ad::Var pred;
    batch_loss(tape, group, 1.0, false, nullptr, &pred);
    const Matrix& v = pred.value();
    Eigen::Index e = 0;
    for (auto i : group_idx) {
      const PreparedSample& ps = samples[i];
      for (const auto& q : ps.queries) {
        std::vector<double> y(q.size());
        for (auto& yi : y) yi = v(0, e++);
        out[i].push_back(std::move(y));
      }
    }
  }
  return out;
}

Matrix FameModel::gates(const PreparedSample& sample) const {
  const auto& ec = cfg_.encoder;
  Matrix g(ec.experts, static_cast<Eigen::Index>(sample.channels.size()));
  for (std::size_t j = 0; j < sample.channels.size(); ++j) {
    if (ec.experts == 1) {
      g(0, static_cast<Eigen::Index>(j)) = 1.0;
      continue;
    }
    const Vector summary =
        params_["router.conv.W"] * sample.channels[j].router_windows + params_["router.conv.b"].col(0);
    g.col(static_cast<Eigen::Index>(j)) = route_gates(summary, params_, ec);
  }
  return g;
}

std::vector<std::vector<std::size_t>> group_by_grid(std::span<const PreparedSample* const> samples) {
  std::map<std::vector<double>, std::size_t> index;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [it, inserted] = index.try_emplace(samples[i]->grid.points, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

}  // namespace fame

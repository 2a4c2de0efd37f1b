#include "fame/nn.hpp"

#include <cmath>

#include "fame/error.hpp"

namespace fame {

void MlpSpec::validate() const {
  if (input <= 0 || output <= 0) throw Error(Errc::config, "MLP dimensions must be positive");
  for (int w : hidden)
    if (w <= 0) throw Error(Errc::config, "MLP hidden widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::config, "dropout must lie in [0, 1)");
}

void register_mlp(ParamStore& params, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  spec.validate();
  int fan_in = spec.input;
  for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
    const int fan_out = i < spec.hidden.size() ? spec.hidden[i] : spec.output;
    params.add(prefix + ".W" + std::to_string(i), glorot_uniform(fan_out, fan_in, rng));
    params.add(prefix + ".b" + std::to_string(i), Matrix::Zero(fan_out, 1));
    fan_in = fan_out;
  }
}

DropoutMasks sample_masks(const MlpSpec& spec, Eigen::Index columns, Rng& rng) {
  DropoutMasks masks;
  if (spec.dropout <= 0.0) return masks;
  std::bernoulli_distribution keep(1.0 - spec.dropout);
  const double scale = 1.0 / (1.0 - spec.dropout);
  for (int w : spec.hidden) {
    Matrix m(w, columns);
    for (Eigen::Index c = 0; c < columns; ++c)
      for (Eigen::Index r = 0; r < w; ++r) m(r, c) = keep(rng) ? scale : 0.0;
    masks.layers.push_back(std::move(m));
  }
  return masks;
}

MlpOnTape::MlpOnTape(ad::Tape& tape, const ParamStore& params, const std::string& prefix, const MlpSpec& spec)
    : spec_(spec) {
  for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
    weights_.push_back(tape.parameter(params, prefix + ".W" + std::to_string(i)));
    biases_.push_back(tape.parameter(params, prefix + ".b" + std::to_string(i)));
  }
}

ad::Var MlpOnTape::operator()(const ad::Var& x, const DropoutMasks& masks) const {
  if (x.rows() != spec_.input) {
    throw Error(Errc::dimension, "MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                                     std::to_string(spec_.input));
  }
  ad::Var h = x;
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
    h = ad::tanh(ad::affine(weights_[i], h, biases_[i]));
    if (!masks.empty()) h = ad::mul_const(h, masks.layers[i]);
  }
  return ad::affine(weights_.back(), h, biases_.back());
}

Vector mlp_eval(const MlpSpec& spec, const ParamStore& params, const std::string& prefix, const Vector& x,
                bool training, Rng* rng) {
  ad::Tape tape;
  MlpOnTape mlp(tape, params, prefix, spec);
  DropoutMasks masks;
  if (training) {
    if (rng == nullptr) throw Error(Errc::config, "training-mode MLP evaluation needs an rng");
    masks = sample_masks(spec, 1, *rng);
  }
  return mlp(tape.constant(x), masks).value().col(0);
}

SoftmaxResult softmax_stable(const Vector& logits, double temperature, double floor) {
  SoftmaxResult r;
  if (logits.size() == 0) throw Error(Errc::dimension, "softmax of an empty vector");
  if (!logits.allFinite()) throw Error(Errc::domain, "softmax logits must be finite");
  r.temperature = temperature;
  if (!(temperature >= floor)) {
    r.warning = "temperature " + std::to_string(temperature) + " clamped to floor " + std::to_string(floor);
    r.temperature = floor;
  }
  const Vector scaled = logits / r.temperature;
  const double m = scaled.maxCoeff();
  r.weights = (scaled.array() - m).exp().matrix();
  r.weights /= r.weights.sum();
  return r;
}

AdamState::AdamState(const ParamStore& params, double learning_rate) : lr(learning_rate) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
    v.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void adam_step(AdamState& state, ParamStore& params, const GradStore& grads) {
  if (state.m.size() != params.size() || grads.grads.size() != params.size()) {
    throw Error(Errc::dimension, "optimizer state does not match the parameter store");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads.grads[i].allFinite()) {
      throw Error(Errc::non_finite_gradient, "non-finite gradient for parameter '" + params.name(i) +
                                                 "' at step " + std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseAbs2();
    params.value(i).array() -=
        state.lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

}  // namespace fame

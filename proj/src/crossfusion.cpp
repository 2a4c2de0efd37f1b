#include "fame/crossfusion.hpp"

#include <cmath>
#include <string>

#include "fame/error.hpp"

namespace fame {
namespace {

std::string head_name(const char* kind, int p) { return std::string("cross.") + kind + "." + std::to_string(p); }

std::vector<std::string> cross_matrix_names(const CrossConfig& cfg) {
  if (!cfg.enabled) return {"cross.bypass"};
  std::vector<std::string> names;
  for (int p = 0; p < cfg.heads; ++p) {
    names.push_back(head_name("WQ", p));
    names.push_back(head_name("WK", p));
    names.push_back(head_name("WV", p));
  }
  names.push_back("cross.WO");
  return names;
}

}  // namespace

void CrossConfig::validate() const {
  if (heads < 1 || head_dim < 1 || input_dim < 1 || output_dim < 1) {
    throw Error(Errc::config, "cross-attention dimensions must be positive");
  }
  if (!(norm_cap > 0.0)) throw Error(Errc::config, "cross-attention norm cap must be positive");
}

void register_cross(ParamStore& params, const CrossConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!cfg.enabled) {
    params.add("cross.bypass", glorot_uniform(cfg.output_dim, cfg.input_dim, rng));
  } else {
    for (int p = 0; p < cfg.heads; ++p) {
      params.add(head_name("WQ", p), glorot_uniform(cfg.head_dim, cfg.input_dim, rng));
      params.add(head_name("WK", p), glorot_uniform(cfg.head_dim, cfg.input_dim, rng));
      params.add(head_name("WV", p), glorot_uniform(cfg.head_dim, cfg.input_dim, rng));
    }
    params.add("cross.WO", glorot_uniform(cfg.output_dim, cfg.heads * cfg.head_dim, rng));
  }
  enforce_norm_cap(params, cfg);
}

double operator_norm(const Matrix& a, int iterations) {
  if (a.size() == 0) return 0.0;
  Vector v = Vector::Ones(a.cols()) / std::sqrt(static_cast<double>(a.cols()));
  double sigma = 0.0;
  for (int i = 0; i < iterations; ++i) {
    Vector w = a.transpose() * (a * v);
    const double n = w.norm();
    if (n == 0.0) {
      // Start vector in the null space; fall back to the largest column.
      Eigen::Index c = 0;
      a.colwise().norm().maxCoeff(&c);
      v = Vector::Unit(a.cols(), c);
      w = a.transpose() * (a * v);
      if (w.norm() == 0.0) return 0.0;
    }
    v = w / w.norm();
    sigma = (a * v).norm();
  }
  return sigma;
}

double max_cross_norm(const ParamStore& params, const CrossConfig& cfg) {
  double m = 0.0;
  for (const auto& name : cross_matrix_names(cfg)) m = std::max(m, operator_norm(params[name]));
  return m;
}

int enforce_norm_cap(ParamStore& params, const CrossConfig& cfg) {
  int rescaled = 0;
  for (const auto& name : cross_matrix_names(cfg)) {
    Matrix& w = params[name];
    const double n = operator_norm(w);
    // Matrices already rescaled to the cap may re-measure a few ulps above it.
    if (n > cfg.norm_cap * (1.0 + 1e-9)) {
      w *= cfg.norm_cap / n;
      ++rescaled;
    }
  }
  return rescaled;
}

Matrix cross_weights(const Matrix& q, const Matrix& k) {
  if (q.rows() != k.rows() || q.cols() != k.cols()) {
    throw Error(Errc::dimension, "cross-attention queries and keys must cover the same channels");
  }
  Matrix s = (q.transpose() * k) / std::sqrt(static_cast<double>(q.rows()));
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    const double m = s.row(j).maxCoeff();
    s.row(j) = (s.row(j).array() - m).exp().matrix();
    s.row(j) /= s.row(j).sum();
  }
  return s;
}

Matrix fuse_heads(const std::vector<Matrix>& betas, const std::vector<Matrix>& values, const Matrix& w_o) {
  if (betas.size() != values.size() || betas.empty()) throw Error(Errc::dimension, "one beta per head is required");
  const Eigen::Index d = values[0].cols();
  const Eigen::Index dc = values[0].rows();
  Matrix heads(dc * static_cast<Eigen::Index>(values.size()), d);
  for (std::size_t p = 0; p < values.size(); ++p) {
    if (betas[p].rows() != d || betas[p].cols() != d || values[p].cols() != d || values[p].rows() != dc) {
      throw Error(Errc::dimension, "cross-attention head shapes disagree");
    }
    heads.middleRows(static_cast<Eigen::Index>(p) * dc, dc) = values[p] * betas[p].transpose();
  }
  if (w_o.cols() != heads.rows()) throw Error(Errc::dimension, "output projection width must be M d_c");
  return w_o * heads;
}

Matrix fuse_instant(const ParamStore& params, const CrossConfig& cfg, const Matrix& zhat) {
  if (!cfg.enabled) return params["cross.bypass"] * zhat;
  std::vector<Matrix> betas, values;
  for (int p = 0; p < cfg.heads; ++p) {
    const Matrix q = params[head_name("WQ", p)] * zhat;
    const Matrix k = params[head_name("WK", p)] * zhat;
    betas.push_back(cross_weights(q, k));
    values.push_back(params[head_name("WV", p)] * zhat);
  }
  return fuse_heads(betas, values, params["cross.WO"]);
}

Matrix stack_context(const std::vector<Matrix>& channels, const QuadratureGrid& grid) {
  if (channels.empty()) throw Error(Errc::dimension, "no channels to stack");
  const Eigen::Index g = static_cast<Eigen::Index>(grid.size());
  const Eigen::Index r = channels[0].rows();
  for (const auto& c : channels) {
    if (c.cols() != g || c.rows() != r) throw Error(Errc::grid_mismatch, "channel trajectories are not on the shared grid");
  }
  Matrix out(r * static_cast<Eigen::Index>(channels.size()) + 1, g);
  for (std::size_t j = 0; j < channels.size(); ++j) out.middleRows(static_cast<Eigen::Index>(j) * r, r) = channels[j];
  for (Eigen::Index i = 0; i < g; ++i) out(out.rows() - 1, i) = grid[static_cast<std::size_t>(i)];
  return out;
}

std::vector<Matrix> unstack_context(const Matrix& stacked, int channels) {
  if (channels < 1 || (stacked.rows() - 1) % channels != 0) {
    throw Error(Errc::dimension, "stacked context height is not a multiple of the channel count");
  }
  const Eigen::Index r = (stacked.rows() - 1) / channels;
  std::vector<Matrix> out;
  for (int j = 0; j < channels; ++j) out.push_back(stacked.middleRows(j * r, r));
  return out;
}

ad::Var cross_fuse(ad::Tape& tape, const ParamStore& params, const CrossConfig& cfg, const ad::Var& zhat,
                   Eigen::Index channels) {
  if (zhat.cols() % channels != 0) throw Error(Errc::dimension, "fused columns are not a multiple of the channel count");
  if (!cfg.enabled) return ad::matmul(tape.parameter(params, "cross.bypass"), zhat);
  const ad::GroupLayout layout{zhat.cols() / channels, channels, channels, 1};
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  std::vector<ad::Var> heads;
  for (int p = 0; p < cfg.heads; ++p) {
    const ad::Var q = ad::matmul(tape.parameter(params, head_name("WQ", p)), zhat);
    const ad::Var k = ad::matmul(tape.parameter(params, head_name("WK", p)), zhat);
    const ad::Var v = ad::matmul(tape.parameter(params, head_name("WV", p)), zhat);
    heads.push_back(ad::grouped_attention(q, k, v, layout, scale));
  }
  return ad::matmul(tape.parameter(params, "cross.WO"), ad::vstack(heads));
}

ad::Var stack_context(ad::Tape& tape, const ad::Var& fused, Eigen::Index channels, const QuadratureGrid& grid,
                      Eigen::Index samples) {
  const Eigen::Index g = static_cast<Eigen::Index>(grid.size());
  if (fused.cols() != g * samples * channels) throw Error(Errc::grid_mismatch, "fused columns do not match the grid");
  const ad::Var body = ad::reshape(fused, fused.rows() * channels, g * samples);
  Matrix time(1, g * samples);
  for (Eigen::Index i = 0; i < g; ++i) time.middleCols(i * samples, samples).setConstant(grid[static_cast<std::size_t>(i)]);
  const ad::Var parts[] = {body, tape.constant(std::move(time))};
  return ad::vstack(parts);
}

}  // namespace fame

#include "fame/attention.hpp"

#include <cmath>

#include "fame/error.hpp"

namespace fame {

void AttentionConfig::validate() const {
  if (latent <= 0 || dim <= 0) throw Error(Errc::config, "attention dimensions must be positive");
  if (!(temperature_floor > 0.0)) throw Error(Errc::config, "attention temperature floor must be positive");
}

double AttentionConfig::effective_temperature() const { return std::max(temperature, temperature_floor); }

double AttentionConfig::score_scale() const { return 1.0 / (std::sqrt(static_cast<double>(dim)) * effective_temperature()); }

void register_attention(ParamStore& params, const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  params.add("attn.WQ", glorot_uniform(cfg.dim, cfg.latent, rng));
  params.add("attn.WK", glorot_uniform(cfg.dim, cfg.latent, rng));
  params.add("attn.WV", glorot_uniform(cfg.dim, cfg.latent, rng));
}

Vector trapezoid_weights(const QuadratureGrid& grid) {
  if (grid.size() < 2) throw Error(Errc::quadrature, "trapezoid rule needs at least two grid points");
  const Eigen::Index g = static_cast<Eigen::Index>(grid.size());
  Vector w = Vector::Zero(g);
  for (Eigen::Index i = 0; i + 1 < g; ++i) {
    const double h = grid[static_cast<std::size_t>(i + 1)] - grid[static_cast<std::size_t>(i)];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

std::array<Matrix, 3> qkv_project(const ParamStore& params, const Matrix& z) {
  const Matrix& wq = params["attn.WQ"];
  if (z.rows() != wq.cols()) throw Error(Errc::dimension, "latent width does not match the attention projections");
  return {wq * z, params["attn.WK"] * z, params["attn.WV"] * z};
}

Matrix attention_weights(const AttentionConfig& cfg, const Matrix& q, const Matrix& k, const QuadratureGrid& grid) {
  const Vector w = trapezoid_weights(grid);
  if (q.cols() != w.size() || k.cols() != w.size() || q.rows() != k.rows()) {
    throw Error(Errc::dimension, "query/key trajectories must be d_f x grid size");
  }
  Matrix s = cfg.score_scale() * (q.transpose() * k);
  for (Eigen::Index a = 0; a < s.rows(); ++a) {
    const double m = s.row(a).maxCoeff();  // log-sum-exp shift
    s.row(a) = (s.row(a).array() - m).exp().matrix();
    s.row(a) /= s.row(a).dot(w);
  }
  return s;
}

Matrix attend(const Matrix& weights, const Matrix& v, const QuadratureGrid& grid) {
  const Vector w = trapezoid_weights(grid);
  if (weights.rows() != w.size() || weights.cols() != w.size() || v.cols() != w.size()) {
    throw Error(Errc::dimension, "attention weights / values do not match the grid");
  }
  return v * (weights * w.asDiagonal()).transpose();
}

double log_min_normaliser(const AttentionConfig& cfg, const Matrix& q, const Matrix& k, const QuadratureGrid& grid) {
  const Vector w = trapezoid_weights(grid);
  const Matrix s = cfg.score_scale() * (q.transpose() * k);
  double lo = INFINITY;
  for (Eigen::Index a = 0; a < s.rows(); ++a) {
    const double m = s.row(a).maxCoeff();
    const double l = m + std::log((s.row(a).array() - m).exp().matrix().dot(w));
    lo = std::min(lo, l);
  }
  return lo;
}

ad::Var continuous_attention(ad::Tape& tape, const ParamStore& params, const AttentionConfig& cfg, const ad::Var& z,
                             Eigen::Index columns, const QuadratureGrid& grid) {
  const Vector w = trapezoid_weights(grid);
  const Eigen::Index g = w.size();
  if (z.cols() != g * columns) throw Error(Errc::dimension, "latent batch does not match grid x columns");
  const ad::Var q = ad::matmul(tape.parameter(params, "attn.WQ"), z);
  const ad::Var k = ad::matmul(tape.parameter(params, "attn.WK"), z);
  const ad::Var v = ad::matmul(tape.parameter(params, "attn.WV"), z);
  // Density times quadrature weight is a softmax with log-weight bias, so the
  // trapezoid-normalised integral reduces to grouped discrete attention.
  const ad::GroupLayout layout{columns, g, 1, columns};
  return ad::grouped_attention(q, k, v, layout, cfg.score_scale(), w.array().log().matrix());
}

}  // namespace fame

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fame/decoder.hpp"
#include "fame/error.hpp"
#include "test_util.hpp"

namespace fame {
namespace {

using testing::code_of;
using testing::random_matrix;

DecoderConfig small_decoder(int m = 2, int context_dim = 5, std::vector<int> widths = {5, 6}) {
  DecoderConfig c;
  c.outputs = m;
  c.context_dim = context_dim;
  c.mlp_widths = std::move(widths);
  c.dropout = 0.0;
  return c;
}

ParamStore decoder_params(const DecoderConfig& cfg, std::uint64_t seed) {
  ParamStore ps;
  Rng rng(seed);
  register_decoder(ps, cfg, rng);
  return ps;
}

QuadratureGrid uniform_grid(int n) {
  QuadratureGrid g;
  for (int i = 0; i < n; ++i) g.points.push_back(static_cast<double>(i) / (n - 1));
  return g;
}

// Smooth context path with the time row last.
Matrix smooth_context(const QuadratureGrid& grid, int context_dim, double amplitude = 1.0) {
  Matrix h(context_dim, static_cast<Eigen::Index>(grid.size()));
  for (Eigen::Index k = 0; k < h.cols(); ++k) {
    const double t = grid[static_cast<std::size_t>(k)];
    for (int r = 0; r + 1 < context_dim; ++r) h(r, k) = amplitude * std::sin(2.0 * t * (r + 1) + 0.3 * r);
    h(context_dim - 1, k) = t;
  }
  return h;
}

Vector initial_value(const ParamStore& ps, const Matrix& h) {
  return ps["dec.init.W"] * h.col(0).head(h.rows() - 1) + ps["dec.init.b"];
}

TEST(Decode, ZeroFieldGivesInitialValue) {
  const DecoderConfig cfg = small_decoder();
  ParamStore ps = decoder_params(cfg, 1);
  for (std::size_t s = 0; s < ps.size(); ++s) {
    if (ps.name(s).rfind("dec.field", 0) == 0) ps.value(s).setZero();
  }
  const QuadratureGrid grid = uniform_grid(9);
  const Matrix h = smooth_context(grid, 5);
  const std::vector<double> q{0.0, 0.13, 0.5, 0.77, 1.0};
  const Matrix y = decode(ps, cfg, h, grid, q);
  const Vector y0 = initial_value(ps, h);
  for (Eigen::Index j = 0; j < y.cols(); ++j) EXPECT_LT((y.col(j) - y0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Decode, ConstantPathGivesConstantOutput) {
  const DecoderConfig cfg = small_decoder();
  const ParamStore ps = decoder_params(cfg, 2);
  Rng rng(3);
  const QuadratureGrid grid = uniform_grid(7);
  const Matrix h = random_matrix(5, 1, rng).replicate(1, 7);
  const std::vector<double> q{0.0, 0.21, 0.6, 1.0};
  const Matrix y = decode(ps, cfg, h, grid, q);
  const Vector y0 = initial_value(ps, h);
  for (Eigen::Index j = 0; j < y.cols(); ++j) EXPECT_EQ(y.col(j), y0);
}

TEST(Decode, GridQueriesReturnRawStates) {
  const DecoderConfig cfg = small_decoder();
  const ParamStore ps = decoder_params(cfg, 4);
  const QuadratureGrid grid{{0.0, 0.1, 0.35, 0.4, 0.8, 1.0}};
  const Matrix h = smooth_context(grid, 5);
  ad::Tape tape;
  const Matrix states = decode_states(tape, ps, cfg, tape.constant(h), 1, false, nullptr).value();
  const Matrix y = decode(ps, cfg, h, grid, grid.points);
  EXPECT_EQ(y, states);
}

// Off-grid readout against a solve on the grid refined four times.
double refined_error(const DecoderConfig& cfg, const ParamStore& ps, int n) {
  const QuadratureGrid coarse = uniform_grid(n);
  const QuadratureGrid fine = uniform_grid(4 * (n - 1) + 1);
  std::vector<double> q;
  for (int i = 0; i < 50; ++i) q.push_back((i + 0.37) / 50.0);
  const Matrix a = decode(ps, cfg, smooth_context(coarse, cfg.context_dim), coarse, q);
  const Matrix b = decode(ps, cfg, smooth_context(fine, cfg.context_dim), fine, q);
  return (a - b).cwiseAbs().maxCoeff();
}

TEST(Decode, OffGridMatchesRefinedSolveAtFirstOrder) {
  const DecoderConfig cfg = small_decoder();
  const ParamStore ps = decoder_params(cfg, 5);
  std::vector<double> steps, errs;
  for (int n : {9, 17, 33, 65}) {
    steps.push_back(1.0 / (n - 1));
    errs.push_back(refined_error(cfg, ps, n));
    EXPECT_LT(errs.back(), 2.0 * steps.back());
  }
  const double slope = testing::loglog_slope(steps, errs);
  EXPECT_GT(slope, 0.8);
  EXPECT_LT(slope, 1.3);
}

TEST(Decode, QuerySetInvariance) {
  const DecoderConfig cfg = small_decoder();
  const ParamStore ps = decoder_params(cfg, 6);
  const QuadratureGrid grid = uniform_grid(12);
  const Matrix h = smooth_context(grid, 5);
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a, all;
    for (int i = 0; i < 6; ++i) a.push_back(u(rng));
    std::sort(a.begin(), a.end());
    all = a;
    for (int i = 0; i < 9; ++i) all.push_back(u(rng));
    std::sort(all.begin(), all.end());
    const Matrix ya = decode(ps, cfg, h, grid, a);
    const Matrix yall = decode(ps, cfg, h, grid, all);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto j = std::find(all.begin(), all.end(), a[i]) - all.begin();
      EXPECT_LT((ya.col(static_cast<Eigen::Index>(i)) - yall.col(j)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Decode, Errors) {
  const DecoderConfig cfg = small_decoder();
  const ParamStore ps = decoder_params(cfg, 8);
  const QuadratureGrid grid = uniform_grid(5);
  Matrix h = smooth_context(grid, 5);
  const std::vector<double> unsorted{0.5, 0.2}, outside{0.2, 1.5}, ok{0.5};
  EXPECT_EQ(code_of([&] { decode(ps, cfg, h, grid, unsorted); }), Errc::ordering);
  EXPECT_EQ(code_of([&] { decode(ps, cfg, h, grid, outside); }), Errc::domain);
  EXPECT_EQ(code_of([&] { decode(ps, cfg, h.leftCols(4), grid, ok); }), Errc::grid_mismatch);
  EXPECT_EQ(code_of([&] { decode(ps, cfg, h.topRows(4), grid, ok); }), Errc::dimension);
  h(1, 2) = std::nan("");
  EXPECT_EQ(code_of([&] { decode(ps, cfg, h, grid, ok); }), Errc::domain);
  DecoderConfig bad = cfg;
  bad.outputs = 0;
  EXPECT_EQ(code_of([&] { bad.validate(); }), Errc::config);
}

TEST(Decode, PerOutputMatchesEquivalentSharedField) {
  // Two per-output networks equal one shared network with stacked hidden
  // units and a block-diagonal readout.
  const int m = 2, c_dim = 4, w = 3;
  DecoderConfig per = small_decoder(m, c_dim, {w});
  per.per_output = true;
  DecoderConfig shared = small_decoder(m, c_dim, {2 * w});
  const ParamStore pp = decoder_params(per, 9);
  ParamStore ps = decoder_params(shared, 10);
  ps["dec.init.W"] = pp["dec.init.W"];
  ps["dec.init.b"] = pp["dec.init.b"];
  Matrix w0(2 * w, m), b0(2 * w, 1), w1 = Matrix::Zero(m * c_dim, 2 * w), b1(m * c_dim, 1);
  for (int z = 0; z < m; ++z) {
    const std::string p = "dec.field." + std::to_string(z);
    w0.middleRows(z * w, w) = pp[p + ".W0"];
    b0.middleRows(z * w, w) = pp[p + ".b0"];
    for (int c = 0; c < c_dim; ++c) {
      w1.block(c * m + z, z * w, 1, w) = pp[p + ".W1"].row(c);
      b1(c * m + z) = pp[p + ".b1"](c);
    }
  }
  ps["dec.field.W0"] = w0;
  ps["dec.field.b0"] = b0;
  ps["dec.field.W1"] = w1;
  ps["dec.field.b1"] = b1;
  const QuadratureGrid grid = uniform_grid(10);
  const Matrix h = smooth_context(grid, c_dim);
  const std::vector<double> q{0.0, 0.3, 0.55, 1.0};
  EXPECT_LT((decode(pp, per, h, grid, q) - decode(ps, shared, h, grid, q)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Decode, GradientMatchesFiniteDifferences) {
  for (bool per_output : {false, true}) {
    DecoderConfig cfg = small_decoder(2, 4, {3});
    cfg.per_output = per_output;
    ParamStore ps = decoder_params(cfg, 11);
    const QuadratureGrid grid{{0.0, 0.2, 0.45, 0.7, 1.0}};
    const Matrix h = (Matrix(4, 10) << smooth_context(grid, 4), smooth_context(grid, 4, 0.5)).finished();
    // Interleave the two samples into the g S + s column layout.
    Matrix hs(4, 10);
    for (int g = 0; g < 5; ++g) {
      hs.col(2 * g) = h.col(g);
      hs.col(2 * g + 1) = h.col(5 + g);
    }
    const std::vector<double> q{0.1, 0.5, 0.9};
    Rng rng(12);
    const Vector target = random_matrix(12, 1, rng);
    const Vector weights = Vector::Constant(12, 1.0 / 12);
    const double err = testing::gradient_error(ps, [&](ad::Tape& t, const ParamStore& p) {
      const ad::Var states = decode_states(t, p, cfg, t.constant(hs), 2, false, nullptr);
      std::vector<ad::InterpEntry> entries;
      for (Eigen::Index s = 0; s < 2; ++s)
        for (Eigen::Index z = 0; z < 2; ++z) append_readout(entries, grid, q, z, s, 2);
      return ad::weighted_sse(ad::interp_gather(states, std::move(entries)), target, weights);
    });
    EXPECT_LT(err, 1e-5) << "per_output=" << per_output;
  }
}

TEST(DecoderProperties, OutputChangeBoundedByContextVariation) {
  const DecoderConfig cfg = small_decoder();
  const ParamStore ps = decoder_params(cfg, 13);
  const QuadratureGrid grid = uniform_grid(33);
  const Matrix h = smooth_context(grid, 5);
  Matrix bump = Matrix::Zero(5, 33);
  for (Eigen::Index k = 0; k < 33; ++k) {
    const double t = grid[static_cast<std::size_t>(k)];
    const double b = std::max(0.0, 1.0 - std::abs(t - 0.4) / 0.2);
    bump.col(k).head(4) = Vector::LinSpaced(4, 1.0, -0.5) * b;
  }
  std::vector<double> q;
  for (int i = 0; i <= 40; ++i) q.push_back(i / 40.0);
  const Matrix base = decode(ps, cfg, h, grid, q);
  std::vector<double> ratios;
  for (double eps : {1e-3, 1e-2, 3e-2, 1e-1}) {
    const Matrix dh = eps * bump;
    double variation = 0.0;
    for (Eigen::Index k = 1; k < 33; ++k) variation += (dh.col(k) - dh.col(k - 1)).norm();
    const double change = (decode(ps, cfg, h + dh, grid, q) - base).cwiseAbs().maxCoeff();
    ratios.push_back(change / variation);
    EXPECT_TRUE(std::isfinite(ratios.back()));
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  EXPECT_GT(*lo, 0.0);
  EXPECT_LT(*hi / *lo, 2.0);
}

}  // namespace
}  // namespace fame

#pragma once

#include <span>
#include <vector>

#include "fame/data.hpp"

namespace fame {

/// Clamped uniform B-spline basis on [0, 1] with ridge-regularised fits.
struct BasisSpec {
  int basis = 8;             // n_b
  int order = 4;             // 4 = cubic
  double fit_penalty = 1e-2;  // projection of one function onto the basis
  double ridge = 1e-2;        // coefficient-to-coefficient regression

  void validate() const;
  /// Full knot vector (basis + order entries).
  std::vector<double> knots() const;
};

/// Design matrix (times x basis); times are normalized to [0, 1].
Matrix bspline_design(const BasisSpec& spec, std::span<const double> times);

/// argmin_c |B c - y|^2 + fit_penalty |c|^2 at normalized sample times.
Vector basis_coeffs(const FunctionSample& sample, const BasisSpec& spec);

/// Values of the spline with coefficients c at normalized times.
std::vector<double> reconstruct(const BasisSpec& spec, const Vector& coeffs, std::span<const double> times);

/// Linear map from stacked input coefficients to stacked output coefficients,
/// with an unpenalised intercept.
struct RidgeFofr {
  BasisSpec spec;
  Matrix weights;   // (d n_b) x (m n_b)
  Vector x_mean;
  Vector y_mean;
  int outputs = 0;

  /// Predicted values per output channel at the sample's output instants.
  std::vector<std::vector<double>> predict(const Sample& sample) const;
  Vector predict_coeffs(const Sample& sample) const;
};

RidgeFofr ridge_fofr(const Dataset& train, const BasisSpec& spec = {});

/// Stacked coefficient vectors of a sample's inputs or outputs.
Vector stacked_coeffs(const std::vector<FunctionSample>& fs, const BasisSpec& spec);

/// Mean over training samples of |predicted - fitted output coefficients|^2.
double coefficient_residual(const RidgeFofr& model, const Dataset& train);

}  // namespace fame

#pragma once

#include <array>
#include <span>
#include <vector>

namespace fame {

/// One observed function: irregular (time, value) pairs on [0, horizon].
struct FunctionSample {
  std::vector<double> times;
  std::vector<double> values;
  double horizon = 1.0;
};

/// Throws fame::Error when the sample violates its invariants.
void validate(const FunctionSample& sample);

enum class Interp { linear, natural_cubic };

/// Continuous interpolant of a FunctionSample in normalized time, augmented
/// with an identity time channel. Immutable after construction.
class ControlPath {
 public:
  ControlPath(std::vector<double> knots, std::vector<double> values, Interp scheme,
              double horizon = 1.0);

  Interp scheme() const noexcept { return scheme_; }
  double horizon() const noexcept { return horizon_; }
  std::span<const double> knots() const noexcept { return knots_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Knots at which the path is not locally a straight line. For the linear
  /// scheme interior knots that are collinear with their neighbours are
  /// dropped; the cubic scheme keeps every knot.
  std::span<const double> breakpoints() const noexcept { return breakpoints_; }

  /// Data channel at normalized time t in [0, 1].
  double value_at(double t) const;

  /// Path traversed backwards: X~(u) = X(1 - u), with its own identity time channel.
  ControlPath reversed() const;

 private:
  std::vector<double> knots_;
  std::vector<double> values_;
  std::vector<double> second_derivs_;  // natural cubic only
  std::vector<double> breakpoints_;
  Interp scheme_;
  double horizon_;
};

/// Ordered instants in [0, 1] containing both endpoints.
struct QuadratureGrid {
  std::vector<double> points;

  std::size_t size() const noexcept { return points.size(); }
  double operator[](std::size_t i) const { return points[i]; }
};

void validate(const QuadratureGrid& grid);

ControlPath build_path(const FunctionSample& sample, Interp scheme = Interp::linear);

/// (time channel, data channel) at t.
std::array<double, 2> eval_path(const ControlPath& path, double t);

/// Per-interval increments X(u_{k+1}) - X(u_k) of both channels.
std::vector<std::array<double, 2>> increments(const ControlPath& path, const QuadratureGrid& grid);

/// Number of sub-intervals per knot interval used to estimate the
/// 1-variation of a cubic path.
inline constexpr int kCubicVariationRefinement = 64;

double one_variation(const ControlPath& path);

/// q uniform points on [0, 1] merged with the path breakpoints.
QuadratureGrid make_grid(const ControlPath& path, int q);

/// Shared grid for several channels of one sample.
QuadratureGrid make_grid(std::span<const ControlPath> paths, int q);

/// True when every breakpoint of `path` is a grid point.
bool grid_contains_breakpoints(const QuadratureGrid& grid, const ControlPath& path);

}  // namespace fame

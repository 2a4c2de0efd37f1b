#include "fame/funcpath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fame/error.hpp"

namespace fame {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::degenerate_sample: return "degenerate_sample";
    case Errc::ordering: return "ordering";
    case Errc::domain: return "domain";
    case Errc::grid_mismatch: return "grid_mismatch";
    case Errc::config: return "config";
    case Errc::dimension: return "dimension";
    case Errc::solver_divergence: return "solver_divergence";
    case Errc::quadrature: return "quadrature";
    case Errc::ingestion: return "ingestion";
    case Errc::split: return "split";
    case Errc::unsupported_op: return "unsupported_op";
    case Errc::non_finite_gradient: return "non_finite_gradient";
    case Errc::io: return "io";
    case Errc::unknown_experiment: return "unknown_experiment";
  }
  return "unknown";
}

namespace {

void check_knots(std::span<const double> knots, std::span<const double> values) {
  if (knots.size() < 2 || values.size() != knots.size()) {
    throw Error(Errc::degenerate_sample, "a path needs at least 2 points with matching values, got " +
                                             std::to_string(knots.size()));
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) {
      throw Error(Errc::ordering, "times must be strictly increasing (index " + std::to_string(i) + ")");
    }
  }
}

// Natural cubic spline second derivatives (Thomas algorithm).
std::vector<double> natural_second_derivs(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  std::vector<double> c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = t[i] - t[i - 1];
    const double h1 = t[i + 1] - t[i];
    const double a = h0 / 6.0;
    const double b = (h0 + h1) / 3.0;
    const double cc = h1 / 6.0;
    const double rhs = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    const double denom = b - a * c[i - 1];
    c[i] = cc / denom;
    d[i] = (rhs - a * d[i - 1]) / denom;
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m[i] = d[i] - c[i] * m[i + 1];
  }
  return m;
}

bool collinear(double t0, double x0, double t1, double x1, double t2, double x2) {
  const double lerp = x0 + (x2 - x0) * ((t1 - t0) / (t2 - t0));
  const double scale = std::max({1.0, std::abs(x0), std::abs(x1), std::abs(x2)});
  return std::abs(x1 - lerp) <= 1e-12 * scale;
}

}  // namespace

void validate(const FunctionSample& sample) {
  if (!(sample.horizon > 0.0) || !std::isfinite(sample.horizon)) {
    throw Error(Errc::domain, "horizon must be positive and finite");
  }
  check_knots(sample.times, sample.values);
  if (sample.times.front() < 0.0 || sample.times.back() > sample.horizon) {
    throw Error(Errc::domain, "observation times must lie in [0, horizon]");
  }
  for (double v : sample.values) {
    if (!std::isfinite(v)) throw Error(Errc::domain, "observation values must be finite");
  }
}

void validate(const QuadratureGrid& grid) {
  if (grid.size() < 2) throw Error(Errc::quadrature, "quadrature grid needs at least 2 points");
  if (grid.points.front() != 0.0 || grid.points.back() != 1.0) {
    throw Error(Errc::quadrature, "quadrature grid must contain 0 and 1");
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw Error(Errc::ordering, "quadrature grid must be strictly increasing");
  }
}

ControlPath::ControlPath(std::vector<double> knots, std::vector<double> values, Interp scheme,
                         double horizon)
    : knots_(std::move(knots)), values_(std::move(values)), scheme_(scheme), horizon_(horizon) {
  check_knots(knots_, values_);
  if (knots_.front() < 0.0 || knots_.back() > 1.0) {
    throw Error(Errc::domain, "normalized knots must lie in [0, 1]");
  }
  if (scheme_ == Interp::natural_cubic) {
    second_derivs_ = natural_second_derivs(knots_, values_);
    breakpoints_ = knots_;
  } else {
    breakpoints_.push_back(knots_.front());
    double prev_t = knots_.front();
    double prev_x = values_.front();
    for (std::size_t i = 1; i + 1 < knots_.size(); ++i) {
      if (!collinear(prev_t, prev_x, knots_[i], values_[i], knots_[i + 1], values_[i + 1])) {
        breakpoints_.push_back(knots_[i]);
        prev_t = knots_[i];
        prev_x = values_[i];
      }
    }
    breakpoints_.push_back(knots_.back());
  }
}

double ControlPath::value_at(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw Error(Errc::domain, "path evaluated outside [0, 1] at t=" + std::to_string(t));
  }
  // Flat extrapolation before the first / after the last observation.
  if (t <= knots_.front()) return values_.front();
  if (t >= knots_.back()) return values_.back();
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - knots_.begin()) - 1;
  const double t0 = knots_[i];
  const double t1 = knots_[i + 1];
  if (t == t0) return values_[i];
  const double h = t1 - t0;
  const double a = (t1 - t) / h;
  const double b = (t - t0) / h;
  double x = values_[i] + b * (values_[i + 1] - values_[i]);
  if (scheme_ == Interp::natural_cubic) {
    x += ((a * a * a - a) * second_derivs_[i] + (b * b * b - b) * second_derivs_[i + 1]) * h * h / 6.0;
  }
  return x;
}

ControlPath ControlPath::reversed() const {
  std::vector<double> k(knots_.size());
  std::vector<double> v(values_.size());
  const std::size_t n = knots_.size();
  for (std::size_t i = 0; i < n; ++i) {
    k[i] = 1.0 - knots_[n - 1 - i];
    v[i] = values_[n - 1 - i];
  }
  return ControlPath(std::move(k), std::move(v), scheme_, horizon_);
}

ControlPath build_path(const FunctionSample& sample, Interp scheme) {
  validate(sample);
  std::vector<double> knots(sample.times.size());
  for (std::size_t i = 0; i < knots.size(); ++i) knots[i] = sample.times[i] / sample.horizon;
  return ControlPath(std::move(knots), sample.values, scheme, sample.horizon);
}

std::array<double, 2> eval_path(const ControlPath& path, double t) { return {t, path.value_at(t)}; }

bool grid_contains_breakpoints(const QuadratureGrid& grid, const ControlPath& path) {
  for (double b : path.breakpoints()) {
    if (!std::binary_search(grid.points.begin(), grid.points.end(), b)) return false;
  }
  return true;
}

std::vector<std::array<double, 2>> increments(const ControlPath& path, const QuadratureGrid& grid) {
  validate(grid);
  if (!grid_contains_breakpoints(grid, path)) {
    throw Error(Errc::grid_mismatch, "quadrature grid is missing a path breakpoint");
  }
  std::vector<std::array<double, 2>> out(grid.size() - 1);
  double prev = path.value_at(grid[0]);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double next = path.value_at(grid[k + 1]);
    out[k] = {grid[k + 1] - grid[k], next - prev};
    prev = next;
  }
  return out;
}

double one_variation(const ControlPath& path) {
  const auto knots = path.knots();
  const auto values = path.values();
  double total = 0.0;
  if (path.scheme() == Interp::linear) {
    for (std::size_t i = 1; i < values.size(); ++i) total += std::abs(values[i] - values[i - 1]);
    return total;
  }
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    double prev = values[i];
    for (int r = 1; r <= kCubicVariationRefinement; ++r) {
      const double t = r == kCubicVariationRefinement
                           ? knots[i + 1]
                           : knots[i] + (knots[i + 1] - knots[i]) * r / kCubicVariationRefinement;
      const double x = path.value_at(t);
      total += std::abs(x - prev);
      prev = x;
    }
  }
  return total;
}

QuadratureGrid make_grid(std::span<const ControlPath> paths, int q) {
  if (q < 2) throw Error(Errc::config, "grid size q must be at least 2");
  std::vector<double> pts;
  pts.reserve(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) pts.push_back(i == q - 1 ? 1.0 : static_cast<double>(i) / (q - 1));
  for (const auto& p : paths) {
    pts.insert(pts.end(), p.breakpoints().begin(), p.breakpoints().end());
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return QuadratureGrid{std::move(pts)};
}

QuadratureGrid make_grid(const ControlPath& path, int q) {
  return make_grid(std::span<const ControlPath>(&path, 1), q);
}

}  // namespace fame

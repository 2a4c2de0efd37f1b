#include "fame/baseline.hpp"

#include "fame/error.hpp"

namespace fame {

void BasisSpec::validate() const {
  if (order < 1) throw Error(Errc::config, "spline order must be positive");
  if (basis < order) throw Error(Errc::config, "number of basis functions must be at least the spline order");
  if (!(fit_penalty >= 0.0) || !(ridge >= 0.0)) throw Error(Errc::config, "ridge penalties must be non-negative");
}

std::vector<double> BasisSpec::knots() const {
  const int interior = basis - order;
  std::vector<double> k(static_cast<std::size_t>(order), 0.0);
  for (int i = 1; i <= interior; ++i) k.push_back(static_cast<double>(i) / (interior + 1));
  k.insert(k.end(), static_cast<std::size_t>(order), 1.0);
  return k;
}

Matrix bspline_design(const BasisSpec& spec, std::span<const double> times) {
  spec.validate();
  const auto knots = spec.knots();
  const int nb = spec.basis;
  const int p = spec.order - 1;
  Matrix b = Matrix::Zero(static_cast<Eigen::Index>(times.size()), nb);
  for (std::size_t r = 0; r < times.size(); ++r) {
    const double t = times[r];
    if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::domain, "B-spline evaluation outside [0, 1]");
    // Knot span with knots[span] <= t < knots[span + 1]; t = 1 uses the last span.
    int span = p;
    while (span < nb - 1 && t >= knots[static_cast<std::size_t>(span + 1)]) ++span;
    // Cox-de Boor triangle for the p + 1 non-zero functions.
    std::vector<double> n(static_cast<std::size_t>(p + 1), 0.0);
    n[0] = 1.0;
    for (int deg = 1; deg <= p; ++deg) {
      std::vector<double> next(static_cast<std::size_t>(p + 1), 0.0);
      for (int j = 0; j < deg; ++j) {
        const int i = span - deg + 1 + j;  // global index of the function carried in n[j]
        const double left = knots[static_cast<std::size_t>(i)];
        const double right = knots[static_cast<std::size_t>(i + deg)];
        const double w = right > left ? (t - left) / (right - left) : 0.0;
        next[static_cast<std::size_t>(j)] += (1.0 - w) * n[static_cast<std::size_t>(j)];
        next[static_cast<std::size_t>(j + 1)] += w * n[static_cast<std::size_t>(j)];
      }
      n = std::move(next);
    }
    for (int j = 0; j <= p; ++j) b(static_cast<Eigen::Index>(r), span - p + j) = n[static_cast<std::size_t>(j)];
  }
  return b;
}

Vector basis_coeffs(const FunctionSample& sample, const BasisSpec& spec) {
  std::vector<double> t(sample.times.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = sample.times[i] / sample.horizon;
  const Matrix b = bspline_design(spec, t);
  const Vector y = Eigen::Map<const Vector>(sample.values.data(), static_cast<Eigen::Index>(sample.values.size()));
  const Matrix a = b.transpose() * b + spec.fit_penalty * Matrix::Identity(spec.basis, spec.basis);
  Eigen::LDLT<Matrix> ldlt(a);
  Eigen::FullPivLU<Matrix> lu(a);
  if (ldlt.info() != Eigen::Success || !lu.isInvertible()) {
    throw Error(Errc::domain, "B-spline normal equations are singular; use a positive fit penalty");
  }
  return ldlt.solve(b.transpose() * y);
}

std::vector<double> reconstruct(const BasisSpec& spec, const Vector& coeffs, std::span<const double> times) {
  const Vector v = bspline_design(spec, times) * coeffs;
  return {v.data(), v.data() + v.size()};
}

Vector stacked_coeffs(const std::vector<FunctionSample>& fs, const BasisSpec& spec) {
  Vector out(static_cast<Eigen::Index>(fs.size()) * spec.basis);
  for (std::size_t j = 0; j < fs.size(); ++j) out.segment(static_cast<Eigen::Index>(j) * spec.basis, spec.basis) = basis_coeffs(fs[j], spec);
  return out;
}

RidgeFofr ridge_fofr(const Dataset& train, const BasisSpec& spec) {
  spec.validate();
  if (train.empty()) throw Error(Errc::dimension, "ridge regression needs training samples");
  const auto n = static_cast<Eigen::Index>(train.size());
  const Eigen::Index px = static_cast<Eigen::Index>(train.input_channels()) * spec.basis;
  const Eigen::Index py = static_cast<Eigen::Index>(train.output_channels()) * spec.basis;
  Matrix x(n, px), y(n, py);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Sample& s = train.samples[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(s.inputs.size()) * spec.basis != px ||
        static_cast<Eigen::Index>(s.outputs.size()) * spec.basis != py) {
      throw Error(Errc::dimension, "inconsistent channel counts in the training set");
    }
    x.row(i) = stacked_coeffs(s.inputs, spec).transpose();
    y.row(i) = stacked_coeffs(s.outputs, spec).transpose();
  }
  RidgeFofr m;
  m.spec = spec;
  m.outputs = train.output_channels();
  m.x_mean = x.colwise().mean().transpose();
  m.y_mean = y.colwise().mean().transpose();
  x.rowwise() -= m.x_mean.transpose();
  y.rowwise() -= m.y_mean.transpose();
  const Matrix a = x.transpose() * x + spec.ridge * Matrix::Identity(px, px);
  m.weights = a.ldlt().solve(x.transpose() * y);
  return m;
}

Vector RidgeFofr::predict_coeffs(const Sample& sample) const {
  const Vector xc = stacked_coeffs(sample.inputs, spec);
  if (xc.size() != weights.rows()) throw Error(Errc::dimension, "sample does not match the fitted channel count");
  return weights.transpose() * (xc - x_mean) + y_mean;
}

std::vector<std::vector<double>> RidgeFofr::predict(const Sample& sample) const {
  if (static_cast<int>(sample.outputs.size()) != outputs) throw Error(Errc::dimension, "output channel count mismatch");
  const Vector c = predict_coeffs(sample);
  std::vector<std::vector<double>> out;
  for (int z = 0; z < outputs; ++z) {
    const auto& f = sample.outputs[static_cast<std::size_t>(z)];
    std::vector<double> t(f.times.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f.times[i] / f.horizon;
    out.push_back(reconstruct(spec, c.segment(z * spec.basis, spec.basis), t));
  }
  return out;
}

double coefficient_residual(const RidgeFofr& model, const Dataset& train) {
  double total = 0.0;
  for (const auto& s : train.samples) total += (model.predict_coeffs(s) - stacked_coeffs(s.outputs, model.spec)).squaredNorm();
  return total / static_cast<double>(train.size());
}

}  // namespace fame

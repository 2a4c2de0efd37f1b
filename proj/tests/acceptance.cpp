// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any fails.
//
//   fame_acceptance [criteria...] [--out DIR]
//
// With no criteria listed all eleven run. Statistical criteria share their
// training runs, so 7, 8 and 10 together cost little more than 7 alone.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "check_util.hpp"
#include "fame/attention.hpp"
#include "fame/crossfusion.hpp"
#include "fame/encoder.hpp"
#include "fame/harness.hpp"

namespace fame {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- tolerances ----------------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kDensityTol = 1e-9;
constexpr double kSimplexTol = 1e-12;
constexpr double kEulerOrder = 1.0, kEulerBand = 0.2;
constexpr double kMidpointOrder = 2.0, kMidpointBand = 0.3;
constexpr double kRedundantTol = 1e-9;
constexpr double kQueryTol = 1e-12;
constexpr double kCauchyContraction = 0.75;
constexpr double kLipschitzSpread = 2.0;
constexpr double kOverfitLoss = 1e-3;
constexpr int kOverfitEpochs = 500;
constexpr double kCase1Mse = 0.15;
constexpr double kRidgeLo = 0.30, kRidgeHi = 0.50;
constexpr double kCase3Mse = 0.10;
constexpr double kCase3Ridge = 0.25;
constexpr double kAblationSlack = 0.01;
constexpr int kSeeds = 5;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Dataset case_data(int case_id, int samples) {
  GenSpec g = case_defaults(case_id);
  g.samples = samples;
  g.seed = 0;
  return make_case(g);
}

// ---- deterministic criteria ---------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const Dataset ds = testing::toy_dataset(2, 3, 8, 1);
  const ModelConfig cfg = testing::toy_config(3, 1, 4, 2, 2);
  FameModel model(cfg, 2);
  std::vector<PreparedSample> prepared;
  for (const auto& s : ds.samples) prepared.push_back(model.prepare(s));
  std::vector<const PreparedSample*> group;
  for (const auto& p : prepared) group.push_back(&p);
  const double err = testing::gradient_error(model.params(), [&](ad::Tape& t, const ParamStore&) {
    return model.batch_loss(t, group, 0.5, false, nullptr);
  });
  const double secs = seconds_since(t0);
  return {err < kGradTol && secs < kGradSeconds,
          fmt("max relative error %.2e over %zu tensors (tol %.0e), %.1fs (limit %.0fs)", err, model.params().size(),
              kGradTol, secs, kGradSeconds)};
}

Verdict normalization_suite() {
  const TrainConfig tc;
  const FameModel model(tc.model_config(3, 1), 3);
  const ModelConfig& mc = model.config();
  Dataset ds = case_data(1, 8);
  const Dataset mixed = case_data(3, 8);
  ds.samples.insert(ds.samples.end(), mixed.samples.begin(), mixed.samples.end());

  double density = 0.0, cross = 0.0, gates = 0.0;
  for (const Sample& s : ds.samples) {
    const PreparedSample p = model.prepare(s);
    const Vector w = trapezoid_weights(p.grid);
    const auto g = static_cast<Eigen::Index>(p.grid.size());
    std::vector<Matrix> zhat;
    for (const auto& f : s.inputs) {
      const Matrix z = encode_channel(model.params(), mc.encoder, build_path(f, mc.interp), p.grid);
      const auto [q, k, v] = qkv_project(model.params(), z);
      const Matrix a = attention_weights(mc.attention, q, k, p.grid);
      density = std::max(density, ((a * w).array() - 1.0).abs().maxCoeff());
      zhat.push_back(attend(a, v, p.grid));
    }
    for (Eigen::Index t = 0; t < g; ++t) {
      Matrix at(mc.attention.dim, static_cast<Eigen::Index>(zhat.size()));
      for (std::size_t j = 0; j < zhat.size(); ++j) at.col(static_cast<Eigen::Index>(j)) = zhat[j].col(t);
      for (int h = 0; h < mc.cross.heads; ++h) {
        const std::string suffix = "." + std::to_string(h);
        const Matrix b = cross_weights(model.params()["cross.WQ" + suffix] * at, model.params()["cross.WK" + suffix] * at);
        cross = std::max(cross, (b.rowwise().sum().array() - 1.0).abs().maxCoeff());
      }
    }
    gates = std::max(gates, (model.gates(p).colwise().sum().array() - 1.0).abs().maxCoeff());
  }
  const Entropy e = routing_entropy(collect_gates(model, ds));
  bool bounded = e.pooled >= 0.0 && e.pooled <= 1.0;
  for (double v : e.per_channel) bounded = bounded && v >= 0.0 && v <= 1.0;
  return {density < kDensityTol && cross < kSimplexTol && gates < kSimplexTol && bounded,
          fmt("density %.1e (tol %.0e), cross rows %.1e, gates %.1e (tol %.0e), entropy %.3f in [0,1]", density,
              kDensityTol, cross, gates, kSimplexTol, e.pooled)};
}

// z(1) of dz = z dX with X(t) = t and an inert time channel; exact value e.
double exponential_cde(int steps, SolverScheme scheme) {
  ad::Tape tape;
  const ad::Var zero = tape.constant(Matrix::Zero(1, 1));
  const FieldFn field = [&](const ad::Var& z) {
    const ad::Var parts[] = {zero, z};
    return ad::vstack(parts);
  };
  std::vector<Matrix> inc(static_cast<std::size_t>(steps), Matrix::Constant(2, 1, 1.0 / steps));
  return solve_cde(field, tape.constant(Matrix::Ones(1, 1)), inc, scheme).back().value()(0, 0);
}

Verdict solver_order_suite() {
  std::vector<double> steps, euler, mid;
  for (int n : {16, 32, 64, 128, 256}) {
    steps.push_back(1.0 / n);
    euler.push_back(std::abs(exponential_cde(n, SolverScheme::euler) - std::numbers::e));
    mid.push_back(std::abs(exponential_cde(n, SolverScheme::midpoint) - std::numbers::e));
  }
  const double pe = testing::loglog_slope(steps, euler), pm = testing::loglog_slope(steps, mid);
  return {std::abs(pe - kEulerOrder) <= kEulerBand && std::abs(pm - kMidpointOrder) <= kMidpointBand,
          fmt("Euler order %.3f (1 +- %.1f), midpoint order %.3f (2 +- %.1f)", pe, kEulerBand, pm, kMidpointBand)};
}

double max_abs_diff(const Predictions& a, const Predictions& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t z = 0; z < a[i].size(); ++z)
      for (std::size_t k = 0; k < a[i][z].size(); ++k) worst = std::max(worst, std::abs(a[i][z][k] - b[i][z][k]));
  return worst;
}

Verdict sampling_invariance_suite() {
  const TrainConfig tc;
  const FameModel model(tc.model_config(3, 1), 4);
  const Dataset ds = case_data(3, 10);

  // Midpoints of every input interval lie on the linear path already.
  Dataset dense = ds;
  for (auto& s : dense.samples)
    for (auto& f : s.inputs) {
      FunctionSample g;
      g.horizon = f.horizon;
      for (std::size_t k = 0; k + 1 < f.times.size(); ++k) {
        g.times.insert(g.times.end(), {f.times[k], 0.5 * (f.times[k] + f.times[k + 1])});
        g.values.insert(g.values.end(), {f.values[k], 0.5 * (f.values[k] + f.values[k + 1])});
      }
      g.times.push_back(f.times.back());
      g.values.push_back(f.values.back());
      f = g;
    }
  const double redundant = max_abs_diff(predict(model, ds), predict(model, dense));

  // Extra output instants must not move the predictions at the original ones.
  double query = 0.0;
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const Sample& s : ds.samples) {
    Sample more = s;
    auto& out = more.outputs[0];
    for (int i = 0; i < 15; ++i) out.times.push_back(u(rng));
    std::sort(out.times.begin(), out.times.end());
    out.values.assign(out.times.size(), 0.0);
    const auto a = model.predict(model.prepare(s))[0];
    const auto b = model.predict(model.prepare(more))[0];
    for (std::size_t i = 0; i < s.outputs[0].times.size(); ++i) {
      const auto j = std::find(out.times.begin(), out.times.end(), s.outputs[0].times[i]) - out.times.begin();
      query = std::max(query, std::abs(a[i] - b[static_cast<std::size_t>(j)]));
    }
  }

  std::vector<Predictions> preds;
  ModelConfig cfg = model.config();
  // From the default Q upward; below it the samples' own breakpoints dominate the grid.
  for (int q : {64, 128, 256, 512, 1024}) {
    cfg.grid_size = q;
    preds.push_back(predict(FameModel(cfg, model.params()), ds));
  }
  std::vector<double> gaps;
  for (std::size_t i = 1; i < preds.size(); ++i) gaps.push_back(max_abs_diff(preds[i], preds[i - 1]));
  bool cauchy = true;
  std::string gap_text;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    if (i > 0) cauchy = cauchy && gaps[i] < kCauchyContraction * gaps[i - 1];
    gap_text += fmt(i ? ", %.1e" : "%.1e", gaps[i]);
  }
  return {redundant < kRedundantTol && query < kQueryTol && cauchy,
          fmt("redundant points %.1e (tol %.0e), query set %.1e (tol %.0e), refinement gaps q=64..1024 [%s] (each < %.2fx previous)",
              redundant, kRedundantTol, query, kQueryTol, gap_text.c_str(), kCauchyContraction)};
}

Verdict stability_suite() {
  const TrainConfig tc;
  const FameModel model(tc.model_config(3, 1), 6);
  const Dataset ds = case_data(1, 10);
  const auto pts = estimate_lipschitz(model, ds, log_space(1e-3, 1e-1, 7));
  double lo = INFINITY, hi = 0.0;
  bool finite = true;
  std::string text;
  for (const auto& p : pts) {
    finite = finite && std::isfinite(p.ratio);
    lo = std::min(lo, p.ratio);
    hi = std::max(hi, p.ratio);
    text += fmt(text.empty() ? "%.3g" : ", %.3g", p.ratio);
  }
  return {finite && lo > 0.0 && hi / lo <= kLipschitzSpread,
          fmt("ratios over delta 1e-3..1e-1 [%s], max/min %.3f (limit %.1f)", text.c_str(), hi / lo, kLipschitzSpread)};
}

Verdict overfit_suite() {
  const Dataset one = case_data(1, 1);
  TrainConfig tc;
  tc.epochs = kOverfitEpochs;
  tc.dropout = 0.0;  // a capacity probe, so the regulariser is off
  int first = 0;
  const TrainResult r = train(tc, one, [&](int epoch, double loss) {
    if (first == 0 && loss < kOverfitLoss) first = epoch;
  });
  const double best = *std::min_element(r.metrics.train_loss.begin(), r.metrics.train_loss.end());
  const double eval = mse_loss(predict(r.model, one), one);
  return {first > 0, first > 0 ? fmt("train loss %.2e at epoch %d (tol %.0e); final %.2e, eval-mode %.2e", kOverfitLoss,
                                     first, kOverfitLoss, r.metrics.train_loss.back(), eval)
                               : fmt("best train loss %.2e in %d epochs (tol %.0e); eval-mode %.2e", best,
                                     kOverfitEpochs, kOverfitLoss, eval)};
}

// ---- statistical criteria -------------------------------------------------

struct RunResult {
  double mse = NAN;
  double ridge = NAN;
  double entropy = NAN;
};

class Runs {
 public:
  explicit Runs(std::filesystem::path out) : out_(std::move(out)) {}

  /// Five seeds of one configuration; seed s sets both the split and the initialisation.
  std::vector<RunResult> seeds(const std::string& tag, int case_id, int samples, const TrainConfig& base) {
    std::vector<RunResult> out;
    for (int s = 0; s < kSeeds; ++s) out.push_back(one(tag, case_id, samples, base, s));
    return out;
  }

 private:
  RunResult one(const std::string& tag, int case_id, int samples, TrainConfig cfg, int seed) {
    const std::string key = tag + "_s" + std::to_string(seed);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const auto data_key = std::make_pair(case_id, samples);
    if (!data_.count(data_key)) data_.emplace(data_key, case_data(case_id, samples));
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto t0 = Clock::now();
    const nlohmann::json j = run_single(key, data_.at(data_key), cfg, out_, true);
    RunResult r{j["test_mse"].get<double>(), j["baseline_mse"].get<double>(),
                j["routing_entropy"]["pooled"].get<double>()};
    std::fprintf(stderr, "  [%s] test MSE %.4f, ridge %.4f, entropy %.3f, %.0fs\n", key.c_str(), r.mse, r.ridge,
                 r.entropy, seconds_since(t0));
    cache_.emplace(key, r);
    return r;
  }

  std::filesystem::path out_;
  std::map<std::string, RunResult> cache_;
  std::map<std::pair<int, int>, Dataset> data_;
};

std::vector<double> field(const std::vector<RunResult>& runs, double RunResult::*m) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.*m);
  return v;
}

Verdict case1_suite(Runs& runs) {
  const auto r = runs.seeds("case1_n200", 1, 200, TrainConfig{});
  const auto mse = field(r, &RunResult::mse), ridge = field(r, &RunResult::ridge);
  const double m = mean(mse), b = mean(ridge);
  return {m <= kCase1Mse && m < b && b >= kRidgeLo && b <= kRidgeHi,
          fmt("FAME %.4f +- %.4f (limit %.2f), ridge %.4f +- %.4f (range [%.2f, %.2f])", m, stddev(mse), kCase1Mse, b,
              stddev(ridge), kRidgeLo, kRidgeHi)};
}

Verdict resolution_suite(Runs& runs) {
  const double c1 = mean(field(runs.seeds("case1_n200", 1, 200, TrainConfig{}), &RunResult::mse));
  const auto c2 = field(runs.seeds("case2_n200", 2, 200, TrainConfig{}), &RunResult::mse);
  return {mean(c2) <= c1, fmt("Case 2 %.4f +- %.4f vs Case 1 %.4f", mean(c2), stddev(c2), c1)};
}

Verdict mixed_resolution_suite(Runs& runs) {
  const auto r = runs.seeds("case3_n500", 3, 500, TrainConfig{});
  const auto mse = field(r, &RunResult::mse), ridge = field(r, &RunResult::ridge);
  return {mean(mse) <= kCase3Mse && mean(ridge) > kCase3Ridge,
          fmt("FAME %.4f +- %.4f (limit %.2f), ridge %.4f +- %.4f (must exceed %.2f)", mean(mse), stddev(mse),
              kCase3Mse, mean(ridge), stddev(ridge), kCase3Ridge)};
}

Verdict ablation_suite(Runs& runs) {
  const double full = median(field(runs.seeds("case1_n200", 1, 200, TrainConfig{}), &RunResult::mse));
  bool pass = true;
  std::string text = fmt("median full %.4f", full);
  for (const char* name : {"no_bidir", "no_moe", "no_crossattn"}) {
    TrainConfig t;
    t.no_bidir = std::string(name) == "no_bidir";
    t.no_moe = std::string(name) == "no_moe";
    t.no_crossattn = std::string(name) == "no_crossattn";
    const double m = median(field(runs.seeds(std::string("ablation_") + name, 1, 200, t), &RunResult::mse));
    pass = pass && full <= m + kAblationSlack;
    text += fmt(", %s %.4f", name, m);
  }
  return {pass, text + fmt(" (slack %.2f)", kAblationSlack)};
}

Verdict k_sweep_suite(Runs& runs) {
  std::map<int, std::vector<RunResult>> by_k;
  for (int k : {1, 2, 3}) {
    TrainConfig t;
    t.experts = k;
    by_k[k] = runs.seeds("case8_k" + std::to_string(k), 8, 200, t);
  }
  const double k1 = mean(field(by_k[1], &RunResult::mse)), k3 = mean(field(by_k[3], &RunResult::mse));
  bool interior = true;
  double lo = 1.0, hi = 0.0;
  for (int k : {2, 3})
    for (double e : field(by_k[k], &RunResult::entropy)) {
      interior = interior && e > 0.0 && e < 1.0;
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  return {k3 <= k1 && interior,
          fmt("mean MSE K=1 %.4f, K=2 %.4f, K=3 %.4f; entropy for K>=2 in [%.3f, %.3f] (must be inside (0,1))", k1,
              mean(field(by_k[2], &RunResult::mse)), k3, lo, hi)};
}

}  // namespace
}  // namespace fame

int main(int argc, char** argv) {
  using namespace fame;
  CLI::App app{"FAME acceptance criteria"};
  std::vector<int> selected;
  std::string out_dir = "acceptance_out";
  app.add_option("criteria", selected, "Criteria to run (1-11); all when omitted")->check(CLI::Range(1, 11));
  app.add_option("--out", out_dir, "Directory for per-run metrics and predictions");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) {
    selected.resize(11);
    std::iota(selected.begin(), selected.end(), 1);
  }
  const std::set<int> which(selected.begin(), selected.end());

  Runs runs(out_dir);
  const std::map<int, std::function<Verdict()>> criteria = {
      {1, gradient_suite},
      {2, normalization_suite},
      {3, solver_order_suite},
      {4, sampling_invariance_suite},
      {5, stability_suite},
      {6, overfit_suite},
      {7, [&] { return case1_suite(runs); }},
      {8, [&] { return resolution_suite(runs); }},
      {9, [&] { return mixed_resolution_suite(runs); }},
      {10, [&] { return ablation_suite(runs); }},
      {11, [&] { return k_sweep_suite(runs); }},
  };

  int failed = 0;
  for (int c : which) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria.at(c)();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d: %s %s [%.0fs]\n", c, v.pass ? "PASS" : "FAIL", v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(which.size()) - failed, which.size());
  return failed == 0 ? 0 : 1;
}

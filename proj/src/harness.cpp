#include "fame/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fame/error.hpp"

namespace fame {

double mse_loss(const Predictions& predicted, const Dataset& observed) {
  if (predicted.size() != observed.size()) throw Error(Errc::dimension, "prediction / sample count mismatch");
  if (observed.empty()) throw Error(Errc::dimension, "MSE of an empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const auto& outs = observed.samples[i].outputs;
    if (predicted[i].size() != outs.size()) throw Error(Errc::dimension, "output channel count mismatch");
    double sse = 0.0;
    std::size_t n = 0;
    for (std::size_t z = 0; z < outs.size(); ++z) {
      if (predicted[i][z].size() != outs[z].values.size()) {
        throw Error(Errc::dimension, "sample " + std::to_string(i) + " output " + std::to_string(z) + ": " +
                                         std::to_string(predicted[i][z].size()) + " predictions for " +
                                         std::to_string(outs[z].values.size()) + " observations");
      }
      for (std::size_t k = 0; k < outs[z].values.size(); ++k) {
        const double r = predicted[i][z][k] - outs[z].values[k];
        sse += r * r;
      }
      n += outs[z].values.size();
    }
    total += sse / static_cast<double>(n);
  }
  return total / static_cast<double>(observed.size());
}

Entropy routing_entropy(std::span<const Matrix> gates) {
  Entropy e;
  if (gates.empty()) return e;
  const Eigen::Index k = gates[0].rows();
  const Eigen::Index d = gates[0].cols();
  e.per_channel.assign(static_cast<std::size_t>(d), 0.0);
  if (k <= 1) return e;
  const double norm = std::log(static_cast<double>(k));
  for (const Matrix& g : gates) {
    if (g.rows() != k || g.cols() != d) throw Error(Errc::dimension, "gate matrices differ in shape");
    for (Eigen::Index j = 0; j < d; ++j) {
      double h = 0.0;
      for (Eigen::Index r = 0; r < k; ++r) {
        const double p = g(r, j);
        if (p > 0.0) h -= p * std::log(p);
      }
      e.per_channel[static_cast<std::size_t>(j)] += h / norm;
    }
  }
  for (auto& v : e.per_channel) v = std::clamp(v / static_cast<double>(gates.size()), 0.0, 1.0);
  e.pooled = std::accumulate(e.per_channel.begin(), e.per_channel.end(), 0.0) / static_cast<double>(d);
  return e;
}

nlohmann::json to_json(const Metrics& m) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"train_loss", m.train_loss},
                      {"test_mse", num(m.test_mse)},
                      {"baseline_mse", num(m.baseline_mse)},
                      {"routing_entropy", {{"per_channel", m.entropy.per_channel}, {"pooled", m.entropy.pooled}}},
                      {"lipschitz", num(m.lipschitz)},
                      {"seconds", m.seconds},
                      {"max_cross_norm", num(m.max_cross_norm)}};
  j["aborted"] = m.aborted ? nlohmann::json(*m.aborted) : nlohmann::json(nullptr);
  return j;
}

void train_model(FameModel& model, const TrainConfig& cfg, const Dataset& train_set, Metrics& metrics,
                 const EpochHook& hook) {
  cfg.validate();
  if (train_set.empty()) throw Error(Errc::dimension, "training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<PreparedSample> prepared;
  prepared.reserve(train_set.size());
  for (const auto& s : train_set.samples) prepared.push_back(model.prepare(s));

  Rng rng = derived_rng(cfg.seed, 0x545241494eull);
  AdamState adam(model.params(), cfg.lr);
  GradStore grads(model.params());
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ParamStore snapshot = model.params();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
        std::vector<const PreparedSample*> members;
        for (std::size_t i = start; i < stop; ++i) members.push_back(&prepared[order[i]]);
        const double weight = 1.0 / static_cast<double>(members.size());
        grads.zero();
        for (const auto& idx : group_by_grid(members)) {
          std::vector<const PreparedSample*> group;
          for (auto i : idx) group.push_back(members[i]);
          ad::Tape tape;
          const ad::Var loss = model.batch_loss(tape, group, weight, true, &rng);
          const double lv = loss.value()(0, 0);
          if (!std::isfinite(lv)) throw Error(Errc::solver_divergence, "training loss became non-finite");
          epoch_loss += lv * static_cast<double>(members.size());
          tape.backward(loss, grads);
        }
        adam_step(adam, model.params(), grads);
      }
    } catch (const Error& e) {
      if (e.code() != Errc::solver_divergence && e.code() != Errc::non_finite_gradient) throw;
      model.params() = snapshot;
      metrics.aborted = "epoch " + std::to_string(epoch + 1) + ": " + e.what();
      break;
    }
    metrics.train_loss.push_back(epoch_loss / static_cast<double>(prepared.size()));
    if (hook) hook(epoch + 1, metrics.train_loss.back());
  }
  metrics.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const EpochHook& hook) {
  if (train_set.empty()) throw Error(Errc::dimension, "training set is empty");
  TrainResult r{FameModel(cfg.model_config(train_set.input_channels(), train_set.output_channels()), cfg.seed), {}};
  train_model(r.model, cfg, train_set, r.metrics, hook);
  return r;
}

Predictions predict(const FameModel& model, const Dataset& ds) {
  std::vector<PreparedSample> prepared;
  prepared.reserve(ds.size());
  for (const auto& s : ds.samples) prepared.push_back(model.prepare(s));
  return model.predict(prepared);
}

Predictions predict(const RidgeFofr& model, const Dataset& ds) {
  Predictions out;
  for (const auto& s : ds.samples) out.push_back(model.predict(s));
  return out;
}

std::vector<Matrix> collect_gates(const FameModel& model, const Dataset& ds) {
  std::vector<Matrix> g;
  for (const auto& s : ds.samples) g.push_back(model.gates(model.prepare(s)));
  return g;
}

std::vector<double> log_space(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi >= lo) || count < 1) throw Error(Errc::config, "log_space needs 0 < lo <= hi and count >= 1");
  std::vector<double> out;
  for (int i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out.push_back(std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo))));
  }
  return out;
}

std::vector<LipschitzPoint> estimate_lipschitz(const FameModel& model, const Dataset& ds,
                                               std::span<const double> deltas) {
  const Predictions base = predict(model, ds);
  std::vector<LipschitzPoint> out;
  for (double delta : deltas) {
    Dataset pert = ds;
    std::vector<double> variation(ds.size(), 0.0);
    for (std::size_t i = 0; i < pert.size(); ++i) {
      FunctionSample& f = pert.samples[i].inputs[0];
      double prev = 0.0;
      for (std::size_t k = 0; k < f.times.size(); ++k) {
        const double u = f.times[k] / f.horizon;
        const double bump = 0.5 * delta * std::max(0.0, 1.0 - std::abs(u - 0.5) / 0.25);
        f.values[k] += bump;
        if (k > 0) variation[i] += std::abs(bump - prev);
        prev = bump;
      }
    }
    const Predictions moved = predict(model, pert);
    LipschitzPoint p{delta, 0.0};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (!(variation[i] > 0.0)) continue;
      double sup = 0.0;
      for (std::size_t z = 0; z < base[i].size(); ++z)
        for (std::size_t k = 0; k < base[i][z].size(); ++k) sup = std::max(sup, std::abs(moved[i][z][k] - base[i][z][k]));
      p.ratio = std::max(p.ratio, sup / variation[i]);
    }
    out.push_back(p);
  }
  return out;
}

void write_predictions_csv(const std::filesystem::path& file, const Dataset& ds, const Predictions& pred) {
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write '" + file.string() + "'");
  out << "sample_id,channel,t,y_true,y_pred\n";
  char line[256];
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t z = 0; z < ds.samples[i].outputs.size(); ++z) {
      const auto& f = ds.samples[i].outputs[z];
      for (std::size_t k = 0; k < f.times.size(); ++k) {
        std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g\n", i, z, f.times[k], f.values[k], pred[i][z][k]);
        out << line;
      }
    }
}

namespace {

void write_json(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write '" + file.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

nlohmann::json run_single(const std::string& tag, const Dataset& ds, const TrainConfig& cfg,
                          const std::filesystem::path& out_dir, bool quiet) {
  std::filesystem::create_directories(out_dir);
  const auto [train_set, test_set] = split(ds, cfg.split_ratio, cfg.seed);
  const EpochHook hook = quiet ? EpochHook{} : EpochHook([&](int epoch, double loss) {
    std::fprintf(stderr, "[%s] epoch %d loss %.6f\n", tag.c_str(), epoch, loss);
  });
  TrainResult r = train(cfg, train_set, hook);
  const Predictions pred = predict(r.model, test_set);
  r.metrics.test_mse = mse_loss(pred, test_set);
  const RidgeFofr ridge = ridge_fofr(train_set);
  r.metrics.baseline_mse = mse_loss(predict(ridge, test_set), test_set);
  r.metrics.entropy = routing_entropy(collect_gates(r.model, test_set));
  r.metrics.max_cross_norm = max_cross_norm(r.model.params(), r.model.config().cross);
  const std::vector<double> deltas = log_space(1e-3, 1e-1, 5);
  r.metrics.lipschitz = 0.0;
  for (const auto& p : estimate_lipschitz(r.model, test_set, deltas)) r.metrics.lipschitz = std::max(r.metrics.lipschitz, p.ratio);

  {
    std::ofstream ep(out_dir / (tag + ".epochs.csv"));
    ep << "epoch,train_loss\n";
    char line[64];
    for (std::size_t e = 0; e < r.metrics.train_loss.size(); ++e) {
      std::snprintf(line, sizeof line, "%zu,%.10g\n", e + 1, r.metrics.train_loss[e]);
      ep << line;
    }
  }
  write_predictions_csv(out_dir / (tag + ".predictions.csv"), test_set, pred);
  nlohmann::json j = to_json(r.metrics);
  j["tag"] = tag;
  j["train_samples"] = train_set.size();
  j["test_samples"] = test_set.size();
  j["config"] = to_json(cfg);
  j["data"] = manifest(ds);
  write_json(out_dir / (tag + ".metrics.json"), j);
  if (!quiet) {
    std::fprintf(stderr, "[%s] test MSE %.4f, ridge %.4f, entropy %.3f, %.0fs\n", tag.c_str(), r.metrics.test_mse,
                 r.metrics.baseline_mse, r.metrics.entropy.pooled, r.metrics.seconds);
  }
  return j;
}

nlohmann::json run_experiment(const std::string& name, const ExperimentOptions& opts) {
  struct Variant {
    std::string tag;
    GenSpec gen;
    TrainConfig train;
  };
  std::vector<Variant> variants;
  std::optional<Dataset> custom;

  auto sizes = [&](std::vector<int> dflt) { return opts.sample_sizes.empty() ? dflt : opts.sample_sizes; };
  if (name.size() == 5 && name.rfind("case", 0) == 0 && name[4] >= '1' && name[4] <= '8') {
    const int c = name[4] - '0';
    for (int n : sizes(c <= 3 ? std::vector<int>{100, 200, 500} : std::vector<int>{200})) {
      GenSpec g = case_defaults(c);
      g.samples = n;
      variants.push_back({name + "_n" + std::to_string(n), g, opts.train});
    }
  } else if (name == "ablation") {
    for (int n : sizes({200})) {
      GenSpec g = case_defaults(1);
      g.samples = n;
      const char* tags[] = {"full", "no_bidir", "no_moe", "no_crossattn"};
      for (int v = 0; v < 4; ++v) {
        TrainConfig t = opts.train;
        t.no_bidir = v == 1;
        t.no_moe = v == 2;
        t.no_crossattn = v == 3;
        variants.push_back({"ablation_n" + std::to_string(n) + "_" + tags[v], g, t});
      }
    }
  } else if (name == "sweep-k") {
    for (int n : sizes({200})) {
      GenSpec g = case_defaults(8);
      g.samples = n;
      for (int k : {1, 2, 3, 5, 8}) {
        TrainConfig t = opts.train;
        t.experts = k;
        t.no_moe = false;
        variants.push_back({"sweepk_n" + std::to_string(n) + "_k" + std::to_string(k), g, t});
      }
    }
  } else if (name == "custom-csv") {
    if (!opts.csv) throw Error(Errc::config, "custom-csv needs a data file");
    custom = load_csv(*opts.csv);
    variants.push_back({"custom", GenSpec{}, opts.train});
  } else {
    throw Error(Errc::unknown_experiment,
                "unknown experiment '" + name + "' (expected case1..case8, sweep-k, ablation, custom-csv)");
  }

  nlohmann::json report = {{"experiment", name}, {"runs", nlohmann::json::array()}};
  for (const auto& v : variants) {
    GenSpec g = v.gen;
    g.seed = opts.data_seed;
    const Dataset ds = custom ? *custom : make_case(g);
    nlohmann::json run = run_single(v.tag, ds, v.train, opts.out_dir, opts.quiet);
    nlohmann::json summary = {{"tag", v.tag},
                              {"test_mse", run["test_mse"]},
                              {"baseline_mse", run["baseline_mse"]},
                              {"routing_entropy", run["routing_entropy"]["pooled"]},
                              {"seconds", run["seconds"]}};
    report["runs"].push_back(summary);
  }
  std::filesystem::create_directories(opts.out_dir);
  write_json(opts.out_dir / (name + ".report.json"), report);
  return report;
}

}  // namespace fame

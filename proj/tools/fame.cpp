// Command-line front end: dataset generation, training, evaluation and the
// experiment runners. Failures print {"error": <code>, "message": ...} on
// stdout and exit with status 2.
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fame/config.hpp"
#include "fame/error.hpp"
#include "fame/harness.hpp"

namespace {

using fame::Errc;
using fame::Error;

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

fame::FameModel load_model(const std::string& ckpt) {
  fame::ParamStore params;
  const nlohmann::json meta = fame::load_checkpoint(ckpt, params);
  if (!meta.contains("model")) throw Error(Errc::io, "checkpoint has no model configuration");
  return fame::FameModel(fame::model_config_from_json(meta.at("model")), std::move(params));
}

void read_config(const std::string& file, fame::TrainConfig& train, fame::GenSpec* gen) {
  if (!file.empty()) fame::apply(fame::load_key_values(file), train, gen);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FAME function-on-function regression"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset as CSV");
  int gen_case = 1;
  std::string gen_out, gen_config;
  int gen_samples = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--case", gen_case, "Synthetic case 1..8")->required();
  gen->add_option("--out", gen_out, "Output CSV file")->required();
  gen->add_option("--samples", gen_samples, "Number of samples (default from the case)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--config", gen_config, "key = value file with generator overrides");

  // train
  auto* tr = app.add_subcommand("train", "Train on a CSV dataset and write a checkpoint");
  std::string tr_config, tr_data, tr_ckpt, tr_out = "results";
  tr->add_option("--config", tr_config, "key = value training configuration");
  tr->add_option("--data", tr_data, "Dataset CSV")->required();
  tr->add_option("--ckpt", tr_ckpt, "Checkpoint file to write")->required();
  tr->add_option("--out", tr_out, "Directory for metrics, epoch and prediction files");
  bool tr_quiet = false;
  tr->add_flag("--quiet", tr_quiet, "No per-epoch progress");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a CSV dataset");
  std::string ev_ckpt, ev_data, ev_pred;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset CSV")->required();
  ev->add_option("--pred", ev_pred, "Write predictions CSV here");

  // experiments
  std::string ex_config, ex_out = "results", ex_data;
  std::vector<int> ex_sizes;
  std::uint64_t ex_seed = 0;
  bool ex_quiet = false;
  auto add_experiment_opts = [&](CLI::App* c) {
    c->add_option("--config", ex_config, "key = value training configuration");
    c->add_option("--out", ex_out, "Output directory");
    c->add_option("--samples", ex_sizes, "Dataset sizes to run");
    c->add_option("--data-seed", ex_seed, "Generator seed");
    c->add_flag("--quiet", ex_quiet, "No per-epoch progress");
  };
  auto* ab = app.add_subcommand("ablate", "Full model and the three ablations on Case 1");
  add_experiment_opts(ab);
  auto* sk = app.add_subcommand("sweep-k", "Expert-count sweep K in {1,2,3,5,8} on Case 8");
  add_experiment_opts(sk);
  auto* run = app.add_subcommand("run", "Named experiment: case1..case8, sweep-k, ablation, custom-csv");
  std::string run_name;
  run->add_option("name", run_name, "Experiment name")->required();
  run->add_option("--data", ex_data, "CSV for custom-csv");
  add_experiment_opts(run);

  // lipschitz
  auto* lp = app.add_subcommand("lipschitz", "Empirical input-perturbation ratios of a checkpoint");
  std::string lp_ckpt, lp_data;
  double lp_lo = 1e-3, lp_hi = 1e-1;
  int lp_count = 5, lp_limit = 32;
  lp->add_option("--ckpt", lp_ckpt, "Checkpoint")->required();
  lp->add_option("--data", lp_data, "Dataset CSV")->required();
  lp->add_option("--lo", lp_lo, "Smallest perturbation");
  lp->add_option("--hi", lp_hi, "Largest perturbation");
  lp->add_option("--count", lp_count, "Number of log-spaced perturbations");
  lp->add_option("--limit", lp_limit, "Probe at most this many samples");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      fame::GenSpec spec = fame::case_defaults(gen_case);
      fame::TrainConfig unused;
      read_config(gen_config, unused, &spec);
      if (gen_samples > 0) spec.samples = gen_samples;
      spec.seed = gen_seed;
      const fame::Dataset ds = fame::make_case(spec);
      fame::save_csv(gen_out, ds);
      const nlohmann::json m = fame::manifest(ds);
      std::ofstream(gen_out + ".manifest.json") << m.dump(2) << '\n';
      print_json(m);
    } else if (tr->parsed()) {
      fame::TrainConfig cfg;
      read_config(tr_config, cfg, nullptr);
      const fame::Dataset ds = fame::load_csv(tr_data);
      const auto [train_set, test_set] = fame::split(ds, cfg.split_ratio, cfg.seed);
      const fame::EpochHook hook = tr_quiet ? fame::EpochHook{} : fame::EpochHook([](int e, double l) {
        std::fprintf(stderr, "epoch %d loss %.6f\n", e, l);
      });
      fame::TrainResult r = fame::train(cfg, train_set, hook);
      const fame::Predictions pred = fame::predict(r.model, test_set);
      r.metrics.test_mse = fame::mse_loss(pred, test_set);
      r.metrics.baseline_mse = fame::mse_loss(fame::predict(fame::ridge_fofr(train_set), test_set), test_set);
      r.metrics.entropy = fame::routing_entropy(fame::collect_gates(r.model, test_set));
      r.metrics.max_cross_norm = fame::max_cross_norm(r.model.params(), r.model.config().cross);
      fame::save_checkpoint(tr_ckpt, r.model.params(),
                            {{"model", fame::to_json(r.model.config())}, {"train", fame::to_json(cfg)}});
      std::filesystem::create_directories(tr_out);
      fame::write_predictions_csv(std::filesystem::path(tr_out) / "predictions.csv", test_set, pred);
      {
        std::ofstream ep(std::filesystem::path(tr_out) / "epochs.csv");
        ep << "epoch,train_loss\n";
        for (std::size_t e = 0; e < r.metrics.train_loss.size(); ++e) ep << e + 1 << ',' << r.metrics.train_loss[e] << '\n';
      }
      nlohmann::json j = fame::to_json(r.metrics);
      j["config"] = fame::to_json(cfg);
      j["data"] = fame::manifest(ds);
      std::ofstream(std::filesystem::path(tr_out) / "metrics.json") << j.dump(2) << '\n';
      print_json(j);
    } else if (ev->parsed()) {
      const fame::FameModel model = load_model(ev_ckpt);
      const fame::Dataset ds = fame::load_csv(ev_data);
      const fame::Predictions pred = fame::predict(model, ds);
      if (!ev_pred.empty()) fame::write_predictions_csv(ev_pred, ds, pred);
      const auto ent = fame::routing_entropy(fame::collect_gates(model, ds));
      print_json({{"mse", fame::mse_loss(pred, ds)}, {"samples", ds.size()}, {"routing_entropy", ent.pooled}});
    } else if (ab->parsed() || sk->parsed() || run->parsed()) {
      fame::ExperimentOptions opts;
      read_config(ex_config, opts.train, nullptr);
      opts.out_dir = ex_out;
      opts.sample_sizes = ex_sizes;
      opts.data_seed = ex_seed;
      opts.quiet = ex_quiet;
      if (!ex_data.empty()) opts.csv = ex_data;
      const std::string name = ab->parsed() ? "ablation" : sk->parsed() ? "sweep-k" : run_name;
      print_json(fame::run_experiment(name, opts));
    } else if (lp->parsed()) {
      const fame::FameModel model = load_model(lp_ckpt);
      fame::Dataset ds = fame::load_csv(lp_data);
      if (lp_limit > 0 && ds.size() > static_cast<std::size_t>(lp_limit)) ds.samples.resize(static_cast<std::size_t>(lp_limit));
      const auto deltas = fame::log_space(lp_lo, lp_hi, lp_count);
      nlohmann::json rows = nlohmann::json::array();
      double worst = 0.0;
      for (const auto& p : fame::estimate_lipschitz(model, ds, deltas)) {
        rows.push_back({{"delta", p.delta}, {"ratio", p.ratio}});
        worst = std::max(worst, p.ratio);
      }
      print_json({{"ratios", rows}, {"lipschitz", worst}});
    }
  } catch (const fame::Error& e) {
    print_json({{"error", std::string(fame::to_string(e.code()))}, {"message", e.what()}});
    return 2;
  } catch (const nlohmann::json::exception& e) {
    print_json({{"error", "io"}, {"message", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    print_json({{"error", "internal"}, {"message", e.what()}});
    return 2;
  }
  return 0;
}

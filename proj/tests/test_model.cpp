#include <gtest/gtest.h>

#include <cmath>

#include "fame/config.hpp"
#include "fame/error.hpp"
#include "fame/harness.hpp"
#include "fame/model.hpp"
#include "test_util.hpp"

namespace fame {
namespace {

using testing::code_of;

double max_abs_diff(const Predictions& a, const Predictions& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t z = 0; z < a[i].size(); ++z)
      for (std::size_t k = 0; k < a[i][z].size(); ++k) worst = std::max(worst, std::abs(a[i][z][k] - b[i][z][k]));
  return worst;
}

double model_gradient_error(const ModelConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  FameModel model(cfg, seed);
  std::vector<PreparedSample> prepared;
  for (const auto& s : ds.samples) prepared.push_back(model.prepare(s));
  std::vector<const PreparedSample*> group;
  for (const auto& p : prepared) group.push_back(&p);
  return testing::gradient_error(model.params(), [&](ad::Tape& t, const ParamStore&) {
    return model.batch_loss(t, group, 1.0 / static_cast<double>(group.size()), false, nullptr);
  });
}

TEST(ModelGradient, FullModelMatchesFiniteDifferences) {
  const Dataset ds = testing::toy_dataset(2, 3, 8, 1);
  EXPECT_LT(model_gradient_error(testing::toy_config(3), ds, 2), 1e-4);
}

TEST(ModelGradient, MultiOutputPerOutputFields) {
  const Dataset ds = testing::toy_dataset(2, 2, 6, 3, 2);
  ModelConfig cfg = testing::toy_config(2, 2, 3, 2, 2);
  cfg.decoder.per_output = true;
  cfg.finalize();
  EXPECT_LT(model_gradient_error(cfg, ds, 4), 1e-4);
}

TEST(ModelGradient, AblatedVariants) {
  const Dataset ds = testing::toy_dataset(2, 2, 6, 5);
  for (int v = 0; v < 3; ++v) {
    ModelConfig cfg = testing::toy_config(2, 1, 3, 2, 2);
    if (v == 0) cfg.encoder.bidirectional = false;
    if (v == 1) cfg.encoder.experts = 1;
    if (v == 2) cfg.cross.enabled = false;
    cfg.finalize();
    EXPECT_LT(model_gradient_error(cfg, ds, 6), 1e-4) << "variant " << v;
  }
}

TEST(ModelGradient, MidpointSolver) {
  const Dataset ds = testing::toy_dataset(1, 2, 6, 7);
  ModelConfig cfg = testing::toy_config(2, 1, 3, 2, 2);
  cfg.encoder.scheme = SolverScheme::midpoint;
  cfg.finalize();
  EXPECT_LT(model_gradient_error(cfg, ds, 8), 1e-4);
}

TEST(FameModel, BatchedPredictionsMatchSingle) {
  GenSpec g = case_defaults(3);
  g.samples = 6;
  const Dataset ds = make_case(g);
  const FameModel model(testing::toy_config(3), 9);
  std::vector<PreparedSample> prepared;
  for (const auto& s : ds.samples) prepared.push_back(model.prepare(s));
  const auto batched = model.predict(prepared);
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const auto single = model.predict(prepared[i]);
    for (std::size_t k = 0; k < single[0].size(); ++k) EXPECT_NEAR(batched[i][0][k], single[0][k], 1e-12);
  }
}

TEST(FameModel, BatchLossIsWeightedSumOfSampleLosses) {
  const Dataset ds = testing::toy_dataset(3, 3, 8, 10);
  const FameModel model(testing::toy_config(3), 11);
  std::vector<PreparedSample> p;
  for (const auto& s : ds.samples) p.push_back(model.prepare(s));
  double separate = 0.0;
  for (const auto& s : p) {
    ad::Tape t;
    const PreparedSample* one[] = {&s};
    separate += model.batch_loss(t, one, 0.5, false, nullptr).value()(0, 0);
  }
  ad::Tape t;
  const PreparedSample* all[] = {&p[0], &p[1], &p[2]};
  EXPECT_NEAR(model.batch_loss(t, all, 0.5, false, nullptr).value()(0, 0), separate, 1e-12);
}

TEST(FameModel, RedundantCollinearPointsLeaveOutputsUnchanged) {
  const Dataset ds = testing::toy_dataset(4, 3, 8, 12);
  const FameModel model(testing::toy_config(3), 13);
  Dataset dense = ds;
  for (auto& s : dense.samples)
    for (auto& f : s.inputs) {
      FunctionSample g;
      g.horizon = f.horizon;
      for (std::size_t k = 0; k + 1 < f.times.size(); ++k) {
        g.times.push_back(f.times[k]);
        g.values.push_back(f.values[k]);
        g.times.push_back(0.5 * (f.times[k] + f.times[k + 1]));
        g.values.push_back(0.5 * (f.values[k] + f.values[k + 1]));
      }
      g.times.push_back(f.times.back());
      g.values.push_back(f.values.back());
      f = g;
    }
  EXPECT_LT(max_abs_diff(predict(model, ds), predict(model, dense)), 1e-9);
}

TEST(FameModel, GridRefinementIsCauchy) {
  const Dataset ds = testing::toy_dataset(2, 3, 8, 14);
  ModelConfig cfg = testing::toy_config(3);
  const FameModel base(cfg, 15);
  std::vector<Predictions> preds;
  for (int q : {16, 32, 64, 128, 256}) {
    cfg.grid_size = q;
    preds.push_back(predict(FameModel(cfg, base.params()), ds));
  }
  std::vector<double> gaps;
  for (std::size_t i = 1; i < preds.size(); ++i) gaps.push_back(max_abs_diff(preds[i], preds[i - 1]));
  for (std::size_t i = 1; i < gaps.size(); ++i) EXPECT_LT(gaps[i], 0.75 * gaps[i - 1]) << "refinement " << i;
}

TEST(FameModel, GatesOnSimplex) {
  const Dataset ds = testing::toy_dataset(5, 3, 8, 16);
  const FameModel model(testing::toy_config(3, 1, 4, 3, 2), 17);
  for (const Matrix& g : collect_gates(model, ds)) {
    ASSERT_EQ(g.rows(), 3);
    ASSERT_EQ(g.cols(), 3);
    EXPECT_LT((g.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_GT(g.minCoeff(), 0.0);
  }
}

TEST(FameModel, GroupByGridPartitions) {
  GenSpec g = case_defaults(3);
  g.samples = 12;
  const Dataset ds = make_case(g);
  const FameModel model(testing::toy_config(3), 18);
  std::vector<PreparedSample> p;
  for (const auto& s : ds.samples) p.push_back(model.prepare(s));
  std::vector<const PreparedSample*> ptrs;
  for (const auto& s : p) ptrs.push_back(&s);
  std::vector<int> seen(p.size(), 0);
  for (const auto& grp : group_by_grid(ptrs)) {
    for (auto i : grp) {
      ++seen[i];
      EXPECT_EQ(p[i].grid.points, p[grp[0]].grid.points);
    }
  }
  EXPECT_EQ(seen, std::vector<int>(p.size(), 1));
}

TEST(FameModel, ShapeErrors) {
  const FameModel model(testing::toy_config(3), 19);
  Sample s = testing::toy_dataset(1, 2, 6, 20).samples[0];
  EXPECT_EQ(code_of([&] { model.prepare(s); }), Errc::dimension);
  ParamStore wrong = model.params();
  wrong["dec.init.b"] = Matrix::Zero(2, 1);
  EXPECT_EQ(code_of([&] { FameModel(model.config(), wrong); }), Errc::dimension);
  ModelConfig bad = model.config();
  bad.decoder.context_dim += 1;
  EXPECT_EQ(code_of([&] { bad.validate(); }), Errc::config);
}

TEST(FameModel, ConfigJsonRoundTrip) {
  const ModelConfig cfg = testing::toy_config(3, 2);
  EXPECT_EQ(to_json(model_config_from_json(to_json(cfg))), to_json(cfg));
}

TEST(AblationFlags, ShapeTheParameterSet) {
  TrainConfig t;
  const auto has = [](const FameModel& m, const std::string& prefix) {
    for (std::size_t i = 0; i < m.params().size(); ++i)
      if (m.params().name(i).rfind(prefix, 0) == 0) return true;
    return false;
  };
  const FameModel full(t.model_config(3, 1), 0);
  EXPECT_TRUE(has(full, "router.gate"));
  EXPECT_TRUE(has(full, "enc.init.bwd"));
  EXPECT_TRUE(has(full, "cross.WQ"));
  TrainConfig a = t;
  a.no_moe = true;
  EXPECT_FALSE(has(FameModel(a.model_config(3, 1), 0), "router.gate"));
  a = t;
  a.no_bidir = true;
  EXPECT_FALSE(has(FameModel(a.model_config(3, 1), 0), "enc.init.bwd"));
  a = t;
  a.no_crossattn = true;
  const ModelConfig mc = a.model_config(3, 1);
  EXPECT_FALSE(mc.cross.enabled);
  EXPECT_EQ(mc.decoder.context_dim, full.config().decoder.context_dim);
}

}  // namespace
}  // namespace fame

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "msc/training.hpp"

using namespace msc;

namespace {

TrainConfig quick_config(int iterations = 60) {
  TrainConfig c;
  c.iterations = iterations;
  c.seed = 5;
  c.eval_every = 20;
  return c;
}

std::vector<Tensor*> all_tensors(CompressionModel& m) {
  std::vector<Tensor*> out;
  for (auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

}  // namespace

TEST(TrainConfigText, ParsesKeysAndComments) {
  const TrainConfig c = parse_train_config(
      "# rate weight\nlambda = 0.03\niterations=50   # short\nscale_list = 0.5, 1, 2\n"
      "q0 = scaling=20\nvariant = no_qm\nexperts = 3\nstraight_through = true\n");
  EXPECT_EQ(c.lambda, 0.03);
  EXPECT_EQ(c.iterations, 50);
  EXPECT_EQ(c.scale_list, (std::vector<Real>{0.5, 1.0, 2.0}));
  EXPECT_EQ(c.q0[0], 1.0);
  EXPECT_EQ(c.q0[1], 20.0);
  EXPECT_EQ(c.variant, Variant::NoQm);
  EXPECT_EQ(c.experts, 3);
  EXPECT_TRUE(c.straight_through);
}

TEST(TrainConfigText, FormatParsesBackToTheSameConfig) {
  TrainConfig c;
  c.lambda = 0.0123456789;
  c.q0 = {0.7, 11.0, 13.0};
  c.variant = Variant::NoC2fqMop;
  c.grid.resolutions = {4, 9, 20, 50};
  EXPECT_EQ(parse_train_config(format_train_config(c)), c);
}

TEST(TrainConfigText, RejectsBadInput) {
  EXPECT_THROW(parse_train_config("lamda = 1\n"), InputError);
  EXPECT_THROW(parse_train_config("lambda = abc\n"), InputError);
  EXPECT_THROW(parse_train_config("lambda = -1\n"), InputError);
  EXPECT_THROW(parse_train_config("phase_a = 1\n"), InputError);
  EXPECT_THROW(parse_train_config("iterations = 2.5\n"), InputError);
  EXPECT_THROW(parse_train_config("just words\n"), InputError);
  EXPECT_THROW(parse_q0("colour=3", {1, 1, 1}), InputError);
  EXPECT_THROW(parse_train_config("scale_list = \n"), InputError);
}

TEST(TotalLoss, ZeroLambdaIsPureDistortion) {
  const AnchorSet scene = generate_synthetic_scene(1, 30, AttributeLayout(8, 2));
  const CompressionModel m = CompressionModel::init(model_config_for(quick_config(), scene));
  std::mt19937_64 rng(1);
  ForwardOptions opt;
  opt.noise = uniform_noise(30, 20, rng);
  const GridStencil st = m.grid.stencil(scene.locations());
  Graph g;
  const LossTerms t = total_loss(g, m, st, scene.attributes(), GradientMatrix::ones(30, 20), opt, 0.0);
  EXPECT_EQ(t.total.value()(0, 0), t.distortion.value()(0, 0));
  Graph g2;
  const LossTerms t2 = total_loss(g2, m, st, scene.attributes(), GradientMatrix::ones(30, 20), opt, 0.5);
  EXPECT_NEAR(t2.total.value()(0, 0), t2.distortion.value()(0, 0) + 0.5 * t2.bits.value()(0, 0) / 30.0, 1e-12);
}

TEST(TotalLoss, GradientPassesCheckAtInit) {
  const AnchorSet scene = generate_synthetic_scene(2, 6, AttributeLayout(2, 1));
  TrainConfig tc = quick_config();
  tc.grid.log2_table = 3;
  tc.experts = 2;
  CompressionModel m = CompressionModel::init(model_config_for(tc, scene));
  m.gradients_collected = true;
  const GradientMatrix grads = active_gradients(m, 6);
  std::mt19937_64 rng(2);
  ForwardOptions opt;
  opt.hard = false;  // the one-hot forward has zero finite-difference slope
  opt.tau = 0.5;
  for (auto& gum : opt.gumbel) gum = sample_gumbel(5, rng);
  opt.noise = uniform_noise(6, scene.layout().k(), rng);
  const GridStencil st = m.grid.stencil(scene.locations());
  const std::function<Var(Graph&)> f = [&](Graph& g) {
    return total_loss(g, m, st, scene.attributes(), grads, opt, 0.01).total;
  };
  // h = 1e-3: with the 1e-8 floor in the error measure, the roundoff of a
  // smaller step dominates on parameters whose gradient is ~1e-10.
  EXPECT_LT(diff::gradient_check(f, all_tensors(m), 1e-3), 1e-4);
}

TEST(Train, SameSeedGivesIdenticalParameters) {
  const AnchorSet scene = generate_synthetic_scene(3, 40, AttributeLayout(8, 2));
  TrainResult a = train(scene, quick_config());
  TrainResult b = train(scene, quick_config());
  const auto pa = a.model.parameters();
  const auto pb = b.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor->value, pb[i].tensor->value) << pa[i].name;
  EXPECT_EQ(a.trace.losses, b.trace.losses);
  std::ostringstream ca, cb;
  a.trace.write_csv(ca);
  b.trace.write_csv(cb);
  EXPECT_EQ(ca.str(), cb.str());
}

TEST(Train, PhaseAUsesAllOnesThenSwitchesOnce) {
  const AnchorSet scene = generate_synthetic_scene(3, 40, AttributeLayout(8, 2));
  TrainConfig c = quick_config(40);
  c.eval_every = 1;
  c.measure_actual = false;
  c.phase_a = 0.25;
  const TrainResult r = train(scene, c);
  ASSERT_EQ(r.trace.records.size(), 40u);
  for (const auto& rec : r.trace.records) {
    EXPECT_EQ(rec.phase_b, rec.iteration >= 10);
    EXPECT_EQ(rec.gradients_all_ones, !rec.phase_b) << rec.iteration;
  }
  EXPECT_TRUE(r.model.gradients_collected);
  c.variant = Variant::NoQm;
  const TrainResult q = train(scene, c);
  for (const auto& rec : q.trace.records) EXPECT_TRUE(rec.gradients_all_ones);
}

TEST(Train, TwoAnchorLossDecreases) {
  const AnchorSet scene = generate_synthetic_scene(4, 2, AttributeLayout(8, 2));
  TrainConfig c = quick_config(200);
  c.eval_every = 0;
  c.measure_actual = false;
  const TrainResult r = train(scene, c);
  ASSERT_EQ(r.trace.losses.size(), 200u);
  // The objective is stochastic (noise proxy, Gumbel draws), so the check is on
  // the 10-point moving average: its last value is below its first, and its
  // least-squares trend is downward.
  std::vector<Real> ma;
  for (std::size_t i = 10; i <= r.trace.losses.size(); ++i) {
    Real s = 0.0;
    for (std::size_t j = i - 10; j < i; ++j) s += r.trace.losses[j];
    ma.push_back(s / 10.0);
  }
  EXPECT_LT(ma.back(), ma.front());
  const Real n = static_cast<Real>(ma.size());
  Real sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const Real x = static_cast<Real>(i);
    sx += x;
    sy += ma[i];
    sxx += x * x;
    sxy += x * ma[i];
  }
  EXPECT_LT((n * sxy - sx * sy) / (n * sxx - sx * sx), 0.0);
}

TEST(Train, LargerLambdaSpendsFewerBits) {
  const AnchorSet scene = generate_synthetic_scene(5, 200, AttributeLayout(8, 2));
  TrainConfig lo = quick_config(300);
  lo.eval_every = 0;
  lo.measure_actual = false;
  lo.lambda = 1e-3;
  TrainConfig hi = lo;
  hi.lambda = 1e-1;
  const EvalPoint a = evaluate(train(scene, lo).model, scene);
  const EvalPoint b = evaluate(train(scene, hi).model, scene);
  EXPECT_LT(b.estimated_bits, a.estimated_bits);
  EXPECT_GT(b.distortion, a.distortion);
}

TEST(Train, DivergenceAborts) {
  const AnchorSet scene = generate_synthetic_scene(5, 20, AttributeLayout(8, 2));
  TrainConfig c = quick_config(10);
  c.divergence_limit = 1e-12;
  EXPECT_THROW(train(scene, c), DivergenceError);
}

TEST(Train, MeasuredBitsTrackTheEstimate) {
  const AnchorSet scene = generate_synthetic_scene(6, 600, AttributeLayout(8, 2));
  TrainConfig c = quick_config(100);
  c.eval_every = 50;
  const TrainResult r = train(scene, c);
  for (const auto& rec : r.trace.records) {
    ASSERT_GE(rec.actual_bits, 0.0);
    EXPECT_LE(rec.actual_bits, 1.02 * rec.estimated_bits + 3 * 256.0) << rec.iteration;
  }
}

TEST(Pipeline, TrainedModelRoundTripsLosslessly) {
  const AnchorSet scene = generate_synthetic_scene(7, 100, AttributeLayout(8, 2));
  const RunResult r = run_pipeline(scene, quick_config());
  EXPECT_TRUE(r.lossless);
  EXPECT_EQ(r.location_bytes + r.attribute_bytes + r.network_bytes + r.other_bytes, r.total_bytes);
  EXPECT_GT(r.distortion, 0.0);
}

TEST(Pipeline, SweepAndAblateShapes) {
  const AnchorSet scene = generate_synthetic_scene(8, 50, AttributeLayout(8, 2));
  const TrainConfig c = quick_config(20);
  EXPECT_THROW(rd_sweep(scene, {}, c, 1), InputError);
  EXPECT_EQ(rd_sweep(scene, {1e-2}, c, 1).size(), 1u);
  const auto dup = rd_sweep(scene, {1e-2, 1e-2}, c, 2);
  ASSERT_EQ(dup.size(), 2u);
  EXPECT_EQ(dup[0].total_bytes, dup[1].total_bytes);
  EXPECT_EQ(dup[0].distortion, dup[1].distortion);
  const auto one = ablate(scene, c, {Variant::NoMop}, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].variant, "no_mop");
  std::ostringstream csv;
  write_runs_csv(csv, dup);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(Pipeline, ParallelRunsKeepJobOrder) {
  std::vector<std::function<RunResult()>> jobs;
  for (int i = 0; i < 6; ++i) {
    jobs.push_back([i] {
      RunResult r;
      r.seed = static_cast<std::uint64_t>(i);
      return r;
    });
  }
  const auto out = run_parallel(jobs, 3);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out[static_cast<std::size_t>(i)].seed, static_cast<std::uint64_t>(i));
  jobs.push_back([]() -> RunResult { throw DivergenceError("boom"); });
  EXPECT_THROW(run_parallel(jobs, 2), DivergenceError);
}

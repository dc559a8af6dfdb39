#include <gtest/gtest.h>

#include <random>

#include "msc/mop.hpp"

using namespace msc;

namespace {

Mat random_inputs(Index n, Index d, std::uint64_t seed, Real range = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(-range, range);
  Mat x(n, d);
  for (Index i = 0; i < x.size(); ++i) x(i) = u(rng);
  return x;
}

Eigen::VectorXd flatten(MopNetwork& net, int expert) {
  std::vector<NamedParam> ps;
  net.experts()[static_cast<std::size_t>(expert)].collect("e", ps);
  std::vector<Real> v;
  for (auto& p : ps) v.insert(v.end(), p.tensor->value.data(), p.tensor->value.data() + p.tensor->value.size());
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

TEST(Mop, FiveExpertsAreAllDifferent) {
  MopNetwork net = MopNetwork::init(1, 8, MopConfig{});
  ASSERT_EQ(net.expert_count(), 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) EXPECT_NE(flatten(net, i), flatten(net, j)) << i << " vs " << j;
  }
  EXPECT_EQ(MopNetwork::scheme_for(0), InitScheme::UniformFanIn);
  EXPECT_EQ(MopNetwork::scheme_for(1), InitScheme::NormalFanIn);
  EXPECT_EQ(MopNetwork::scheme_for(2), InitScheme::Orthogonal);
  EXPECT_EQ(MopNetwork::scheme_for(3), InitScheme::UniformFanIn);
}

TEST(Mop, ZeroExpertsIsAnError) {
  MopConfig c;
  c.experts = 0;
  EXPECT_THROW(MopNetwork::init(1, 8, c), InputError);
}

TEST(Mop, SameSeedSameNetwork) {
  MopNetwork a = MopNetwork::init(4, 8, MopConfig{});
  MopNetwork b = MopNetwork::init(4, 8, MopConfig{});
  const Mat x = random_inputs(10, 8, 1);
  EXPECT_EQ(a.fuse(x), b.fuse(x));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(flatten(a, i), flatten(b, i));
}

TEST(Mop, SingleExpertFusesToItsOutput) {
  MopConfig c;
  c.experts = 1;
  const MopNetwork net = MopNetwork::init(2, 8, c);
  const Mat x = random_inputs(10, 8, 2);
  EXPECT_TRUE((net.gate_weights(x).array() == 1.0).all());
  EXPECT_EQ(net.fuse(x), net.expert_outputs(x)[0]);
}

TEST(Mop, EqualLogitsGiveUniformWeights) {
  MopNetwork net = MopNetwork::init(3, 8, MopConfig{});
  net.gate().weight.value.setZero();
  net.gate().bias.value.setZero();
  const Mat w = net.gate_weights(random_inputs(7, 8, 3));
  EXPECT_LT((w.array() - 0.2).abs().maxCoeff(), 1e-15);
}

TEST(Mop, WeightsAreProbabilityVectors) {
  const MopNetwork net = MopNetwork::init(3, 8, MopConfig{});
  const Mat w = net.gate_weights(random_inputs(1000, 8, 4, 5.0));
  EXPECT_LT((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GT(w.minCoeff(), 0.0);
  EXPECT_LT(w.maxCoeff(), 1.0);
}

TEST(Mop, DominantLogitTakesAllWeight) {
  MopNetwork net = MopNetwork::init(3, 8, MopConfig{});
  net.gate().weight.value.setZero();
  net.gate().bias.value.setZero();
  net.gate().bias.value(0, 3) = 60.0;
  const Mat x = random_inputs(4, 8, 5);
  const Mat w = net.gate_weights(x);
  EXPECT_GT(w.col(3).minCoeff(), 1.0 - 1e-15);
  EXPECT_TRUE(net.fuse(x).isApprox(net.expert_outputs(x)[3], 1e-15));
}

TEST(Mop, NanLogitsAreAnError) {
  const MopNetwork net = MopNetwork::init(3, 8, MopConfig{});
  Mat x = random_inputs(2, 8, 6);
  x(1, 2) = std::numeric_limits<Real>::quiet_NaN();
  EXPECT_THROW(net.gate_weights(x), NumericError);
  EXPECT_THROW(net.gate_weights(Mat::Zero(2, 7)), ShapeError);
}

TEST(Mop, FuseMatchesDirectSummation) {
  const MopNetwork net = MopNetwork::init(5, 8, MopConfig{});
  const Mat x = random_inputs(30, 8, 7);
  // independent re-evaluation of every expert and the gate
  Mat expect = Mat::Zero(30, 24);
  Mat logits(30, 5);
  for (Index i = 0; i < 30; ++i) {
    for (int e = 0; e < 5; ++e) {
      Real acc = net.gate().bias.value(0, e);
      for (Index c = 0; c < 8; ++c) acc += x(i, c) * net.gate().weight.value(c, e);
      logits(i, e) = acc;
    }
  }
  for (Index i = 0; i < 30; ++i) {
    Real z = 0.0;
    for (int e = 0; e < 5; ++e) z += std::exp(logits(i, e));
    for (int e = 0; e < 5; ++e) {
      const Real w = std::exp(logits(i, e)) / z;
      const auto& layers = net.experts()[static_cast<std::size_t>(e)].layers;
      std::vector<Real> h(16);
      for (Index j = 0; j < 16; ++j) {
        Real acc = layers[0].bias.value(0, j);
        for (Index c = 0; c < 8; ++c) acc += x(i, c) * layers[0].weight.value(c, j);
        h[static_cast<std::size_t>(j)] = std::tanh(acc);
      }
      for (Index o = 0; o < 24; ++o) {
        Real acc = layers[1].bias.value(0, o);
        for (Index j = 0; j < 16; ++j) acc += h[static_cast<std::size_t>(j)] * layers[1].weight.value(j, o);
        expect(i, o) += w * acc;
      }
    }
  }
  const Mat got = net.fuse(x);
  EXPECT_LT(((got - expect).array().abs() / (expect.array().abs() + 1e-300)).maxCoeff(), 1e-12);
  Graph g;
  EXPECT_TRUE(net.forward(g, g.constant(x)).fused.value().isApprox(got, 1e-14));
}

TEST(Mop, ExpertsAreDiverseAtInit) {
  const MopNetwork net = MopNetwork::init(9, 8, MopConfig{});
  const Mat x = random_inputs(1000, 8, 8);
  const auto outs = net.expert_outputs(x);
  Real total = 0.0;
  int pairs = 0;
  for (int a = 0; a < 5; ++a) {
    for (int b = a + 1; b < 5; ++b) {
      for (Index i = 0; i < 1000; ++i) {
        const auto pa = outs[static_cast<std::size_t>(a)].row(i);
        const auto pb = outs[static_cast<std::size_t>(b)].row(i);
        total += pa.dot(pb) / (pa.norm() * pb.norm());
        ++pairs;
      }
    }
  }
  EXPECT_LT(total / pairs, 0.9);
}

TEST(Mop, BackwardThroughFusePassesCheck) {
  MopConfig c;
  c.hidden = 5;
  c.output = 4;
  c.experts = 3;
  MopNetwork net = MopNetwork::init(10, 3, c);
  const Mat x = random_inputs(4, 3, 9);
  const Mat w = random_inputs(4, 4, 10);
  std::vector<NamedParam> named;
  net.collect("mop", named);
  std::vector<Tensor*> params;
  for (auto& p : named) params.push_back(p.tensor);
  const std::function<Var(Graph&)> f = [&](Graph& g) {
    return diff::sum(diff::mul(net.forward(g, g.constant(x)).fused, g.constant(w)));
  };
  EXPECT_LT(diff::gradient_check(f, params, 1e-5), 1e-6);
}

TEST(Mop, DeriveSeedSpreadsStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "msc/c2fq.hpp"
#include "msc/entropy.hpp"
#include "msc/range_coder.hpp"

using namespace msc;

namespace {

Mat uniform(Index r, Index c, std::mt19937_64& rng, Real lo, Real hi) {
  std::uniform_real_distribution<Real> u(lo, hi);
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

// Bin mass via erf, written independently of the library's tail handling.
Real oracle_probability(Real v, Real mu, Real sigma, Real q4) {
  const Real h = 0.5 / q4;
  const Real p = 0.5 * (std::erf((v + h - mu) / (sigma * std::sqrt(2.0))) - std::erf((v - h - mu) / (sigma * std::sqrt(2.0))));
  return std::min(1.0, std::max(p, 1e-9));
}

struct Fixture {
  Mat quantized;
  EntropyParams params;
  Mat q4;
};

Fixture lattice_fixture(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.params.mean = uniform(rows, cols, rng, -1.0, 1.0);
  f.params.std = uniform(rows, cols, rng, 0.05, 1.0);
  f.q4 = uniform(rows, cols, rng, 1.0, 20.0);
  std::normal_distribution<Real> n(0.0, 1.0);
  Mat a(rows, cols);
  for (Index i = 0; i < a.size(); ++i) a(i) = f.params.mean(i) + f.params.std(i) * n(rng);
  f.quantized = quantize(a, f.q4, Mode::Eval);
  return f;
}

}  // namespace

TEST(RangeCoder, RoundTripsIntervalsAndRawBits) {
  std::mt19937_64 rng(1);
  struct Sym {
    bool raw;
    std::uint32_t a, b;
  };
  std::vector<Sym> syms;
  RangeEncoder enc;
  for (int i = 0; i < 20000; ++i) {
    if (rng() % 5 == 0) {
      const int bits = 1 + static_cast<int>(rng() % 16);
      const std::uint32_t v = static_cast<std::uint32_t>(rng()) & ((1u << bits) - 1u);
      syms.push_back({true, v, static_cast<std::uint32_t>(bits)});
      enc.encode_bits(v, bits);
    } else {
      const std::uint32_t size = 1 + static_cast<std::uint32_t>(rng() % 3000);
      const std::uint32_t start = static_cast<std::uint32_t>(rng() % (kFreqTotal - size + 1));
      syms.push_back({false, start, size});
      enc.encode(start, size);
    }
  }
  const auto bytes = enc.finish();
  RangeDecoder dec(bytes);
  for (const auto& s : syms) {
    if (s.raw) {
      ASSERT_EQ(dec.decode_bits(static_cast<int>(s.b)), s.a);
    } else {
      const std::uint32_t slot = dec.peek();
      ASSERT_GE(slot, s.a);
      ASSERT_LT(slot, s.a + s.b);
      dec.consume(s.a, s.b);
    }
  }
}

TEST(RangeCoder, EmptyStreamIsJustTheFlush) {
  RangeEncoder enc;
  const auto bytes = enc.finish();
  EXPECT_LE(bytes.size(), 8u);
}

TEST(EntropyHead, ZeroHeadGivesLn2) {
  std::mt19937_64 rng(2);
  EntropyHead head(24, 16, 6, rng);
  for (auto& l : head.mlp.layers) {
    l.weight.value.setZero();
    l.bias.value.setZero();
  }
  const EntropyParams p = head.eval(uniform(5, 24, rng, -1.0, 1.0));
  EXPECT_TRUE((p.mean.array() == 0.0).all());
  EXPECT_LT((p.std.array() - std::log(2.0)).abs().maxCoeff(), 1e-15);
  EXPECT_NEAR(p.std(0, 0), 0.6931, 1e-4);
}

TEST(EntropyHead, TinyStdIsClamped) {
  std::mt19937_64 rng(3);
  EntropyHead head(4, 3, 2, rng);
  for (auto& l : head.mlp.layers) l.weight.value.setZero();
  head.mlp.layers.back().bias.value.setConstant(-40.0);  // softplus(-40) ~ 4e-18
  const EntropyParams p = head.eval(Mat::Zero(2, 4));
  EXPECT_TRUE((p.std.array() == kSigmaMin).all());
  Graph g;
  const auto [mean, sd] = head.forward(g, g.constant(Mat(Mat::Zero(2, 4))));
  EXPECT_TRUE((sd.value().array() == kSigmaMin).all());
}

TEST(EntropyHead, PredictParamsMatchesIndependentEvaluation) {
  std::mt19937_64 rng(4);
  const AttributeLayout layout(8, 2);
  std::array<EntropyHead, kGroupCount> heads{EntropyHead(24, 16, 8, rng), EntropyHead(24, 16, 6, rng),
                                             EntropyHead(24, 16, 6, rng)};
  const Mat prior = uniform(10, 24, rng, -1.0, 1.0);
  const EntropyParams p = predict_params(prior, heads, layout);
  for (Group grp : kGroups) {
    const auto& head = heads[static_cast<int>(grp)];
    const auto r = layout.range(grp);
    const auto& l0 = head.mlp.layers[0];
    const auto& l1 = head.mlp.layers[1];
    for (Index a = 0; a < 10; ++a) {
      std::vector<Real> h(16);
      for (Index j = 0; j < 16; ++j) {
        Real acc = l0.bias.value(0, j);
        for (Index c = 0; c < 24; ++c) acc += prior(a, c) * l0.weight.value(c, j);
        h[static_cast<std::size_t>(j)] = std::tanh(acc);
      }
      for (Index o = 0; o < r.count; ++o) {
        Real mu = l1.bias.value(0, o), raw = l1.bias.value(0, o + r.count);
        for (Index j = 0; j < 16; ++j) {
          mu += h[static_cast<std::size_t>(j)] * l1.weight.value(j, o);
          raw += h[static_cast<std::size_t>(j)] * l1.weight.value(j, o + r.count);
        }
        const Real sd = std::max(std::log1p(std::exp(raw)), kSigmaMin);
        EXPECT_NEAR(p.mean(a, r.begin + o), mu, 1e-12 * std::abs(mu) + 1e-15);
        EXPECT_NEAR(p.std(a, r.begin + o), sd, 1e-12 * sd);
      }
    }
  }
}

TEST(BinProbability, SymmetricAroundTheMean) {
  for (Real q4 : {0.5, 2.0, 13.0}) {
    for (int k = 1; k < 6; ++k) {
      const Real lo = bin_probability(0.3 - k / q4, 0.3, 0.7, q4);
      const Real hi = bin_probability(0.3 + k / q4, 0.3, 0.7, q4);
      EXPECT_NEAR(lo, hi, 1e-14);
    }
  }
}

TEST(BinProbability, LatticeSumsToOne) {
  for (Real q4 : {0.7, 3.0, 25.0}) {
    const Real mu = 0.37, sigma = 0.9;
    const auto lo = static_cast<long>(std::floor((mu - 8 * sigma) * q4)) - 1;
    const auto hi = static_cast<long>(std::ceil((mu + 8 * sigma) * q4)) + 1;
    Real total = 0.0;
    for (long s = lo; s <= hi; ++s) total += bin_probability(static_cast<Real>(s) / q4, mu, sigma, q4);
    // the floor adds up to 1e-9 per far-tail bin
    EXPECT_GE(total, 1.0 - 1e-6);
    EXPECT_LE(total, 1.0 + 1e-9 * static_cast<Real>(hi - lo + 1));
  }
}

TEST(BinProbability, WideGaussianApproachesDensityTimesWidth) {
  const Real sigma = 1e6, q4 = 1.0;
  const Real p = bin_probability(0.0, 0.0, sigma, q4);
  EXPECT_NEAR(p, 1.0 / (sigma * std::sqrt(2.0 * M_PI)), 1e-12);
  EXPECT_GE(bin_probability(0.0, 0.0, 1e12, q4), kProbMin);
}

TEST(BinProbability, MatchesErfOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  for (int t = 0; t < 2000; ++t) {
    const Real mu = 2 * u(rng) - 1, sigma = 0.05 + u(rng), q4 = 0.5 + 20 * u(rng);
    const Real v = std::round((mu + 2 * (2 * u(rng) - 1) * sigma) * q4) / q4;
    const Real expect = oracle_probability(v, mu, sigma, q4);
    EXPECT_NEAR(bin_probability(v, mu, sigma, q4), expect, 1e-12 + 1e-10 * expect);
  }
}

TEST(EstimateBits, HalfProbabilityIsOneBit) {
  const Mat v = Mat::Zero(1, 1);
  EntropyParams p;
  p.mean = Mat::Constant(1, 1, 0.5);  // mean on the upper bin edge, tiny std
  p.std = Mat::Constant(1, 1, kSigmaMin);
  EXPECT_NEAR(estimate_bits(v, p, Mat::Ones(1, 1)), 1.0, 1e-12);
}

TEST(EstimateBits, CertainSymbolIsZeroBits) {
  EntropyParams p;
  p.mean = Mat::Zero(1, 1);
  p.std = Mat::Constant(1, 1, kSigmaMin);
  EXPECT_EQ(estimate_bits(Mat::Zero(1, 1), p, Mat::Ones(1, 1)), 0.0);
}

TEST(EstimateBits, MatchesPerElementSummation) {
  const Fixture f = lattice_fixture(50, 20, 6);
  Real expect = 0.0;
  for (Index i = 0; i < f.quantized.size(); ++i) {
    expect -= std::log2(oracle_probability(f.quantized(i), f.params.mean(i), f.params.std(i), f.q4(i)));
  }
  EXPECT_NEAR(estimate_bits(f.quantized, f.params, f.q4), expect, 1e-9 * expect);
}

TEST(GaussianBits, GraphValueMatchesEstimate) {
  const Fixture f = lattice_fixture(10, 20, 7);
  Graph g;
  const Var bits = gaussian_bits(g.constant(f.quantized), g.constant(f.params.mean), g.constant(f.params.std),
                                 g.constant(f.q4));
  EXPECT_NEAR(bits.value().sum(), estimate_bits(f.quantized, f.params, f.q4), 1e-9);
}

TEST(GaussianBits, GradientThroughHeadPassesCheck) {
  std::mt19937_64 rng(8);
  EntropyHead head(5, 4, 3, rng);
  const Mat prior = uniform(6, 5, rng, -1.0, 1.0);
  const Mat values = uniform(6, 3, rng, -0.8, 0.8);
  const Mat q4 = uniform(6, 3, rng, 2.0, 6.0);
  std::vector<NamedParam> named;
  head.mlp.collect("head", named);
  std::vector<Tensor*> params;
  for (auto& p : named) params.push_back(p.tensor);
  const std::function<Var(Graph&)> f = [&](Graph& g) {
    const auto [mean, sd] = head.forward(g, g.constant(prior));
    return diff::sum(gaussian_bits(g.constant(values), mean, sd, g.constant(q4)));
  };
  EXPECT_LT(diff::gradient_check(f, params, 1e-6), 1e-5);
}

TEST(GaussianBits, GradientInEveryInputPassesCheck) {
  std::mt19937_64 rng(9);
  const Mat mean = uniform(3, 4, rng, -0.5, 0.5);
  const Mat sd = uniform(3, 4, rng, 0.2, 1.0);
  const Mat q4 = uniform(3, 4, rng, 1.0, 5.0);
  const Mat v = uniform(3, 4, rng, -1.0, 1.0);
  for (int which = 0; which < 4; ++which) {
    const diff::ScalarFn<Real> f = [&](Graph& g, const Var& x) {
      const Var in[4] = {which == 0 ? x : g.constant(v), which == 1 ? x : g.constant(mean),
                         which == 2 ? x : g.constant(sd), which == 3 ? x : g.constant(q4)};
      return diff::sum(gaussian_bits(in[0], in[1], in[2], in[3]));
    };
    const Mat& at = which == 0 ? v : which == 1 ? mean : which == 2 ? sd : q4;
    EXPECT_LT(diff::gradient_check(f, at, 1e-6), 1e-6) << "input " << which;
  }
}

TEST(AttributeCoder, TenThousandSymbolsRoundTrip) {
  const Fixture f = lattice_fixture(500, 20, 10);
  CoderStats stats;
  const auto payload = encode_attributes(f.quantized, f.params, f.q4, &stats);
  EXPECT_EQ(stats.symbols, 10000u);
  const Mat back = decode_attributes(payload, f.params, f.q4);
  EXPECT_EQ(back, f.quantized);
  EXPECT_EQ(decode_attribute_indices(payload, f.params, f.q4), lattice_indices(f.quantized, f.q4));
}

TEST(AttributeCoder, PayloadIsCloseToTheEstimate) {
  const Fixture f = lattice_fixture(500, 20, 11);
  const auto payload = encode_attributes(f.quantized, f.params, f.q4);
  const Real est = estimate_bits(f.quantized, f.params, f.q4);
  EXPECT_LE(static_cast<Real>(payload.size()), est / 8.0 * 1.02 + 32.0);
  EXPECT_GE(8.0 * static_cast<Real>(payload.size()), 0.98 * est);
}

TEST(AttributeCoder, FarSymbolsAreEscaped) {
  Fixture f = lattice_fixture(4, 5, 12);
  f.quantized(0, 0) = std::round(f.params.mean(0, 0) * f.q4(0, 0) + 100000.0) / f.q4(0, 0);
  f.quantized(1, 2) = std::round(f.params.mean(1, 2) * f.q4(1, 2) - 2000000.0) / f.q4(1, 2);
  CoderStats stats;
  const auto payload = encode_attributes(f.quantized, f.params, f.q4, &stats);
  EXPECT_EQ(stats.escapes, 2u);
  EXPECT_EQ(decode_attributes(payload, f.params, f.q4), f.quantized);
}

TEST(AttributeCoder, ImprobableSymbolsInsideTheWindowCostFewBits) {
  // sigma * Q4 = 0.5: offsets of 6..40 steps have zero quantized frequency.
  const Index n = 200;
  EntropyParams p;
  p.mean = Mat::Zero(n, 1);
  p.std = Mat::Constant(n, 1, 0.05);
  const Mat q4 = Mat::Constant(n, 1, 10.0);
  Mat a(n, 1);
  for (Index i = 0; i < n; ++i) a(i, 0) = static_cast<Real>((i % 2 ? 1 : -1) * (6 + i % 35)) / 10.0;
  CoderStats stats;
  const auto payload = encode_attributes(a, p, q4, &stats);
  EXPECT_EQ(stats.escapes, static_cast<std::size_t>(n));
  EXPECT_EQ(decode_attributes(payload, p, q4), a);
  // flag (12 bits) + selector + Exp-Golomb of at most 80: under 27 bits each, not 45
  EXPECT_LT(8.0 * static_cast<Real>(payload.size()), 27.0 * n + 64.0);
}

TEST(AttributeCoder, ExtremeModelsStillRoundTrip) {
  Fixture f = lattice_fixture(50, 20, 13);
  f.params.std.col(0).setConstant(kSigmaMin);   // nearly deterministic
  f.params.std.col(1).setConstant(1e4);         // nearly flat
  f.q4.col(2).setConstant(1e4);                 // very fine lattice
  f.quantized = quantize(f.quantized, f.q4, Mode::Eval);
  const auto payload = encode_attributes(f.quantized, f.params, f.q4);
  EXPECT_EQ(decode_attributes(payload, f.params, f.q4), f.quantized);
}

TEST(AttributeCoder, EmptySetIsJustTheFlush) {
  EntropyParams p;
  p.mean = Mat::Zero(0, 20);
  p.std = Mat::Ones(0, 20);
  const auto payload = encode_attributes(Mat::Zero(0, 20), p, Mat::Ones(0, 20));
  RangeEncoder enc;
  EXPECT_EQ(payload, enc.finish());
  EXPECT_EQ(decode_attributes(payload, p, Mat::Ones(0, 20)).size(), 0);
}

TEST(AttributeCoder, OffLatticeValueIsRejected) {
  Fixture f = lattice_fixture(3, 3, 14);
  f.quantized(1, 1) += 0.3 / f.q4(1, 1);
  EXPECT_THROW(encode_attributes(f.quantized, f.params, f.q4), InputError);
}

TEST(Locations, MinCornerMapsToZero) {
  const SceneBounds b;
  Locations x(2, 3);
  x << -1.0, -1.0, -1.0, 1.0, 1.0, 1.0;
  const LocationCodes c = quantize_locations(x, b);
  EXPECT_EQ(c(0, 0), 0);
  EXPECT_EQ(c(0, 2), 0);
  EXPECT_EQ(c(1, 1), 65535);
}

TEST(Locations, RoundTripIsExactAndWithinHalfCell) {
  SceneBounds b;
  b.min << -3.0, 0.0, 10.0;
  b.max << 5.0, 2.0, 11.0;
  std::mt19937_64 rng(15);
  Locations x(1000, 3);
  for (Index i = 0; i < 1000; ++i) {
    for (int a = 0; a < 3; ++a) x(i, a) = std::uniform_real_distribution<Real>(b.min[a], b.max[a])(rng);
  }
  const auto payload = encode_locations(x, b);
  EXPECT_EQ(payload.size(), 4u + 6u * 1000u);
  const DecodedLocations d = decode_locations(payload, b);
  EXPECT_EQ(d.codes, quantize_locations(x, b));
  for (int a = 0; a < 3; ++a) {
    const Real half_cell = 0.5 * b.extent()[a] / 65535.0;
    EXPECT_LE((d.values.col(a) - x.col(a)).cwiseAbs().maxCoeff(), half_cell * (1 + 1e-9));
  }
}

TEST(Locations, OutOfBoundsIsAnError) {
  Locations x(1, 3);
  x << 0.0, 2.0, 0.0;
  EXPECT_THROW(encode_locations(x, SceneBounds{}), InputError);
}

TEST(Locations, TrailingBytesAreAFormatError) {
  Locations x = Locations::Zero(2, 3);
  auto payload = encode_locations(x, SceneBounds{});
  payload.push_back(0);
  EXPECT_THROW(decode_locations(payload, SceneBounds{}), FormatError);
  payload.resize(5);
  EXPECT_THROW(decode_locations(payload, SceneBounds{}), TruncatedStreamError);
}

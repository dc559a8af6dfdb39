#include "msc/entropy.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "msc/bytes.hpp"
#include "msc/range_coder.hpp"

namespace msc {

namespace {

constexpr Real kInvSqrt2 = 0.70710678118654752440;
constexpr Real kInvSqrt2Pi = 0.39894228040143267794;
constexpr Real kLn2 = 0.69314718055994530942;

Real normal_pdf(Real x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// P(b < Z < a) for a >= b, evaluated on the tail that avoids cancellation.
Real bin_mass(Real a, Real b) {
  if (b > 0.0) return 0.5 * (std::erfc(b * kInvSqrt2) - std::erfc(a * kInvSqrt2));
  if (a < 0.0) return 0.5 * (std::erfc(-a * kInvSqrt2) - std::erfc(-b * kInvSqrt2));
  return 1.0 - 0.5 * std::erfc(a * kInvSqrt2) - 0.5 * std::erfc(-b * kInvSqrt2);
}

struct BinTerms {
  Real a, b, p;
};

BinTerms bin_terms(Real v, Real mu, Real sigma, Real q4) {
  const Real h = 0.5 / q4;
  const Real a = (v + h - mu) / sigma;
  const Real b = (v - h - mu) / sigma;
  return {a, b, bin_mass(a, b)};
}

void check_same_shape(const char* op, const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + diff::shape_str(a.rows(), a.cols()) + " and " +
                     diff::shape_str(b.rows(), b.cols()) + " differ");
  }
}

}  // namespace

void EntropyParams::validate() const {
  check_same_shape("EntropyParams", mean, std);
  if (!mean.allFinite() || !std.allFinite()) throw NumericError("EntropyParams: non-finite parameters");
  if ((std.array() < kSigmaMin).any()) throw NumericError("EntropyParams: std below sigma_min");
}

EntropyHead::EntropyHead(Index input, Index hidden, Index width_, std::mt19937_64& rng)
    : mlp({input, hidden, 2 * width_}, InitScheme::UniformFanIn, rng), width(width_) {}

std::pair<Var, Var> EntropyHead::forward(Graph& g, const Var& prior) const {
  const Var out = mlp.forward(g, prior);
  const Var mean = diff::slice_cols(out, 0, width);
  const Var std = diff::clamp_min(diff::softplus(diff::slice_cols(out, width, width)), kSigmaMin);
  return {mean, std};
}

EntropyParams EntropyHead::eval(const Mat& prior) const {
  const Mat out = mlp.eval(prior);
  EntropyParams p;
  p.mean = out.leftCols(width);
  p.std = out.rightCols(width).unaryExpr([](Real v) {
    const Real sp = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    return std::max(sp, kSigmaMin);
  });
  if (!p.mean.allFinite() || !p.std.allFinite()) throw NumericError("entropy head: non-finite outputs");
  return p;
}

EntropyParams predict_params(const Mat& prior, const std::array<EntropyHead, kGroupCount>& heads,
                             const AttributeLayout& layout) {
  if (!prior.allFinite()) throw NumericError("predict_params: non-finite prior feature");
  EntropyParams out;
  out.mean.resize(prior.rows(), layout.k());
  out.std.resize(prior.rows(), layout.k());
  for (Group g : kGroups) {
    const auto r = layout.range(g);
    const auto& head = heads[static_cast<int>(g)];
    if (head.width != r.count) throw ShapeError(std::string("predict_params: head width mismatch for ") + group_name(g));
    const EntropyParams p = head.eval(prior);
    out.mean.middleCols(r.begin, r.count) = p.mean;
    out.std.middleCols(r.begin, r.count) = p.std;
  }
  return out;
}

Real normal_cdf(Real x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

Real bin_probability(Real value, Real mean, Real std, Real q4) {
  const BinTerms t = bin_terms(value, mean, std, q4);
  return std::min(1.0, std::max(t.p, kProbMin));
}

Real estimate_bits(const Mat& quantized, const EntropyParams& params, const Mat& q4) {
  check_same_shape("estimate_bits", quantized, params.mean);
  check_same_shape("estimate_bits", quantized, q4);
  Real bits = 0.0;
  for (Index i = 0; i < quantized.size(); ++i) {
    bits -= std::log2(bin_probability(quantized(i), params.mean(i), params.std(i), q4(i)));
  }
  return bits;
}

Var gaussian_bits(const Var& value, const Var& mean, const Var& std, const Var& q4) {
  check_same_shape("gaussian_bits", value.value(), mean.value());
  check_same_shape("gaussian_bits", value.value(), std.value());
  check_same_shape("gaussian_bits", value.value(), q4.value());
  const Mat& v = value.value();
  Mat out(v.rows(), v.cols());
  for (Index i = 0; i < v.size(); ++i) {
    out(i) = -std::log2(bin_probability(v(i), mean.value()(i), std.value()(i), q4.value()(i)));
  }
  Graph& g = value.graph();
  return g.record(std::move(out), {value, mean, std, q4}, [value, mean, std, q4](Graph& gr, const Mat& up) {
    const Mat& v = gr.value(value);
    const Mat& mu = gr.value(mean);
    const Mat& sd = gr.value(std);
    const Mat& q = gr.value(q4);
    Mat gv = Mat::Zero(v.rows(), v.cols());
    Mat gmu = gv, gsd = gv, gq = gv;
    for (Index i = 0; i < v.size(); ++i) {
      const BinTerms t = bin_terms(v(i), mu(i), sd(i), q(i));
      if (!(t.p >= kProbMin) || t.p >= 1.0) continue;  // floored or saturated: locally constant
      const Real pa = normal_pdf(t.a);
      const Real pb = normal_pdf(t.b);
      const Real dbits_dp = -up(i) / (t.p * kLn2);
      gv(i) = dbits_dp * (pa - pb) / sd(i);
      gmu(i) = -gv(i);
      gsd(i) = dbits_dp * -(t.a * pa - t.b * pb) / sd(i);
      gq(i) = dbits_dp * -(pa + pb) / (2.0 * sd(i) * q(i) * q(i));
    }
    gr.accumulate(value, gv);
    gr.accumulate(mean, gmu);
    gr.accumulate(std, gsd);
    gr.accumulate(q4, gq);
  });
}

namespace {

// Quantized CDF over the window [lo, hi] of lattice indices. cum(lo) = 0 and
// cum(hi + 1) = kModelMass; slots at or above kModelMass mean "escape".
constexpr std::uint32_t kModelMass = kFreqTotal - kEscapeFreq;

class SymbolModel {
 public:
  SymbolModel(Real mean, Real std, Real q4) : mean_(mean), std_(std), q4_(q4) {
    const Real c = round_half(mean * q4);
    const Real limit = static_cast<Real>(std::numeric_limits<std::int32_t>::max()) - 2.0 * kSupportWindow;
    centre_ = static_cast<std::int64_t>(std::clamp(c, -limit, limit));
    lo_ = centre_ - kSupportWindow;
    hi_ = centre_ + kSupportWindow;
  }

  std::int64_t centre() const { return centre_; }
  std::int64_t lo() const { return lo_; }
  std::int64_t hi() const { return hi_; }

  std::uint32_t cum(std::int64_t i) const {
    if (i <= lo_) return 0;
    if (i > hi_) return kModelMass;
    const Real edge = (static_cast<Real>(i) - 0.5) / q4_;
    const Real z = (edge - mean_) / std_;
    const Real scaled = normal_cdf(z) * static_cast<Real>(kModelMass);
    const auto c = static_cast<std::uint32_t>(std::floor(scaled));
    return std::min(c, kModelMass);
  }

 private:
  static Real round_half(Real v) { return std::round(v); }

  Real mean_, std_, q4_;
  std::int64_t centre_, lo_, hi_;
};

void encode_raw_index(RangeEncoder& enc, std::int64_t idx) {
  const auto u = static_cast<std::uint32_t>(static_cast<std::int32_t>(idx));
  enc.encode_bits(u & 0xFFFFu, 16);
  enc.encode_bits(u >> 16, 16);
}

std::int64_t decode_raw_index(RangeDecoder& dec) {
  const std::uint32_t lo = dec.decode_bits(16);
  const std::uint32_t hi = dec.decode_bits(16);
  return static_cast<std::int32_t>(lo | (hi << 16));
}

// Escaped symbols inside the window: order-0 Exp-Golomb code of the zigzag
// offset from the window centre.
constexpr int kMaxGolombPrefix = 17;

void encode_near_escape(RangeEncoder& enc, std::int64_t offset) {
  const auto z = static_cast<std::uint32_t>(offset >= 0 ? 2 * offset : -2 * offset - 1);
  const std::uint32_t v = z + 1;
  const int n = std::bit_width(v) - 1;
  for (int b = 0; b < n; ++b) enc.encode_bits(0, 1);
  for (int b = n; b >= 0; --b) enc.encode_bits((v >> b) & 1u, 1);
}

std::int64_t decode_near_escape(RangeDecoder& dec) {
  int n = 0;
  while (dec.decode_bits(1) == 0) {
    if (++n > kMaxGolombPrefix) throw FormatError("decode_attributes: malformed escape code");
  }
  std::uint32_t v = 1;
  for (int b = 0; b < n; ++b) v = (v << 1) | dec.decode_bits(1);
  const std::int64_t z = static_cast<std::int64_t>(v) - 1;
  return z % 2 == 0 ? z / 2 : -(z + 1) / 2;
}

void check_coder_inputs(const EntropyParams& params, const Mat& q4) {
  params.validate();
  check_same_shape("attribute coder", params.mean, q4);
  if (!q4.allFinite() || !(q4.array() > 0.0).all()) throw InputError("attribute coder: Q4 must be finite and positive");
}

}  // namespace

std::vector<std::uint8_t> encode_attributes(const Mat& quantized, const EntropyParams& params, const Mat& q4,
                                            CoderStats* stats) {
  check_same_shape("encode_attributes", quantized, q4);
  check_coder_inputs(params, q4);
  RangeEncoder enc;
  CoderStats local;
  for (Index i = 0; i < quantized.size(); ++i) {
    const Real scaled = quantized(i) * q4(i);
    const Real rounded = std::round(scaled);
    if (!std::isfinite(scaled) || std::abs(quantized(i) - rounded / q4(i)) > 1e-9) {
      throw InputError("encode_attributes: value at element " + std::to_string(i) + " is not on its lattice");
    }
    if (std::abs(rounded) > static_cast<Real>(std::numeric_limits<std::int32_t>::max())) {
      throw InputError("encode_attributes: lattice index exceeds the 32-bit escape range");
    }
    const auto idx = static_cast<std::int64_t>(rounded);
    const SymbolModel model(params.mean(i), params.std(i), q4(i));
    std::uint32_t start = 0, size = 0;
    if (idx >= model.lo() && idx <= model.hi()) {
      start = model.cum(idx);
      size = model.cum(idx + 1) - start;
    }
    if (size > 0) {
      enc.encode(start, size);
    } else {
      enc.encode(kModelMass, kEscapeFreq);
      const bool far = idx < model.lo() || idx > model.hi();
      enc.encode_bits(far ? 1 : 0, 1);
      if (far) {
        encode_raw_index(enc, idx);
      } else {
        encode_near_escape(enc, idx - model.centre());
      }
      ++local.escapes;
    }
    ++local.symbols;
  }
  if (stats) *stats = local;
  return enc.finish();
}

Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> decode_attribute_indices(
    std::span<const std::uint8_t> payload, const EntropyParams& params, const Mat& q4) {
  check_coder_inputs(params, q4);
  RangeDecoder dec(payload);
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> idx(q4.rows(), q4.cols());
  for (Index i = 0; i < q4.size(); ++i) {
    const SymbolModel model(params.mean(i), params.std(i), q4(i));
    const std::uint32_t slot = dec.peek();
    if (slot >= kModelMass) {
      dec.consume(kModelMass, kEscapeFreq);
      if (dec.decode_bits(1) == 1) {
        idx(i) = decode_raw_index(dec);
      } else {
        idx(i) = model.centre() + decode_near_escape(dec);
        if (idx(i) < model.lo() || idx(i) > model.hi()) throw FormatError("decode_attributes: escape outside the window");
      }
      continue;
    }
    // Largest s in [lo, hi] with cum(s) <= slot; cum(hi + 1) = kModelMass > slot.
    std::int64_t l = model.lo();
    std::int64_t r = model.hi() + 1;
    while (r - l > 1) {
      const std::int64_t m = l + (r - l) / 2;
      if (model.cum(m) <= slot) {
        l = m;
      } else {
        r = m;
      }
    }
    const std::uint32_t start = model.cum(l);
    dec.consume(start, model.cum(l + 1) - start);
    idx(i) = l;
  }
  return idx;
}

Mat decode_attributes(std::span<const std::uint8_t> payload, const EntropyParams& params, const Mat& q4) {
  const auto idx = decode_attribute_indices(payload, params, q4);
  return idx.cast<Real>().cwiseQuotient(q4);
}

LocationCodes quantize_locations(const Locations& x, const SceneBounds& bounds) {
  bounds.validate();
  LocationCodes codes(x.rows(), 3);
  const Eigen::Vector3d ext = bounds.extent();
  for (Index i = 0; i < x.rows(); ++i) {
    if (!bounds.contains(x.row(i).transpose())) {
      throw InputError("encode_locations: anchor " + std::to_string(i) + " lies outside the scene bounds");
    }
    for (int a = 0; a < 3; ++a) {
      const Real t = (x(i, a) - bounds.min[a]) / ext[a];
      codes(i, a) = static_cast<std::uint16_t>(std::clamp(std::round(t * 65535.0), 0.0, 65535.0));
    }
  }
  return codes;
}

Locations dequantize_locations(const LocationCodes& codes, const SceneBounds& bounds) {
  Locations x(codes.rows(), 3);
  const Eigen::Vector3d ext = bounds.extent();
  for (Index i = 0; i < codes.rows(); ++i) {
    for (int a = 0; a < 3; ++a) x(i, a) = bounds.min[a] + static_cast<Real>(codes(i, a)) * ext[a] / 65535.0;
  }
  return x;
}

std::vector<std::uint8_t> encode_locations(const Locations& x, const SceneBounds& bounds) {
  const LocationCodes codes = quantize_locations(x, bounds);
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(codes.rows()));
  for (Index i = 0; i < codes.rows(); ++i) {
    for (int a = 0; a < 3; ++a) w.u16(codes(i, a));
  }
  return w.take();
}

DecodedLocations decode_locations(std::span<const std::uint8_t> payload, const SceneBounds& bounds) {
  ByteReader r(payload, "locations");
  const Index n = r.u32();
  DecodedLocations out;
  out.codes.resize(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) out.codes(i, a) = r.u16();
  }
  if (r.remaining() != 0) throw FormatError("locations: trailing bytes in payload");
  out.values = dequantize_locations(out.codes, bounds);
  return out;
}

}  // namespace msc

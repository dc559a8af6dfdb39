#pragma once

// Conditional Gaussian entropy model over quantization lattices, bit
// estimation, and the attribute / location bitstreams.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "msc/anchors.hpp"

namespace msc {

inline constexpr Real kSigmaMin = 1e-4;
inline constexpr Real kProbMin = 1e-9;
/// Symbols further than this many lattice steps from the rounded mean are escaped.
inline constexpr std::int64_t kSupportWindow = std::int64_t{1} << 15;
/// Frequency mass reserved for the escape symbol (out of 2^16).
inline constexpr std::uint32_t kEscapeFreq = 16;

/// Per-element Gaussian N(mean, std^2) over attribute values.
struct EntropyParams {
  Mat mean;
  Mat std;

  void validate() const;
};

/// Two-layer head mapping a prior feature to (mean, raw std) for one group.
struct EntropyHead {
  Mlp mlp;
  Index width = 0;

  EntropyHead() = default;
  EntropyHead(Index input, Index hidden, Index width, std::mt19937_64& rng);

  /// mean: n x width; std: softplus(raw) clamped to >= kSigmaMin.
  std::pair<Var, Var> forward(Graph& g, const Var& prior) const;
  EntropyParams eval(const Mat& prior) const;
};

/// Assembles full n x k parameters from one head per attribute group.
EntropyParams predict_params(const Mat& prior, const std::array<EntropyHead, kGroupCount>& heads,
                             const AttributeLayout& layout);

/// Standard normal CDF.
Real normal_cdf(Real x);

/// Probability mass of the bin of width 1/q4 centred on `value`, floored at kProbMin.
Real bin_probability(Real value, Real mean, Real std, Real q4);

/// Sum of -log2 bin_probability over all elements.
Real estimate_bits(const Mat& quantized, const EntropyParams& params, const Mat& q4);

/// Element-wise -log2 bin probability, differentiable in all four inputs.
Var gaussian_bits(const Var& value, const Var& mean, const Var& std, const Var& q4);

struct CoderStats {
  std::size_t symbols = 0;
  std::size_t escapes = 0;
};

/// Range-codes lattice symbols Round(Â * Q4) under the per-element Gaussian
/// model. Every Â must sit on its lattice (within 1e-9 steps). A symbol with
/// zero quantized frequency is escaped: a raw 32-bit index outside the support
/// window, an Exp-Golomb offset from the window centre inside it.
std::vector<std::uint8_t> encode_attributes(const Mat& quantized, const EntropyParams& params, const Mat& q4,
                                            CoderStats* stats = nullptr);

/// Inverse of encode_attributes; returns Â = index / Q4.
Mat decode_attributes(std::span<const std::uint8_t> payload, const EntropyParams& params, const Mat& q4);

/// Same as decode_attributes, returning the lattice indices.
Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> decode_attribute_indices(
    std::span<const std::uint8_t> payload, const EntropyParams& params, const Mat& q4);

using LocationCodes = Eigen::Matrix<std::uint16_t, Eigen::Dynamic, 3>;

/// 16-bit lattice over the scene bounds.
LocationCodes quantize_locations(const Locations& x, const SceneBounds& bounds);
Locations dequantize_locations(const LocationCodes& codes, const SceneBounds& bounds);

/// Raw payload: u32 anchor count followed by 3 x u16 per anchor.
std::vector<std::uint8_t> encode_locations(const Locations& x, const SceneBounds& bounds);

struct DecodedLocations {
  LocationCodes codes;
  Locations values;
};
DecodedLocations decode_locations(std::span<const std::uint8_t> payload, const SceneBounds& bounds);

}  // namespace msc

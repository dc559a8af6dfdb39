#pragma once

// Scene encoder and decoder built on the container format.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "msc/container.hpp"

namespace msc {

struct EncodeResult {
  std::vector<std::uint8_t> bytes;
  CodecContainer container;
  SceneHeader header;
  LocationCodes location_codes;
  Locations decoded_locations;
  Mat quantized;  // the attributes a decoder reproduces
  QuantPlan plan;
  EntropyParams params;
  Real estimated_bits = 0.0;  // cross-entropy of the attribute symbols
  std::array<Real, kGroupCount> estimated_group_bits{};
  std::size_t attribute_payload_bytes = 0;  // sum of the three coded streams
  CoderStats stats;
  StorageReport report;
  RowVec mean_gate_weights;
};

/// The model is rounded to its stored 32-bit precision before any decoder-side
/// quantity is computed, so the decoder reproduces Q4 and the entropy
/// parameters exactly.
EncodeResult encode_scene(const AnchorSet& scene, const CompressionModel& model);

struct DecodeResult {
  SceneHeader header;
  LocationCodes location_codes;
  Locations locations;
  Mat attributes;
  QuantPlan plan;
  StorageReport report;
};

/// Uses nothing but the bytes.
DecodeResult decode_scene(std::span<const std::uint8_t> bytes);

/// Decoded scene as an AnchorSet (dequantized locations, decoded attributes).
AnchorSet to_anchor_set(const DecodeResult& decoded);

}  // namespace msc

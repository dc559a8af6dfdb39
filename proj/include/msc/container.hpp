#pragma once

// Sectioned little-endian container used for compressed scenes (.msc) and
// trained model files. See FORMAT.md for the byte layout.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msc/bytes.hpp"
#include "msc/model.hpp"

namespace msc {

inline constexpr char kSceneMagic[] = "MSC1";
inline constexpr char kModelMagic[] = "MSCM";
inline constexpr char kFooterMagic[] = "MSCE";
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kAlignment = 8;
inline constexpr std::size_t kPreludeBytes = 8;
inline constexpr std::size_t kSectionHeaderBytes = 16;
inline constexpr std::size_t kFooterBytes = 16;

struct Section {
  std::string tag;  // exactly 4 characters
  std::vector<std::uint8_t> payload;

  bool operator==(const Section&) const = default;
};

struct CodecContainer {
  std::string magic = kSceneMagic;
  std::uint16_t version = kFormatVersion;
  std::vector<Section> sections;

  const Section* find(const std::string& tag) const;
  const Section& require(const std::string& tag) const;
  bool operator==(const CodecContainer&) const = default;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

/// Bytes a section occupies on disk: header, payload and alignment padding.
std::size_t section_footprint(const Section& s);

std::vector<std::uint8_t> serialize(const CodecContainer& c);

/// Throws BadMagicError, VersionMismatchError, TruncatedStreamError or
/// ChecksumError (naming the section, or "footer").
CodecContainer parse(std::span<const std::uint8_t> bytes, const std::string& expected_magic = kSceneMagic);

struct StorageReport {
  std::size_t location = 0;
  std::size_t attributes = 0;
  std::size_t networks = 0;
  std::size_t other = 0;
  std::size_t total = 0;
  std::array<std::size_t, kGroupCount> attribute_groups{};
  std::vector<std::pair<std::string, std::size_t>> network_sections;
};

/// Section bytes are charged to the component they carry; prelude, header
/// section and footer count as "other".
StorageReport storage_report(const CodecContainer& c);

/// Per-scene header of a compressed file.
struct SceneHeader {
  std::uint32_t anchors = 0;
  ModelConfig config;
  bool gradients_collected = false;
  std::array<int, kGroupCount> scale_index{-1, -1, -1};  // -1 when scale selection is off
  Real sigma_min = kSigmaMin;
  Real prob_min = kProbMin;
  std::int64_t support_window = kSupportWindow;
  std::uint32_t escape_freq = kEscapeFreq;

  bool operator==(const SceneHeader&) const = default;
};

std::vector<std::uint8_t> encode_header(const SceneHeader& h);
SceneHeader decode_header(std::span<const std::uint8_t> payload);

void write_model_config(ByteWriter& w, const ModelConfig& c);
ModelConfig read_model_config(ByteReader& r);

/// Tensor list of one network component at 32-bit precision.
std::vector<std::uint8_t> encode_tensors(const std::vector<NamedParam>& params);
/// Loads values into `params`, matching by name and shape.
void decode_tensors(std::span<const std::uint8_t> payload, const std::vector<NamedParam>& params,
                    const std::string& section);

/// Network sections of every active component, in component order.
std::vector<Section> network_sections(CompressionModel& model);
void load_network_sections(const CodecContainer& c, CompressionModel& model);

/// Trained model file: "MSCM" container with a CONF section and network sections.
std::vector<std::uint8_t> serialize_model(CompressionModel& model);
CompressionModel parse_model(std::span<const std::uint8_t> bytes);
void save_model(const std::string& path, CompressionModel& model);
CompressionModel load_model(const std::string& path);

/// Copy of the model with every parameter rounded to float32, i.e. exactly
/// what a decoder reconstructs from a file.
CompressionModel round_to_stored_precision(const CompressionModel& model);

}  // namespace msc

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msc/nn.hpp"

namespace msc {

/// Attribute groups of an anchor row, in storage order.
enum class Group : int { Feature = 0, Scaling = 1, Offsets = 2 };
inline constexpr int kGroupCount = 3;
inline constexpr std::array<Group, kGroupCount> kGroups{Group::Feature, Group::Scaling, Group::Offsets};
const char* group_name(Group g);

struct ColumnRange {
  Index begin = 0;
  Index count = 0;
  Index end() const { return begin + count; }
};

/// Column layout of the attribute row: feature (D), scaling (6), offsets (3K).
class AttributeLayout {
 public:
  AttributeLayout() = default;
  AttributeLayout(Index feature_dim, Index offset_count);

  Index feature_dim() const { return feature_dim_; }
  Index offset_count() const { return offset_count_; }
  Index k() const { return feature_dim_ + 6 + 3 * offset_count_; }

  ColumnRange range(Group g) const;
  Group group_of(Index column) const;

  std::array<Mat, kGroupCount> split(const Mat& attributes) const;
  Mat concat(const std::array<Mat, kGroupCount>& parts) const;

  bool operator==(const AttributeLayout&) const = default;

 private:
  Index feature_dim_ = 8;
  Index offset_count_ = 2;
};

struct SceneBounds {
  Eigen::Vector3d min{-1.0, -1.0, -1.0};
  Eigen::Vector3d max{1.0, 1.0, 1.0};

  void validate() const;
  bool contains(const Eigen::Vector3d& p) const;
  Eigen::Vector3d extent() const { return max - min; }
  bool operator==(const SceneBounds&) const = default;
};

using Locations = Eigen::Matrix<Real, Eigen::Dynamic, 3>;

/// N anchors: one location and one attribute row each. Immutable once built.
class AnchorSet {
 public:
  AnchorSet(Locations locations, Mat attributes, AttributeLayout layout, SceneBounds bounds);

  Index size() const { return locations_.rows(); }
  const Locations& locations() const { return locations_; }
  const Mat& attributes() const { return attributes_; }
  const AttributeLayout& layout() const { return layout_; }
  const SceneBounds& bounds() const { return bounds_; }

 private:
  Locations locations_;
  Mat attributes_;
  AttributeLayout layout_;
  SceneBounds bounds_;
};

/// Knobs for the synthetic scene generator.
struct SceneOptions {
  SceneBounds bounds;
  int clusters = 8;
  std::array<Real, kGroupCount> group_amplitude{1.0, 0.3, 0.3};
  Real spatial_amplitude = 0.5;  // relative weight of the smooth location-driven term
  Real spatial_frequency = 3.0;
  Real noise_min = 0.02;  // per-cluster noise, log-uniform in [noise_min, noise_max]
  Real noise_max = 0.6;
};

/// Locations are uniform in the bounds. Each anchor belongs to its nearest
/// cluster centre; its attributes are the cluster mean plus a smooth function
/// of location plus cluster-specific Gaussian noise, scaled per group. Values
/// are rounded to float32 so a 32-bit scene file round-trips exactly.
AnchorSet generate_synthetic_scene(std::uint64_t seed, Index n, const AttributeLayout& layout,
                                   const SceneOptions& options = {});

/// Scene file: "MSCS" magic, version, value width, N, D, K, bounds, then
/// row-major locations and attributes (little-endian).
std::vector<std::uint8_t> serialize_scene(const AnchorSet& scene, int value_bytes = 4);
AnchorSet parse_scene(std::span<const std::uint8_t> bytes);
void save_scene(const std::string& path, const AnchorSet& scene, int value_bytes = 4);
AnchorSet load_scene(const std::string& path);

}  // namespace msc

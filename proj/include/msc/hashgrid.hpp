#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "msc/anchors.hpp"

namespace msc {

struct HashGridConfig {
  int levels = 4;
  int features = 2;
  int log2_table = 9;
  std::vector<int> resolutions{8, 16, 32, 64};
  Real init_range = 1e-2;

  Index output_dim() const { return static_cast<Index>(levels) * features; }
  Index table_size() const { return Index{1} << log2_table; }
  void validate() const;
  bool operator==(const HashGridConfig&) const = default;
};

/// Corner indices and trilinear weights of a batch of queries, per level.
/// Depends only on the query locations, so it is computed once per scene.
struct GridStencil {
  std::vector<Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>> index;  // per level: N x 8
  std::vector<Mat> weight;                                                  // per level: N x 8
  Index clamped = 0;  // queries that fell outside the bounds and were clamped
};

/// Multi-resolution spatial-hash feature grid with trilinear interpolation.
class HashGrid {
 public:
  static constexpr std::array<std::uint32_t, 3> kPrimes{1u, 2654435761u, 805459861u};

  HashGrid() = default;
  HashGrid(const HashGridConfig& config, const SceneBounds& bounds, std::uint64_t seed);

  const HashGridConfig& config() const { return config_; }
  const SceneBounds& bounds() const { return bounds_; }
  std::vector<Tensor>& tables() { return tables_; }
  const std::vector<Tensor>& tables() const { return tables_; }

  static std::uint32_t hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size);

  GridStencil stencil(const Locations& locations) const;

  /// N x (levels * features) interpolated features, differentiable w.r.t. the tables.
  Var forward(Graph& g, const GridStencil& stencil) const;

  Mat interpolate(const Locations& locations) const;
  Vec interpolate(const Eigen::Vector3d& location) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  std::size_t parameter_count() const;

 private:
  HashGridConfig config_;
  SceneBounds bounds_;
  std::vector<Tensor> tables_;
};

}  // namespace msc

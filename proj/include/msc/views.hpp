#pragma once

#include <cstdint>
#include <vector>

#include "msc/nn.hpp"

namespace msc {

struct ToyViewOptions {
  int views = 4;
  Index pixels = 0;  // 0 means "same as k"
  Real importance_min = 0.05;
  Real importance_max = 1.0;

  bool operator==(const ToyViewOptions&) const = default;
};

/// Stand-in for rendering: m fixed linear maps R^k -> R^pixels. Each map is
/// U diag(sigma) V^T diag(c) with orthonormal U, V, sigma in [0.5, 1.5] and a
/// per-element importance c shared by all views, so every map is full rank
/// while attribute elements differ in how much they matter.
class ToyViewModel {
 public:
  static ToyViewModel generate(std::uint64_t seed, Index k, const ToyViewOptions& options = {});

  int views() const { return static_cast<int>(maps_.size()); }
  Index k() const { return k_; }
  Index pixels() const { return maps_.front().rows(); }
  std::uint64_t seed() const { return seed_; }
  const Mat& map(int v) const { return maps_.at(static_cast<std::size_t>(v)); }
  const Vec& importance() const { return importance_; }

 private:
  std::uint64_t seed_ = 0;
  Index k_ = 0;
  std::vector<Mat> maps_;
  Vec importance_;
};

/// Squared error of one view, summed over pixels and averaged over anchors:
/// |(A - B) M_v^T|^2 / N.
Real toy_view_distortion(const ToyViewModel& views, int view, const Mat& original, const Mat& reconstructed);

/// Mean of toy_view_distortion over all views.
Real toy_distortion(const ToyViewModel& views, const Mat& original, const Mat& reconstructed);

Var toy_view_distortion(Graph& g, const ToyViewModel& views, int view, const Var& original, const Var& reconstructed);
Var toy_distortion(Graph& g, const ToyViewModel& views, const Var& original, const Var& reconstructed);

}  // namespace msc

#pragma once

// Coarse-to-fine quantization: a per-group scale picked from a list, a
// per-anchor resolution vector driven by the prior feature, and a per-element
// resolution matrix weighted by view-averaged gradients.
//
// Resolutions are steps per unit: a value A is quantized to Round(A * Q) / Q,
// so the bin width is 1 / Q and a larger Q is finer.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "msc/anchors.hpp"

namespace msc {

enum class Mode { Train, Eval };

struct C2fqConfig {
  std::vector<Real> scale_list{0.25, 0.5, 1.0, 2.0, 4.0};
  std::array<Real, kGroupCount> q0{1.0, 10.0, 10.0};
  Real gradient_floor = 1e-3;

  void validate() const;
  bool operator==(const C2fqConfig&) const = default;
};

/// Exponential anneal from `start` at step 0 to `end` at step `total - 1`.
Real temperature_at(std::int64_t step, std::int64_t total, Real start, Real end);

/// Standard Gumbel(0, 1) draws.
RowVec sample_gumbel(Index count, std::mt19937_64& rng);

struct ScaleSelection {
  int index = 0;
  Real scale = 1.0;
  RowVec weights;  // one-hot in eval mode; relaxed softmax((logits + g) / tau) in train mode
};

/// Eval: argmax of the logits (ties go to the lower index). Train: Gumbel-max
/// sample with noise drawn from `seed`; `weights` holds the relaxed sample.
ScaleSelection select_scale(const RowVec& logits, std::span<const Real> scale_list, Mode mode, Real tau,
                            std::uint64_t seed);

/// Same as above with the Gumbel noise given explicitly (zero noise allowed).
ScaleSelection select_scale(const RowVec& logits, std::span<const Real> scale_list, Mode mode, Real tau,
                            const RowVec& gumbel);

struct ScaleSample {
  Var scale;    // 1 x 1
  Var weights;  // 1 x S; forward value is one-hot unless `hard` is false
  int index = 0;
};

/// Differentiable selection. Train mode with `hard` uses the straight-through
/// estimator: the forward value is the one-hot sample, the gradient is that of
/// softmax((logits + gumbel) / tau). With `hard` false the relaxed weights are
/// used in the forward pass too.
ScaleSample select_scale(Graph& g, const Var& logits, std::span<const Real> scale_list, Mode mode, Real tau,
                         const RowVec& gumbel, bool hard = true);

/// Q2 = Q1 * (1 + tanh(f)): q1 is 1 x G (one value per group), f is n x G.
Mat expand_to_vector(const RowVec& q1, const Mat& f_out);
Var expand_to_vector(const Var& q1, const Var& f_out);

/// Per-element weights for the resolution matrix: floored at `floor`, then
/// scaled to mean 1.
class GradientMatrix {
 public:
  GradientMatrix() = default;
  static GradientMatrix ones(Index n, Index k);
  static GradientMatrix from_raw(const Mat& mean_abs_gradients, Real floor);

  const Mat& values() const { return values_; }
  Real floor() const { return floor_; }
  Real normalization() const { return normalization_; }
  bool all_ones() const { return all_ones_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

 private:
  Mat values_;
  Real floor_ = 0.0;
  Real normalization_ = 1.0;
  bool all_ones_ = false;
};

/// Per-view differentiable loss of an attribute matrix.
using ViewLoss = std::function<Var(Graph&, int view, const Var& attributes)>;

/// Mean over views (and over the given evaluation points) of
/// |d loss_view / d A|, then floored and normalized.
GradientMatrix collect_gradients(int views, std::span<const Mat> points, const ViewLoss& loss, Real floor);

/// Q4[a, j] = Q2[a, group(j)] * grads[a, j]. A single-column Q2 is duplicated
/// across all k columns.
Mat build_matrix(const Mat& q2, const GradientMatrix& grads, const AttributeLayout& layout);
Mat build_matrix(const Mat& q2, const GradientMatrix& grads);
Var build_matrix(const Var& q2, const GradientMatrix& grads, const AttributeLayout& layout);

/// Round half away from zero.
inline Real round_half_away(Real v) { return std::round(v); }

/// Eval: Round(A * Q4) / Q4, with zero always +0. Train: A + U(-1/(2 Q4), 1/(2 Q4)) with seeded noise.
Mat quantize(const Mat& attributes, const Mat& q4, Mode mode, std::uint64_t seed = 0);

/// Integer lattice indices Round(A * Q4).
Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> lattice_indices(const Mat& values, const Mat& q4);

/// Uniform(-0.5, 0.5) draws used by the training proxy.
Mat uniform_noise(Index rows, Index cols, std::mt19937_64& rng);

/// Training proxy: A + noise / Q4, noise in (-0.5, 0.5).
Var quantize_noisy(const Var& attributes, const Var& q4, const Mat& noise);

/// Straight-through rounding: forward Round(A * Q4) / Q4, gradient of identity in A.
Var quantize_straight_through(const Var& attributes, const Var& q4);

/// Evaluated state of the quantization chain for one scene.
struct QuantPlan {
  std::array<Real, kGroupCount> q0{};
  std::vector<Real> scale_list;
  std::array<int, kGroupCount> scale_index{};
  std::array<Real, kGroupCount> q1{};
  Mat q2;  // n x groups
  Mat q4;  // n x k
  Real tau = 1.0;

  void validate() const;
};

}  // namespace msc

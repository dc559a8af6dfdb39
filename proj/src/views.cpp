#include "msc/views.hpp"

#include <cmath>
#include <random>

namespace msc {

namespace {

Mat random_orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<Real> n(0.0, 1.0);
  Mat a(rows, rows);
  for (Index i = 0; i < a.size(); ++i) a(i) = n(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(rows, rows);
  return q.leftCols(cols);
}

void check_shapes(const ToyViewModel& views, Index ar, Index ac, Index br, Index bc) {
  if (ar != br || ac != bc) {
    throw ShapeError("toy_distortion: shapes " + diff::shape_str(ar, ac) + " and " + diff::shape_str(br, bc) +
                     " differ");
  }
  if (ac != views.k()) {
    throw ShapeError("toy_distortion: attributes have " + std::to_string(ac) + " columns, views expect " +
                     std::to_string(views.k()));
  }
}

}  // namespace

ToyViewModel ToyViewModel::generate(std::uint64_t seed, Index k, const ToyViewOptions& options) {
  if (options.views < 1) throw InputError("ToyViewModel: at least one view is required");
  const Index pixels = options.pixels == 0 ? k : options.pixels;
  if (pixels < k) throw InputError("ToyViewModel: pixels must be >= k for full-rank maps");
  if (!(options.importance_min > 0.0) || options.importance_max < options.importance_min) {
    throw InputError("ToyViewModel: bad importance range");
  }
  ToyViewModel m;
  m.seed_ = seed;
  m.k_ = k;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  m.importance_.resize(k);
  const Real ratio = options.importance_max / options.importance_min;
  for (Index j = 0; j < k; ++j) m.importance_[j] = options.importance_min * std::pow(ratio, unit(rng));
  for (int v = 0; v < options.views; ++v) {
    const Mat u = random_orthonormal(pixels, k, rng);
    const Mat w = random_orthonormal(k, k, rng);
    Vec sigma(k);
    for (Index j = 0; j < k; ++j) sigma[j] = 0.5 + unit(rng);
    m.maps_.push_back(u * sigma.asDiagonal() * w.transpose() * m.importance_.asDiagonal());
  }
  return m;
}

Real toy_view_distortion(const ToyViewModel& views, int view, const Mat& original, const Mat& reconstructed) {
  check_shapes(views, original.rows(), original.cols(), reconstructed.rows(), reconstructed.cols());
  const Mat diff = (reconstructed - original) * views.map(view).transpose();
  return diff.squaredNorm() / static_cast<Real>(original.rows());
}

Real toy_distortion(const ToyViewModel& views, const Mat& original, const Mat& reconstructed) {
  Real total = 0.0;
  for (int v = 0; v < views.views(); ++v) total += toy_view_distortion(views, v, original, reconstructed);
  return total / views.views();
}

Var toy_view_distortion(Graph& g, const ToyViewModel& views, int view, const Var& original, const Var& reconstructed) {
  check_shapes(views, original.rows(), original.cols(), reconstructed.rows(), reconstructed.cols());
  const Var residual = reconstructed - original;
  const Var mapped = matmul(residual, g.constant(views.map(view).transpose()));
  return diff::scale(diff::sum(diff::square(mapped)), 1.0 / static_cast<Real>(original.rows()));
}

Var toy_distortion(Graph& g, const ToyViewModel& views, const Var& original, const Var& reconstructed) {
  Var total = toy_view_distortion(g, views, 0, original, reconstructed);
  for (int v = 1; v < views.views(); ++v) total = total + toy_view_distortion(g, views, v, original, reconstructed);
  return diff::scale(total, 1.0 / views.views());
}

}  // namespace msc

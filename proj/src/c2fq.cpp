#include "msc/c2fq.hpp"

#include <cmath>

namespace msc {

void C2fqConfig::validate() const {
  if (scale_list.empty()) throw InputError("C2FQ: scale list is empty");
  for (Real s : scale_list) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InputError("C2FQ: scales must be positive and finite");
  }
  for (Real q : q0) {
    if (!(q > 0.0) || !std::isfinite(q)) throw InputError("C2FQ: Q0 must be positive and finite");
  }
  if (!(gradient_floor > 0.0)) throw InputError("C2FQ: gradient floor must be positive");
}

Real temperature_at(std::int64_t step, std::int64_t total, Real start, Real end) {
  if (total <= 1) return end;
  const Real t = std::clamp(static_cast<Real>(step) / static_cast<Real>(total - 1), 0.0, 1.0);
  return start * std::pow(end / start, t);
}

RowVec sample_gumbel(Index count, std::mt19937_64& rng) {
  // Open interval keeps both logs finite.
  std::uniform_real_distribution<Real> u(std::nextafter(0.0, 1.0), 1.0);
  RowVec g(count);
  for (Index i = 0; i < count; ++i) g[i] = -std::log(-std::log(u(rng)));
  return g;
}

namespace {

void check_selection_args(Index logits, std::span<const Real> scale_list, Mode mode, Real tau) {
  if (scale_list.empty()) throw InputError("select_scale: scale list is empty");
  if (logits != static_cast<Index>(scale_list.size())) {
    throw ShapeError("select_scale: " + std::to_string(logits) + " logits for " + std::to_string(scale_list.size()) +
                     " scales");
  }
  if (mode == Mode::Train && !(tau > 0.0)) throw InputError("select_scale: temperature must be > 0 in train mode");
}

int argmax_lowest(const RowVec& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

RowVec softmax_row(const RowVec& z) {
  RowVec e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

ScaleSelection select_scale(const RowVec& logits, std::span<const Real> scale_list, Mode mode, Real tau,
                            const RowVec& gumbel) {
  check_selection_args(logits.size(), scale_list, mode, tau);
  if (!logits.allFinite()) throw NumericError("select_scale: non-finite logits");
  ScaleSelection out;
  if (mode == Mode::Eval) {
    out.index = argmax_lowest(logits);
    out.weights = RowVec::Zero(logits.size());
    out.weights[out.index] = 1.0;
  } else {
    if (gumbel.size() != logits.size()) throw ShapeError("select_scale: gumbel noise has the wrong length");
    const RowVec perturbed = logits + gumbel;
    out.index = argmax_lowest(perturbed);
    out.weights = softmax_row(perturbed / tau);
  }
  out.scale = scale_list[static_cast<std::size_t>(out.index)];
  return out;
}

ScaleSelection select_scale(const RowVec& logits, std::span<const Real> scale_list, Mode mode, Real tau,
                            std::uint64_t seed) {
  check_selection_args(logits.size(), scale_list, mode, tau);
  RowVec g = RowVec::Zero(logits.size());
  if (mode == Mode::Train) {
    std::mt19937_64 rng(seed);
    g = sample_gumbel(logits.size(), rng);
  }
  return select_scale(logits, scale_list, mode, tau, g);
}

ScaleSample select_scale(Graph& g, const Var& logits, std::span<const Real> scale_list, Mode mode, Real tau,
                         const RowVec& gumbel, bool hard) {
  if (logits.rows() != 1) throw ShapeError("select_scale: logits must be a row vector, got " + logits.shape());
  check_selection_args(logits.cols(), scale_list, mode, tau);
  Mat scales_col(static_cast<Index>(scale_list.size()), 1);
  for (std::size_t i = 0; i < scale_list.size(); ++i) scales_col(static_cast<Index>(i), 0) = scale_list[i];
  const Var scales = g.constant(scales_col);

  const ScaleSelection pick = select_scale(RowVec(logits.value().row(0)), scale_list, mode, tau, gumbel);
  ScaleSample out;
  out.index = pick.index;
  Mat onehot = Mat::Zero(1, logits.cols());
  onehot(0, pick.index) = 1.0;
  if (mode == Mode::Eval) {
    out.weights = g.constant(onehot);
  } else {
    const Var soft = diff::softmax(diff::scale(logits + g.constant(Mat(gumbel)), 1.0 / tau));
    out.weights = hard ? g.constant(onehot) + (soft - diff::stop_gradient(soft)) : soft;
  }
  out.scale = matmul(out.weights, scales);
  return out;
}

Mat expand_to_vector(const RowVec& q1, const Mat& f_out) {
  if (q1.size() != f_out.cols()) {
    throw ShapeError("expand_to_vector: " + std::to_string(q1.size()) + " base values for " +
                     std::to_string(f_out.cols()) + " columns");
  }
  if ((q1.array() <= 0.0).any()) throw InputError("expand_to_vector: Q1 must be positive");
  if (!f_out.allFinite()) throw NumericError("expand_to_vector: non-finite network output");
  return ((f_out.array().tanh() + 1.0).rowwise() * q1.array()).matrix();
}

Var expand_to_vector(const Var& q1, const Var& f_out) {
  if (!f_out.value().allFinite()) throw NumericError("expand_to_vector: non-finite network output");
  return diff::mul(diff::add_scalar(diff::tanh(f_out), 1.0), q1);
}

GradientMatrix GradientMatrix::ones(Index n, Index k) {
  GradientMatrix m;
  m.values_ = Mat::Ones(n, k);
  m.floor_ = 0.0;
  m.normalization_ = 1.0;
  m.all_ones_ = true;
  return m;
}

GradientMatrix GradientMatrix::from_raw(const Mat& mean_abs_gradients, Real floor) {
  if (!(floor > 0.0)) throw InputError("GradientMatrix: floor must be positive");
  if (!mean_abs_gradients.allFinite()) throw NumericError("GradientMatrix: non-finite gradients");
  if (mean_abs_gradients.size() == 0) throw ShapeError("GradientMatrix: empty gradient matrix");
  GradientMatrix m;
  m.floor_ = floor;
  m.values_ = mean_abs_gradients.cwiseAbs().cwiseMax(floor);
  m.normalization_ = m.values_.mean();
  m.values_ /= m.normalization_;
  return m;
}

GradientMatrix collect_gradients(int views, std::span<const Mat> points, const ViewLoss& loss, Real floor) {
  if (views < 1) throw InputError("collect_gradients: need at least one view");
  if (points.empty()) throw InputError("collect_gradients: need at least one evaluation point");
  Mat acc = Mat::Zero(points.front().rows(), points.front().cols());
  for (const Mat& p : points) {
    if (p.rows() != acc.rows() || p.cols() != acc.cols()) {
      throw ShapeError("collect_gradients: evaluation points differ in shape");
    }
    for (int v = 0; v < views; ++v) {
      Graph g;
      const Var a = g.variable(p);
      const Var l = loss(g, v, a);
      const Mat grad = g.backward(l).wrt(a);
      if (!grad.allFinite()) {
        throw NumericError("collect_gradients: loss is not differentiable at the evaluation point (view " +
                           std::to_string(v) + ")");
      }
      acc += grad.cwiseAbs();
    }
  }
  acc /= static_cast<Real>(views) * static_cast<Real>(points.size());
  return GradientMatrix::from_raw(acc, floor);
}

namespace {

void check_matrix_args(const Mat& q2, const GradientMatrix& grads) {
  if (q2.rows() != grads.rows()) {
    throw ShapeError("build_matrix: Q2 " + diff::shape_str(q2.rows(), q2.cols()) + " vs gradients " +
                     diff::shape_str(grads.rows(), grads.cols()));
  }
  if ((grads.values().array() <= 0.0).any()) throw InputError("build_matrix: non-positive gradient weight");
}

}  // namespace

Mat build_matrix(const Mat& q2, const GradientMatrix& grads) {
  check_matrix_args(q2, grads);
  if (q2.cols() != 1) throw ShapeError("build_matrix: expected an n x 1 vector, got " + diff::shape_str(q2.rows(), q2.cols()));
  return (grads.values().array().colwise() * q2.col(0).array()).matrix();
}

Mat build_matrix(const Mat& q2, const GradientMatrix& grads, const AttributeLayout& layout) {
  if (q2.cols() == 1) return build_matrix(q2, grads);
  check_matrix_args(q2, grads);
  if (q2.cols() != kGroupCount || grads.cols() != layout.k()) {
    throw ShapeError("build_matrix: Q2 " + diff::shape_str(q2.rows(), q2.cols()) + " vs gradients " +
                     diff::shape_str(grads.rows(), grads.cols()));
  }
  Mat q4(q2.rows(), layout.k());
  for (Group g : kGroups) {
    const auto r = layout.range(g);
    q4.middleCols(r.begin, r.count) =
        (grads.values().middleCols(r.begin, r.count).array().colwise() * q2.col(static_cast<int>(g)).array()).matrix();
  }
  return q4;
}

Var build_matrix(const Var& q2, const GradientMatrix& grads, const AttributeLayout& layout) {
  check_matrix_args(q2.value(), grads);
  Graph& g = q2.graph();
  Var dup;
  if (q2.cols() == 1) {
    dup = diff::repeat_cols(q2, layout.k());
  } else {
    if (q2.cols() != kGroupCount) throw ShapeError("build_matrix: Q2 must have 1 or 3 columns, got " + q2.shape());
    std::vector<Var> parts;
    for (Group grp : kGroups) {
      parts.push_back(diff::repeat_cols(diff::slice_cols(q2, static_cast<int>(grp), 1), layout.range(grp).count));
    }
    dup = diff::concat_cols(parts);
  }
  if (grads.all_ones()) return dup;
  return diff::mul(dup, g.constant(grads.values()));
}

Mat uniform_noise(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> u(-0.5, 0.5);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

Mat quantize(const Mat& attributes, const Mat& q4, Mode mode, std::uint64_t seed) {
  if (attributes.rows() != q4.rows() || attributes.cols() != q4.cols()) {
    throw ShapeError("quantize: attributes " + diff::shape_str(attributes.rows(), attributes.cols()) + " vs Q4 " +
                     diff::shape_str(q4.rows(), q4.cols()));
  }
  if (!(q4.array() > 0.0).all()) throw InputError("quantize: Q4 must be strictly positive");
  if (mode == Mode::Eval) {
    return (attributes.array() * q4.array()).unaryExpr([](Real v) { return round_half_away(v) + 0.0; }).matrix().cwiseQuotient(q4);
  }
  std::mt19937_64 rng(seed);
  const Mat u = uniform_noise(attributes.rows(), attributes.cols(), rng);
  return attributes + u.cwiseQuotient(q4);
}

Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> lattice_indices(const Mat& values, const Mat& q4) {
  if (values.rows() != q4.rows() || values.cols() != q4.cols()) throw ShapeError("lattice_indices: shape mismatch");
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> idx(values.rows(), values.cols());
  for (Index i = 0; i < values.size(); ++i) idx(i) = static_cast<std::int64_t>(round_half_away(values(i) * q4(i)));
  return idx;
}

Var quantize_noisy(const Var& attributes, const Var& q4, const Mat& noise) {
  Graph& g = attributes.graph();
  return attributes + diff::mul(g.constant(noise), diff::reciprocal(q4));
}

Var quantize_straight_through(const Var& attributes, const Var& q4) {
  Graph& g = attributes.graph();
  const Mat& a = attributes.value();
  const Mat& q = q4.value();
  const Mat rounded =
      (a.array() * q.array()).unaryExpr([](Real v) { return round_half_away(v); }).matrix().cwiseQuotient(q);
  return attributes + g.constant(Mat(rounded - a));
}

void QuantPlan::validate() const {
  for (int grp = 0; grp < kGroupCount; ++grp) {
    if (!(q1[grp] > 0.0)) throw NumericError("QuantPlan: Q1 must be positive");
    if (q2.size() > 0) {
      const auto col = q2.col(grp).array();
      if (!(col > 0.0).all() || !(col <= 2.0 * q1[grp]).all()) throw NumericError("QuantPlan: Q2 outside (0, 2 Q1)");
    }
  }
  if (!q4.allFinite() || !(q4.array() > 0.0).all()) throw NumericError("QuantPlan: Q4 must be finite and positive");
}

}  // namespace msc

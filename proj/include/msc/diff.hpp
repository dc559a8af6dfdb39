#pragma once

// Reverse-mode differentiation over small dense matrices.
//
// A Graph records operations on Var handles in creation order, which is also a
// topological order, so backward() is a single reverse sweep. Every value is a
// 2-D Eigen matrix; vectors are 1xn or nx1. The only broadcast supported is a
// 1xC row vector against an RxC matrix.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msc/error.hpp"

namespace msc::diff {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

/// A learnable (or constant) dense value living outside any graph.
template <typename Scalar>
struct Tensor {
  Matrix<Scalar> value;
  bool requires_grad = true;

  Tensor() = default;
  explicit Tensor(Matrix<Scalar> v, bool grad = true) : value(std::move(v)), requires_grad(grad) {}

  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
  Index size() const { return value.size(); }
  std::vector<Index> shape() const { return {value.rows(), value.cols()}; }
};

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << "(" << r << "x" << c << ")";
  return os.str();
}

template <typename Scalar>
class Graph;

/// Handle to a node in a Graph.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* g, int id) : graph_(g), id_(id) {}

  Graph<Scalar>& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Matrix<Scalar>& value() const { return graph_->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::string shape() const { return shape_str(rows(), cols()); }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

/// Result of a backward sweep: one gradient per node that required one.
template <typename Scalar>
class Gradients {
 public:
  Gradients(std::vector<Matrix<Scalar>> grads, std::unordered_map<const Tensor<Scalar>*, int> params,
            std::vector<Index> rows, std::vector<Index> cols)
      : grads_(std::move(grads)), params_(std::move(params)), rows_(std::move(rows)), cols_(std::move(cols)) {}

  /// Gradient w.r.t. a node; zeros when the node did not influence the loss.
  Matrix<Scalar> wrt(const Var<Scalar>& v) const { return at(v.id()); }

  /// Gradient w.r.t. a parameter tensor bound with Graph::param.
  Matrix<Scalar> wrt(const Tensor<Scalar>& t) const {
    auto it = params_.find(&t);
    if (it == params_.end()) return Matrix<Scalar>::Zero(t.rows(), t.cols());
    return at(it->second);
  }

  bool contains(const Tensor<Scalar>& t) const { return params_.count(&t) != 0; }

 private:
  Matrix<Scalar> at(int id) const {
    const auto& g = grads_.at(static_cast<std::size_t>(id));
    if (g.size() == 0) return Matrix<Scalar>::Zero(rows_[id], cols_[id]);
    return g;
  }

  std::vector<Matrix<Scalar>> grads_;
  std::unordered_map<const Tensor<Scalar>*, int> params_;
  std::vector<Index> rows_, cols_;
};

template <typename Scalar>
class Graph {
 public:
  /// Receives the upstream gradient of a node and accumulates into its parents.
  using BackwardFn = std::function<void(Graph&, const Matrix<Scalar>& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Matrix<Scalar> v) { return push(std::move(v), false, {}); }

  Var<Scalar> constant(Scalar s) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = s;
    return constant(std::move(m));
  }

  /// Leaf that requires a gradient but is not tied to an external tensor.
  Var<Scalar> variable(Matrix<Scalar> v) { return push(std::move(v), true, {}); }

  /// Leaf bound to an external tensor. Binding the same tensor twice returns
  /// the same node.
  Var<Scalar> param(const Tensor<Scalar>& t) {
    auto it = params_.find(&t);
    if (it != params_.end()) return Var<Scalar>(this, it->second);
    Var<Scalar> v = push(t.value, t.requires_grad, {});
    params_.emplace(&t, v.id());
    return v;
  }

  /// Records a custom operation. `fn` is invoked during backward only when the
  /// node's gradient is needed.
  Var<Scalar> record(Matrix<Scalar> value, const std::vector<Var<Scalar>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    Var<Scalar> v = push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    return v;
  }

  const Matrix<Scalar>& value(const Var<Scalar>& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of `v` (used by backward functions).
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    auto& buf = (*grads_)[v.id()];
    if (buf.size() == 0) {
      buf = g;
    } else {
      buf += g;
    }
  }

  void accumulate(const Var<Scalar>& v, Matrix<Scalar>&& g) {
    auto& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    auto& buf = (*grads_)[v.id()];
    if (buf.size() == 0) {
      buf = std::move(g);
    } else {
      buf += g;
    }
  }

  Gradients<Scalar> backward(const Var<Scalar>& loss) {
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ShapeError("backward: loss must be scalar (1x1), got " + shape_str(lv.rows(), lv.cols()));
    }
    std::vector<Matrix<Scalar>> grads(nodes_.size());
    grads_ = &grads;
    grads[loss.id()] = Matrix<Scalar>::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
      auto& node = nodes_[id];
      if (!node.requires_grad || !node.backward || grads[id].size() == 0) continue;
      // Parents always have smaller ids, so this entry is not written while in use.
      node.backward(*this, grads[id]);
    }
    grads_ = nullptr;
    std::vector<Index> rows(nodes_.size()), cols(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      rows[i] = nodes_[i].value.rows();
      cols[i] = nodes_[i].value.cols();
    }
    return Gradients<Scalar>(std::move(grads), params_, std::move(rows), std::move(cols));
  }

 private:
  struct Node {
    Matrix<Scalar> value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Matrix<Scalar> v, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(v), requires_grad, std::move(fn)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<Scalar>*, int> params_;
  std::vector<Matrix<Scalar>>* grads_ = nullptr;
};

namespace detail {

template <typename Scalar>
void require_same_graph(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (&a.graph() != &b.graph()) throw Error(std::string(op) + ": operands belong to different graphs");
}

inline ShapeError shape_error(const char* op, Index ar, Index ac, Index br, Index bc) {
  return ShapeError(std::string(op) + ": incompatible shapes " + shape_str(ar, ac) + " and " + shape_str(br, bc));
}

enum class Broadcast { None, RowRhs, RowLhs };

template <typename Scalar>
Broadcast broadcast_kind(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_graph(a, b, op);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) return Broadcast::None;
  if (bv.rows() == 1 && bv.cols() == av.cols()) return Broadcast::RowRhs;
  if (av.rows() == 1 && av.cols() == bv.cols()) return Broadcast::RowLhs;
  throw shape_error(op, av.rows(), av.cols(), bv.rows(), bv.cols());
}

template <typename Scalar, typename F>
Var<Scalar> unary(const Var<Scalar>& a, Matrix<Scalar> out, F&& local_grad) {
  Graph<Scalar>& g = a.graph();
  return g.record(std::move(out), {a},
                  [a, lg = std::forward<F>(local_grad)](Graph<Scalar>& gr, const Matrix<Scalar>& up) {
                    gr.accumulate(a, lg(gr, up));
                  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary operations

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_graph(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) throw detail::shape_error("matmul", av.rows(), av.cols(), bv.rows(), bv.cols());
  Matrix<Scalar> out = av * bv;
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    if (g.requires_grad(a)) g.accumulate(a, up * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * up);
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  const auto kind = detail::broadcast_kind("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Matrix<Scalar> out;
  if (kind == detail::Broadcast::None) {
    out = av + bv;
  } else if (kind == detail::Broadcast::RowRhs) {
    out = av.rowwise() + bv.row(0);
  } else {
    out = bv.rowwise() + av.row(0);
  }
  const Index ar = av.rows(), br = bv.rows();
  return a.graph().record(std::move(out), {a, b}, [a, b, ar, br](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    if (up.rows() == ar) {
      g.accumulate(a, up);
    } else {
      g.accumulate(a, up.colwise().sum());
    }
    if (up.rows() == br) {
      g.accumulate(b, up);
    } else {
      g.accumulate(b, up.colwise().sum());
    }
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  const auto kind = detail::broadcast_kind("sub", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Matrix<Scalar> out;
  if (kind == detail::Broadcast::None) {
    out = av - bv;
  } else if (kind == detail::Broadcast::RowRhs) {
    out = av.rowwise() - bv.row(0);
  } else {
    out = (-bv).rowwise() + av.row(0);
  }
  const Index ar = av.rows(), br = bv.rows();
  return a.graph().record(std::move(out), {a, b}, [a, b, ar, br](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    if (up.rows() == ar) {
      g.accumulate(a, up);
    } else {
      g.accumulate(a, up.colwise().sum());
    }
    if (up.rows() == br) {
      g.accumulate(b, -up);
    } else {
      g.accumulate(b, -up.colwise().sum());
    }
  });
}

/// Element-wise product (row broadcast allowed).
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  const auto kind = detail::broadcast_kind("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Matrix<Scalar> out;
  if (kind == detail::Broadcast::None) {
    out = av.cwiseProduct(bv);
  } else if (kind == detail::Broadcast::RowRhs) {
    out = av.array().rowwise() * bv.row(0).array();
  } else {
    out = bv.array().rowwise() * av.row(0).array();
  }
  return a.graph().record(std::move(out), {a, b}, [a, b, kind](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (kind == detail::Broadcast::None) {
      if (g.requires_grad(a)) g.accumulate(a, up.cwiseProduct(bv));
      if (g.requires_grad(b)) g.accumulate(b, up.cwiseProduct(av));
    } else if (kind == detail::Broadcast::RowRhs) {
      if (g.requires_grad(a)) g.accumulate(a, Matrix<Scalar>(up.array().rowwise() * bv.row(0).array()));
      if (g.requires_grad(b)) g.accumulate(b, Matrix<Scalar>(up.cwiseProduct(av).colwise().sum()));
    } else {
      if (g.requires_grad(a)) g.accumulate(a, Matrix<Scalar>(up.cwiseProduct(bv).colwise().sum()));
      if (g.requires_grad(b)) g.accumulate(b, Matrix<Scalar>(up.array().rowwise() * av.row(0).array()));
    }
  });
}

/// Element-wise quotient of equally shaped operands.
template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  const auto kind = detail::broadcast_kind("div", a, b);
  if (kind != detail::Broadcast::None) {
    throw detail::shape_error("div", a.rows(), a.cols(), b.rows(), b.cols());
  }
  Matrix<Scalar> out = a.value().cwiseQuotient(b.value());
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) g.accumulate(a, up.cwiseQuotient(bv));
    if (g.requires_grad(b)) {
      g.accumulate(b, Matrix<Scalar>(-(up.array() * av.array() / (bv.array() * bv.array()))));
    }
  });
}

// ---------------------------------------------------------------------------
// Unary element-wise operations

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  Matrix<Scalar> out = a.value() * c;
  return detail::unary(a, std::move(out), [c](Graph<Scalar>&, const Matrix<Scalar>& up) { return Matrix<Scalar>(up * c); });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar c) {
  Matrix<Scalar> out = a.value().array() + c;
  return detail::unary(a, std::move(out), [](Graph<Scalar>&, const Matrix<Scalar>& up) { return up; });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().tanh();
  Var<Scalar> res;
  Graph<Scalar>& g = a.graph();
  res = g.record(std::move(out), {a}, [a](Graph<Scalar>& gr, const Matrix<Scalar>& up) {
    const Matrix<Scalar> t = gr.value(a).array().tanh();
    gr.accumulate(a, Matrix<Scalar>(up.array() * (Scalar(1) - t.array().square())));
  });
  return res;
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().exp();
  return detail::unary(a, out, [out](Graph<Scalar>&, const Matrix<Scalar>& up) {
    return Matrix<Scalar>(up.cwiseProduct(out));
  });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().log();
  return detail::unary(a, std::move(out), [a](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    return Matrix<Scalar>(up.cwiseQuotient(g.value(a)));
  });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().square();
  return detail::unary(a, std::move(out), [a](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    return Matrix<Scalar>(Scalar(2) * up.cwiseProduct(g.value(a)));
  });
}

template <typename Scalar>
Var<Scalar> reciprocal(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().inverse();
  return detail::unary(a, out, [out](Graph<Scalar>&, const Matrix<Scalar>& up) {
    return Matrix<Scalar>(-(up.array() * out.array().square()));
  });
}

/// log(1 + e^x), evaluated without overflow.
template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& a) {
  const auto& x = a.value();
  Matrix<Scalar> out = x.unaryExpr([](Scalar v) {
    return v > Scalar(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  return detail::unary(a, std::move(out), [a](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    const Matrix<Scalar> sig = g.value(a).unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
    return Matrix<Scalar>(up.cwiseProduct(sig));
  });
}

/// max(a, floor) element-wise; gradient passes only where a > floor.
template <typename Scalar>
Var<Scalar> clamp_min(const Var<Scalar>& a, Scalar floor) {
  Matrix<Scalar> out = a.value().cwiseMax(floor);
  return detail::unary(a, std::move(out), [a, floor](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    const auto& x = g.value(a);
    return Matrix<Scalar>((x.array() > floor).select(up, Scalar(0)));
  });
}

/// Identity in the forward pass, zero gradient in the backward pass.
template <typename Scalar>
Var<Scalar> stop_gradient(const Var<Scalar>& a) {
  return a.graph().constant(a.value());
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return detail::unary(a, std::move(out), [r, c](Graph<Scalar>&, const Matrix<Scalar>& up) {
    return Matrix<Scalar>(Matrix<Scalar>::Constant(r, c, up(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  return scale(sum(a), Scalar(1) / n);
}

/// Column means: RxC -> 1xC.
template <typename Scalar>
Var<Scalar> mean_rows(const Var<Scalar>& a) {
  const Index r = a.rows();
  Matrix<Scalar> out = a.value().colwise().mean();
  return detail::unary(a, std::move(out), [r](Graph<Scalar>&, const Matrix<Scalar>& up) {
    return Matrix<Scalar>(up.replicate(r, 1) / static_cast<Scalar>(r));
  });
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a) {
  const auto& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return detail::unary(a, out, [out](Graph<Scalar>&, const Matrix<Scalar>& up) {
    Matrix<Scalar> gin(out.rows(), out.cols());
    for (Index i = 0; i < out.rows(); ++i) {
      const Scalar dot = up.row(i).dot(out.row(i));
      gin.row(i) = out.row(i).array() * (up.row(i).array() - dot);
    }
    return gin;
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + a.shape());
  }
  Matrix<Scalar> out = a.value().middleCols(start, count);
  const Index r = a.rows(), c = a.cols();
  return detail::unary(a, std::move(out), [r, c, start, count](Graph<Scalar>&, const Matrix<Scalar>& up) {
    Matrix<Scalar> gin = Matrix<Scalar>::Zero(r, c);
    gin.middleCols(start, count) = up;
    return gin;
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Index r = parts.front().rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw detail::shape_error("concat_cols", r, parts.front().cols(), p.rows(), p.cols());
    total += p.cols();
  }
  Matrix<Scalar> out(r, total);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().graph().record(std::move(out), parts, [parts](Graph<Scalar>& g, const Matrix<Scalar>& up) {
    Index off = 0;
    for (const auto& p : parts) {
      const Index c = g.value(p).cols();
      if (g.requires_grad(p)) g.accumulate(p, Matrix<Scalar>(up.middleCols(off, c)));
      off += c;
    }
  });
}

/// Selects rows of `table` by index: out.row(i) = table.row(index[i]).
template <typename Scalar>
Var<Scalar> gather(const Var<Scalar>& table, const std::vector<Index>& index) {
  const auto& t = table.value();
  Matrix<Scalar> out(static_cast<Index>(index.size()), t.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= t.rows()) {
      throw ShapeError("gather: row index " + std::to_string(index[i]) + " outside " + table.shape());
    }
    out.row(static_cast<Index>(i)) = t.row(index[i]);
  }
  const Index r = t.rows(), c = t.cols();
  return detail::unary(table, std::move(out), [index, r, c](Graph<Scalar>&, const Matrix<Scalar>& up) {
    Matrix<Scalar> gin = Matrix<Scalar>::Zero(r, c);
    for (std::size_t i = 0; i < index.size(); ++i) gin.row(index[i]) += up.row(static_cast<Index>(i));
    return gin;
  });
}

/// Weighted gather: out.row(i) = sum_c weights(i,c) * table.row(index(i,c)).
/// Indices and weights are constants; the gradient flows to the table only.
template <typename Scalar>
Var<Scalar> gather_weighted(const Var<Scalar>& table, const Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>& index,
                            const Matrix<Scalar>& weights) {
  if (index.rows() != weights.rows() || index.cols() != weights.cols()) {
    throw detail::shape_error("gather_weighted", index.rows(), index.cols(), weights.rows(), weights.cols());
  }
  const auto& t = table.value();
  if (index.size() > 0 && (index.minCoeff() < 0 || index.maxCoeff() >= t.rows())) {
    throw ShapeError("gather_weighted: index outside table " + table.shape());
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(index.rows(), t.cols());
  for (Index i = 0; i < index.rows(); ++i) {
    for (Index c = 0; c < index.cols(); ++c) out.row(i) += weights(i, c) * t.row(index(i, c));
  }
  const Index r = t.rows(), cols = t.cols();
  return detail::unary(table, std::move(out), [index, weights, r, cols](Graph<Scalar>&, const Matrix<Scalar>& up) {
    Matrix<Scalar> gin = Matrix<Scalar>::Zero(r, cols);
    for (Index i = 0; i < index.rows(); ++i) {
      for (Index c = 0; c < index.cols(); ++c) gin.row(index(i, c)) += weights(i, c) * up.row(i);
    }
    return gin;
  });
}

/// Stacks `n` copies of a 1xC row: n x C.
template <typename Scalar>
Var<Scalar> repeat_rows(const Var<Scalar>& row, Index n) {
  if (row.rows() != 1) throw ShapeError("repeat_rows: expected a row vector, got " + row.shape());
  Graph<Scalar>& g = row.graph();
  return matmul(g.constant(Matrix<Scalar>::Ones(n, 1)), row);
}

/// Copies an n x 1 column `c` times: n x c.
template <typename Scalar>
Var<Scalar> repeat_cols(const Var<Scalar>& col, Index c) {
  if (col.cols() != 1) throw ShapeError("repeat_cols: expected a column vector, got " + col.shape());
  Graph<Scalar>& g = col.graph();
  return matmul(col, g.constant(Matrix<Scalar>::Ones(1, c)));
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Builds a scalar loss from a leaf in a fresh graph.
template <typename Scalar>
using ScalarFn = std::function<Var<Scalar>(Graph<Scalar>&, const Var<Scalar>&)>;

/// Max over components of |analytic - central difference| / (|analytic| + 1e-8).
template <typename Scalar>
Scalar gradient_check(const ScalarFn<Scalar>& f, const Matrix<Scalar>& x, Scalar h) {
  Matrix<Scalar> analytic;
  {
    Graph<Scalar> g;
    Var<Scalar> leaf = g.variable(x);
    Var<Scalar> loss = f(g, leaf);
    analytic = g.backward(loss).wrt(leaf);
  }
  auto eval = [&](const Matrix<Scalar>& at) {
    Graph<Scalar> g;
    Var<Scalar> leaf = g.constant(at);
    const Scalar v = f(g, leaf).value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite loss at a perturbed point");
    return v;
  };
  Scalar worst = 0;
  Matrix<Scalar> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe(i);
    probe(i) = orig + h;
    const Scalar fp = eval(probe);
    probe(i) = orig - h;
    const Scalar fm = eval(probe);
    probe(i) = orig;
    const Scalar fd = (fp - fm) / (Scalar(2) * h);
    const Scalar err = std::abs(analytic(i) - fd) / (std::abs(analytic(i)) + Scalar(1e-8));
    worst = std::max(worst, err);
  }
  return worst;
}

/// Same measure over a set of parameter tensors consumed by `f`. Tensors are
/// perturbed in place and restored.
template <typename Scalar>
Scalar gradient_check(const std::function<Var<Scalar>(Graph<Scalar>&)>& f, const std::vector<Tensor<Scalar>*>& params,
                      Scalar h) {
  std::vector<Matrix<Scalar>> analytic;
  {
    Graph<Scalar> g;
    Var<Scalar> loss = f(g);
    auto grads = g.backward(loss);
    for (auto* p : params) analytic.push_back(grads.wrt(*p));
  }
  auto eval = [&]() {
    Graph<Scalar> g;
    const Scalar v = f(g).value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite loss at a perturbed point");
    return v;
  };
  Scalar worst = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& val = params[k]->value;
    for (Index i = 0; i < val.size(); ++i) {
      const Scalar orig = val(i);
      val(i) = orig + h;
      const Scalar fp = eval();
      val(i) = orig - h;
      const Scalar fm = eval();
      val(i) = orig;
      const Scalar fd = (fp - fm) / (Scalar(2) * h);
      const Scalar err = std::abs(analytic[k](i) - fd) / (std::abs(analytic[k](i)) + Scalar(1e-8));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace msc::diff

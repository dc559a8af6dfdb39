#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "msc/diff.hpp"

namespace msc {

using Real = double;
using Mat = diff::Matrix<Real>;
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using Tensor = diff::Tensor<Real>;
using Var = diff::Var<Real>;
using Graph = diff::Graph<Real>;
using Index = Eigen::Index;

/// Named view on a learnable tensor, used for serialization and optimizers.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

enum class InitScheme { UniformFanIn, NormalFanIn, Orthogonal, Zero };

/// Weight initialization for a fan_in x fan_out matrix.
Mat init_weights(InitScheme scheme, Index fan_in, Index fan_out, std::mt19937_64& rng);

/// Fully connected layer: y = x W + b, W is in x out, b is 1 x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(Index in, Index out, InitScheme scheme, std::mt19937_64& rng);

  Index in_dim() const { return weight.rows(); }
  Index out_dim() const { return weight.cols(); }

  Var forward(Graph& g, const Var& x) const;
  Mat eval(const Mat& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

/// Multi-layer perceptron with tanh between layers and a linear output.
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  /// dims = {in, hidden..., out}.
  Mlp(const std::vector<Index>& dims, InitScheme scheme, std::mt19937_64& rng);

  Index in_dim() const { return layers.front().in_dim(); }
  Index out_dim() const { return layers.back().out_dim(); }

  Var forward(Graph& g, const Var& x) const;
  Mat eval(const Mat& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  std::size_t parameter_count() const;
};

/// Adam with one learning rate per tensor.
class Adam {
 public:
  struct Options {
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opt) : opt_(opt) {}

  /// Applies one update; learning_rates[i] belongs to params[i].
  void step(const std::vector<NamedParam>& params, const diff::Gradients<Real>& grads,
            const std::vector<Real>& learning_rates);

  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    Mat m, v;
  };
  Options opt_;
  std::int64_t t_ = 0;
  std::unordered_map<const Tensor*, Moments> state_;
};

}  // namespace msc

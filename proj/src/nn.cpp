#include "msc/nn.hpp"

#include <cmath>

namespace msc {

Mat init_weights(InitScheme scheme, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in));
  Mat w(fan_in, fan_out);
  switch (scheme) {
    case InitScheme::UniformFanIn: {
      std::uniform_real_distribution<Real> u(-bound, bound);
      for (Index i = 0; i < w.size(); ++i) w(i) = u(rng);
      break;
    }
    case InitScheme::NormalFanIn: {
      std::normal_distribution<Real> n(0.0, bound);
      for (Index i = 0; i < w.size(); ++i) w(i) = n(rng);
      break;
    }
    case InitScheme::Orthogonal: {
      // QR of a seeded Gaussian matrix; columns (or rows) are orthonormal.
      const Index big = std::max(fan_in, fan_out);
      std::normal_distribution<Real> n(0.0, 1.0);
      Mat a(big, big);
      for (Index i = 0; i < a.size(); ++i) a(i) = n(rng);
      Eigen::HouseholderQR<Mat> qr(a);
      Mat q = qr.householderQ() * Mat::Identity(big, big);
      w = q.topLeftCorner(fan_in, fan_out);
      break;
    }
    case InitScheme::Zero:
      w.setZero();
      break;
  }
  return w;
}

Linear::Linear(Index in, Index out, InitScheme scheme, std::mt19937_64& rng)
    : weight(init_weights(scheme, in, out, rng)), bias(Mat::Zero(1, out)) {}

Var Linear::forward(Graph& g, const Var& x) const {
  return matmul(x, g.param(weight)) + g.param(bias);
}

Mat Linear::eval(const Mat& x) const {
  return (x * weight.value).rowwise() + bias.value.row(0);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Mlp::Mlp(const std::vector<Index>& dims, InitScheme scheme, std::mt19937_64& rng) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1], scheme, rng);
}

Var Mlp::forward(Graph& g, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(g, h);
    if (i + 1 < layers.size()) h = diff::tanh(h);
  }
  return h;
}

Mat Mlp::eval(const Mat& x) const {
  Mat h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].eval(h);
    if (i + 1 < layers.size()) h = h.array().tanh().matrix();
  }
  return h;
}

void Mlp::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void Adam::step(const std::vector<NamedParam>& params, const diff::Gradients<Real>& grads,
                const std::vector<Real>& learning_rates) {
  ++t_;
  const Real c1 = 1.0 - std::pow(opt_.beta1, static_cast<Real>(t_));
  const Real c2 = 1.0 - std::pow(opt_.beta2, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    if (!p.requires_grad || !grads.contains(p)) continue;
    const Mat g = grads.wrt(p);
    auto& st = state_[&p];
    if (st.m.size() == 0) {
      st.m = Mat::Zero(p.rows(), p.cols());
      st.v = Mat::Zero(p.rows(), p.cols());
    }
    st.m = opt_.beta1 * st.m + (1.0 - opt_.beta1) * g;
    st.v = opt_.beta2 * st.v + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    const Real lr = learning_rates[i];
    p.value.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + opt_.eps);
  }
}

}  // namespace msc

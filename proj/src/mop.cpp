#include "msc/mop.hpp"

#include <random>

namespace msc {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

InitScheme MopNetwork::scheme_for(int expert) {
  switch (expert % 3) {
    case 0:
      return InitScheme::UniformFanIn;
    case 1:
      return InitScheme::NormalFanIn;
    default:
      return InitScheme::Orthogonal;
  }
}

MopNetwork MopNetwork::init(std::uint64_t seed, Index input_dim, const MopConfig& config) {
  if (config.experts < 1) throw InputError("MopNetwork: expert count must be >= 1");
  if (input_dim < 1 || config.hidden < 1 || config.output < 1) throw InputError("MopNetwork: bad dimensions");
  MopNetwork net;
  net.config_ = config;
  for (int i = 0; i < config.experts; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    net.experts_.emplace_back(std::vector<Index>{input_dim, config.hidden, config.output}, scheme_for(i), rng);
  }
  std::mt19937_64 rng(derive_seed(seed, 1000));
  net.gate_ = Linear(input_dim, config.experts, InitScheme::UniformFanIn, rng);
  return net;
}

MopNetwork::Forward MopNetwork::forward(Graph& g, const Var& interp) const {
  Forward out;
  out.weights = diff::softmax(gate_.forward(g, interp));
  for (int i = 0; i < expert_count(); ++i) {
    const Var p = experts_[static_cast<std::size_t>(i)].forward(g, interp);
    out.priors.push_back(p);
    const Var wi = diff::repeat_cols(diff::slice_cols(out.weights, i, 1), config_.output);
    const Var term = diff::mul(wi, p);
    out.fused = i == 0 ? term : out.fused + term;
  }
  return out;
}

Mat MopNetwork::gate_weights(const Mat& interp) const {
  if (interp.cols() != input_dim()) {
    throw ShapeError("gate_weights: input has " + std::to_string(interp.cols()) + " columns, gate expects " +
                     std::to_string(input_dim()));
  }
  const Mat logits = gate_.eval(interp);
  if (!logits.allFinite()) throw NumericError("gate_weights: non-finite gate logits");
  Mat w(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Real m = logits.row(i).maxCoeff();
    w.row(i) = (logits.row(i).array() - m).exp();
    w.row(i) /= w.row(i).sum();
  }
  return w;
}

std::vector<Mat> MopNetwork::expert_outputs(const Mat& interp) const {
  std::vector<Mat> out;
  for (const auto& e : experts_) out.push_back(e.eval(interp));
  return out;
}

Mat MopNetwork::fuse(const Mat& interp) const {
  const Mat w = gate_weights(interp);
  const auto priors = expert_outputs(interp);
  Mat g = Mat::Zero(interp.rows(), config_.output);
  for (int i = 0; i < expert_count(); ++i) {
    g += (priors[static_cast<std::size_t>(i)].array().colwise() * w.col(i).array()).matrix();
  }
  return g;
}

void MopNetwork::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  collect_experts(prefix, out);
  collect_gate(prefix, out);
}

void MopNetwork::collect_experts(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t i = 0; i < experts_.size(); ++i) experts_[i].collect(prefix + ".expert" + std::to_string(i), out);
}

void MopNetwork::collect_gate(const std::string& prefix, std::vector<NamedParam>& out) {
  gate_.collect(prefix + ".gate", out);
}

std::size_t MopNetwork::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(gate_.weight.size() + gate_.bias.size());
  for (const auto& e : experts_) n += e.parameter_count();
  return n;
}

}  // namespace msc

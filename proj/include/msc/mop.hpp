#pragma once

#include <cstdint>
#include <vector>

#include "msc/nn.hpp"

namespace msc {

struct MopConfig {
  int experts = 5;
  Index hidden = 16;
  Index output = 24;

  bool operator==(const MopConfig&) const = default;
};

/// Mixture of priors: n small MLP experts and a one-layer softmax gate. The
/// fused feature of an anchor is sum_i w_i * p_i.
class MopNetwork {
 public:
  MopNetwork() = default;

  /// Expert i uses initialization scheme i mod 3 (uniform fan-in, normal
  /// fan-in, orthogonal) and its own sub-seed.
  static MopNetwork init(std::uint64_t seed, Index input_dim, const MopConfig& config);
  static InitScheme scheme_for(int expert);

  int expert_count() const { return static_cast<int>(experts_.size()); }
  const MopConfig& config() const { return config_; }
  Index input_dim() const { return gate_.in_dim(); }
  Index output_dim() const { return config_.output; }

  struct Forward {
    Var fused;                 // N x output
    Var weights;               // N x n
    std::vector<Var> priors;   // n of N x output
  };
  Forward forward(Graph& g, const Var& interp) const;

  Mat gate_weights(const Mat& interp) const;
  std::vector<Mat> expert_outputs(const Mat& interp) const;
  Mat fuse(const Mat& interp) const;

  std::vector<Mlp>& experts() { return experts_; }
  const std::vector<Mlp>& experts() const { return experts_; }
  Linear& gate() { return gate_; }
  const Linear& gate() const { return gate_; }

  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  void collect_experts(const std::string& prefix, std::vector<NamedParam>& out);
  void collect_gate(const std::string& prefix, std::vector<NamedParam>& out);
  std::size_t parameter_count() const;

 private:
  MopConfig config_;
  std::vector<Mlp> experts_;
  Linear gate_;
};

/// splitmix64 step, used to derive independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace msc

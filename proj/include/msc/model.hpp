#pragma once

// The complete set of networks of the attribute codec and the forward pass
// shared by training, encoding and decoding.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msc/c2fq.hpp"
#include "msc/entropy.hpp"
#include "msc/hashgrid.hpp"
#include "msc/mop.hpp"
#include "msc/views.hpp"

namespace msc {

enum class Variant { Full, NoC2fq, NoMop, NoC2fqMop, NoQm, NoQmQv };
inline constexpr std::array<Variant, 6> kAllVariants{Variant::Full, Variant::NoC2fq,  Variant::NoMop,
                                                     Variant::NoC2fqMop, Variant::NoQm, Variant::NoQmQv};

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// Which stages of the pipeline are active.
struct StageFlags {
  bool mixture = true;       // n experts (false: a single expert)
  bool scale_select = true;  // Q1 = Q0 * s (false: s = 1)
  bool vector = true;        // Q2 = Q1 (1 + tanh f(G)) (false: Q2 = Q1)
  bool matrix = true;        // gradient weighting (false: all ones)

  bool operator==(const StageFlags&) const = default;
};

StageFlags flags_for(Variant v);

struct ModelConfig {
  AttributeLayout layout;
  SceneBounds bounds;
  HashGridConfig grid;
  MopConfig mop;
  Index fphi_hidden = 8;
  Index head_hidden = 16;
  C2fqConfig c2fq;
  StageFlags flags;
  ToyViewOptions views;
  std::uint64_t seed = 0;
  std::uint64_t view_seed = 0;
  std::uint64_t probe_seed = 0;
  int probe_passes = 16;

  /// Expert count after applying the stage flags.
  int effective_experts() const { return flags.mixture ? mop.experts : 1; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Component names used for serialization and storage accounting.
enum class Component { Grid, Experts, Gate, ScaleSelector, VectorNet, EntropyHeads };
inline constexpr std::array<Component, 6> kComponents{Component::Grid,          Component::Experts,
                                                      Component::Gate,          Component::ScaleSelector,
                                                      Component::VectorNet,     Component::EntropyHeads};
const char* component_tag(Component c);

class CompressionModel {
 public:
  static CompressionModel init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ToyViewModel& views() const { return views_; }

  HashGrid grid;
  MopNetwork mop;
  std::array<Linear, kGroupCount> scale_selector;
  Mlp vector_net;  // f_phi: prior feature -> one value per group
  std::array<EntropyHead, kGroupCount> heads;

  /// True once the two-phase protocol has switched to collected gradients.
  bool gradients_collected = false;

  bool has_component(Component c) const;
  std::vector<NamedParam> parameters();
  std::vector<NamedParam> parameters(Component c);
  std::size_t parameter_count();

 private:
  ModelConfig config_;
  ToyViewModel views_;
};

/// Per-view loss used to collect element gradients: the view distortion summed
/// over anchors, i.e. N * toy_view_distortion.
Var gradient_probe_loss(Graph& g, const ToyViewModel& views, int view, const Var& reconstructed);

/// Gradient matrix measured at seeded reference reconstructions A + U / Q0.
/// The gradient of the view distortion there depends only on the noise, Q0 and
/// the views, so a decoder holding the seeds recomputes it exactly.
GradientMatrix reference_gradients(const CompressionModel& model, Index anchors);

/// Gradient matrix the model applies to a scene of `anchors` anchors.
GradientMatrix active_gradients(const CompressionModel& model, Index anchors);

/// Quantization state and entropy parameters, derived only from decoded
/// locations and the networks.
struct DecodingState {
  Mat interp;
  Mat prior;
  Mat gate_weights;
  QuantPlan plan;
  EntropyParams params;
};

DecodingState evaluate_state(const CompressionModel& model, const Locations& decoded_locations,
                             const std::optional<std::array<int, kGroupCount>>& scale_index = std::nullopt);

/// Randomness and switches for one differentiable forward pass.
struct ForwardOptions {
  Mode mode = Mode::Train;
  Real tau = 1.0;
  bool hard = true;               // straight-through hard Gumbel sample
  bool straight_through = false;  // round with straight-through instead of additive noise
  std::array<RowVec, kGroupCount> gumbel;  // empty rows mean zero noise
  Mat noise;                               // U(-0.5, 0.5), n x k; empty means zero noise
};

struct ForwardResult {
  Var prior;
  Var gate_weights;
  std::array<ScaleSample, kGroupCount> scale;
  Var q1;
  Var q2;
  Var q4;
  Var quantized;
  Var mean;
  Var std;
  Var bits;  // n x k
};

ForwardResult forward(Graph& g, const CompressionModel& model, const GridStencil& stencil, const Mat& attributes,
                      const GradientMatrix& grads, const ForwardOptions& options);

}  // namespace msc

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "msc/codec.hpp"

namespace msc {

struct TrainConfig {
  Real lambda = 1e-2;
  int iterations = 2000;
  Real lr_grid = 1e-2;
  Real lr_mlp = 1e-3;
  Real lr_min_fraction = 0.1;  // cosine decay ends at lr * lr_min_fraction
  Real tau_start = 1.0;
  Real tau_end = 0.1;
  Real phase_a = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t view_seed = 7;  // the toy views belong to the scene, not to the run
  int experts = 5;
  std::vector<Real> scale_list{0.25, 0.5, 1.0, 2.0, 4.0};
  std::array<Real, kGroupCount> q0{1.0, 10.0, 10.0};
  Variant variant = Variant::Full;
  int eval_every = 100;  // 0: only the final iteration is evaluated
  bool measure_actual = true;
  bool straight_through = false;
  HashGridConfig grid;
  Real divergence_limit = 1e6;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& c);

/// "feature=1,scaling=10,offsets=10"; groups that are not named keep their value.
std::array<Real, kGroupCount> parse_q0(const std::string& text, std::array<Real, kGroupCount> base);
std::vector<Real> parse_real_list(const std::string& text);

ModelConfig model_config_for(const TrainConfig& c, const AnchorSet& scene);

struct TraceRecord {
  int iteration = 0;
  bool phase_b = false;
  bool gradients_all_ones = true;
  Real train_loss = 0.0;
  Real distortion = 0.0;        // eval-mode, on the quantized attributes
  Real estimated_bits = 0.0;    // eval-mode attribute cross-entropy
  Real actual_bits = -1.0;      // coded attribute bits, -1 when not measured
  std::array<int, kGroupCount> scale_index{-1, -1, -1};
  RowVec gate_weights;          // scene mean
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  std::vector<Real> losses;  // train loss of every iteration

  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  CompressionModel model;
  TrainTrace trace;
};

/// Rate-distortion objective: toy distortion of the noisy reconstruction plus
/// lambda * estimated bits / N.
struct LossTerms {
  Var total;
  Var distortion;
  Var bits;  // summed over elements
  ForwardResult forward;
};
LossTerms total_loss(Graph& g, const CompressionModel& model, const GridStencil& stencil, const Mat& attributes,
                     const GradientMatrix& grads, const ForwardOptions& options, Real lambda);

/// Deterministic per (scene, config). Throws DivergenceError when the loss
/// becomes non-finite or exceeds config.divergence_limit.
TrainResult train(const AnchorSet& scene, const TrainConfig& config);

struct EvalPoint {
  Real distortion = 0.0;
  Real estimated_bits = 0.0;
  std::array<int, kGroupCount> scale_index{};
  RowVec gate_weights;
};
EvalPoint evaluate(const CompressionModel& model, const AnchorSet& scene);

/// One train + encode + decode run.
struct RunResult {
  std::string variant;
  Real lambda = 0.0;
  std::uint64_t seed = 0;
  std::size_t total_bytes = 0;
  std::size_t location_bytes = 0;
  std::size_t attribute_bytes = 0;
  std::size_t network_bytes = 0;
  std::size_t other_bytes = 0;
  Real payload_bits = 0.0;    // coded location + attribute payloads
  Real attribute_bits = 0.0;  // coded attribute streams only
  Real estimated_bits = 0.0;
  Real distortion = 0.0;      // of the decoded attributes
  bool lossless = false;      // decoder reproduced the encoder's values bit for bit
  std::array<int, kGroupCount> scale_index{};
  RowVec gate_weights;
};

RunResult run_pipeline(const AnchorSet& scene, const TrainConfig& config);

/// Number of worker threads: MSC_THREADS if set, otherwise the hardware count.
int worker_threads();

/// Runs jobs on up to `threads` threads; results keep the job order.
std::vector<RunResult> run_parallel(const std::vector<std::function<RunResult()>>& jobs, int threads);

/// One run per lambda. Throws InputError for an empty list.
std::vector<RunResult> rd_sweep(const AnchorSet& scene, const std::vector<Real>& lambdas, const TrainConfig& config,
                                int threads = 0);

/// One run per variant under the same seeds and budget.
std::vector<RunResult> ablate(const AnchorSet& scene, const TrainConfig& config, const std::vector<Variant>& variants,
                              int threads = 0);

void write_runs_csv(std::ostream& out, const std::vector<RunResult>& runs);

}  // namespace msc

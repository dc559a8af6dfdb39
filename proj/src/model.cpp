#include "msc/model.hpp"

#include <algorithm>
#include <random>

namespace msc {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full:
      return "full";
    case Variant::NoC2fq:
      return "no_c2fq";
    case Variant::NoMop:
      return "no_mop";
    case Variant::NoC2fqMop:
      return "no_c2fq_mop";
    case Variant::NoQm:
      return "no_qm";
    case Variant::NoQmQv:
      return "no_qm_qv";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (name == variant_name(v)) return v;
  }
  throw InputError("unknown variant '" + name + "' (expected full, no_c2fq, no_mop, no_c2fq_mop, no_qm, no_qm_qv)");
}

StageFlags flags_for(Variant v) {
  StageFlags f;
  switch (v) {
    case Variant::Full:
      break;
    case Variant::NoC2fq:
      f.scale_select = f.vector = f.matrix = false;
      break;
    case Variant::NoMop:
      f.mixture = false;
      break;
    case Variant::NoC2fqMop:
      f.scale_select = f.vector = f.matrix = false;
      f.mixture = false;
      break;
    case Variant::NoQm:
      f.matrix = false;
      break;
    case Variant::NoQmQv:
      f.matrix = false;
      f.vector = false;
      break;
  }
  return f;
}

void ModelConfig::validate() const {
  bounds.validate();
  grid.validate();
  c2fq.validate();
  if (mop.experts < 1) throw InputError("model: expert count must be >= 1");
  if (mop.hidden < 1 || mop.output < 1) throw InputError("model: expert sizes must be >= 1");
  if (fphi_hidden < 1 || head_hidden < 1) throw InputError("model: hidden sizes must be >= 1");
  if (views.views < 1) throw InputError("model: at least one view is required");
  if (probe_passes < 1) throw InputError("model: probe_passes must be >= 1");
  if (c2fq.scale_list.size() > 254) throw InputError("model: at most 254 scales are supported");
}

const char* component_tag(Component c) {
  switch (c) {
    case Component::Grid:
      return "GRID";
    case Component::Experts:
      return "EXPT";
    case Component::Gate:
      return "GATE";
    case Component::ScaleSelector:
      return "SCFC";
    case Component::VectorNet:
      return "FPHI";
    case Component::EntropyHeads:
      return "HEAD";
  }
  return "????";
}

CompressionModel CompressionModel::init(const ModelConfig& config) {
  config.validate();
  CompressionModel m;
  m.config_ = config;
  const AttributeLayout& layout = config.layout;
  m.views_ = ToyViewModel::generate(config.view_seed, layout.k(), config.views);
  m.grid = HashGrid(config.grid, config.bounds, derive_seed(config.seed, 1));

  MopConfig mop = config.mop;
  mop.experts = config.effective_experts();
  m.mop = MopNetwork::init(derive_seed(config.seed, 2), config.grid.output_dim(), mop);

  std::mt19937_64 rng(derive_seed(config.seed, 3));
  const Index s = static_cast<Index>(config.c2fq.scale_list.size());
  const auto unit = std::find(config.c2fq.scale_list.begin(), config.c2fq.scale_list.end(), 1.0);
  for (int grp = 0; grp < kGroupCount; ++grp) {
    m.scale_selector[grp] = Linear(mop.output, s, InitScheme::UniformFanIn, rng);
    if (unit != config.c2fq.scale_list.end()) {
      m.scale_selector[grp].bias.value(0, unit - config.c2fq.scale_list.begin()) += 1.0;
    }
  }
  m.vector_net = Mlp({mop.output, config.fphi_hidden, kGroupCount}, InitScheme::UniformFanIn, rng);
  for (Group grp : kGroups) {
    m.heads[static_cast<int>(grp)] = EntropyHead(mop.output, config.head_hidden, layout.range(grp).count, rng);
  }
  return m;
}

bool CompressionModel::has_component(Component c) const {
  switch (c) {
    case Component::Grid:
    case Component::Experts:
    case Component::EntropyHeads:
      return true;
    case Component::Gate:
      return mop.expert_count() > 1;
    case Component::ScaleSelector:
      return config_.flags.scale_select;
    case Component::VectorNet:
      return config_.flags.vector;
  }
  return false;
}

std::vector<NamedParam> CompressionModel::parameters(Component c) {
  std::vector<NamedParam> out;
  if (!has_component(c)) return out;
  switch (c) {
    case Component::Grid:
      grid.collect("grid", out);
      break;
    case Component::Experts:
      mop.collect_experts("expert", out);
      break;
    case Component::Gate:
      mop.collect_gate("gate", out);
      break;
    case Component::ScaleSelector:
      for (Group grp : kGroups) scale_selector[static_cast<int>(grp)].collect(std::string("scale.") + group_name(grp), out);
      break;
    case Component::VectorNet:
      vector_net.collect("fphi", out);
      break;
    case Component::EntropyHeads:
      for (Group grp : kGroups) heads[static_cast<int>(grp)].mlp.collect(std::string("head.") + group_name(grp), out);
      break;
  }
  return out;
}

std::vector<NamedParam> CompressionModel::parameters() {
  std::vector<NamedParam> out;
  for (Component c : kComponents) {
    auto part = parameters(c);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t CompressionModel::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.tensor->size());
  return n;
}

Var gradient_probe_loss(Graph& g, const ToyViewModel& views, int view, const Var& reconstructed) {
  const Var mapped = matmul(reconstructed, g.constant(Mat(views.map(view).transpose())));
  return diff::sum(diff::square(mapped));
}

GradientMatrix reference_gradients(const CompressionModel& model, Index anchors) {
  const ModelConfig& cfg = model.config();
  if (anchors < 1) throw InputError("reference_gradients: anchor count must be >= 1");
  const Index k = cfg.layout.k();
  RowVec step(k);
  for (Index j = 0; j < k; ++j) step[j] = 1.0 / cfg.c2fq.q0[static_cast<int>(cfg.layout.group_of(j))];

  std::mt19937_64 rng(cfg.probe_seed);
  std::vector<Mat> points;
  points.reserve(static_cast<std::size_t>(cfg.probe_passes));
  for (int p = 0; p < cfg.probe_passes; ++p) {
    Mat u = uniform_noise(anchors, k, rng);
    points.push_back((u.array().rowwise() * step.array()).matrix());
  }
  const ToyViewModel& views = model.views();
  const ViewLoss loss = [&views](Graph& g, int v, const Var& a) { return gradient_probe_loss(g, views, v, a); };
  return collect_gradients(views.views(), points, loss, cfg.c2fq.gradient_floor);
}

GradientMatrix active_gradients(const CompressionModel& model, Index anchors) {
  if (!model.config().flags.matrix || !model.gradients_collected) {
    return GradientMatrix::ones(anchors, model.config().layout.k());
  }
  return reference_gradients(model, anchors);
}

namespace {

int argmax_lowest(const RowVec& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

DecodingState evaluate_state(const CompressionModel& model, const Locations& decoded_locations,
                             const std::optional<std::array<int, kGroupCount>>& scale_index) {
  const ModelConfig& cfg = model.config();
  const Index n = decoded_locations.rows();
  DecodingState st;
  st.interp = model.grid.interpolate(decoded_locations);
  st.prior = model.mop.fuse(st.interp);
  st.gate_weights = model.mop.gate_weights(st.interp);
  if (!st.prior.allFinite()) throw NumericError("evaluate_state: non-finite prior feature");

  QuantPlan& plan = st.plan;
  plan.q0 = cfg.c2fq.q0;
  plan.scale_list = cfg.c2fq.scale_list;
  plan.tau = 1.0;
  const RowVec pooled = st.prior.colwise().mean();
  RowVec q1(kGroupCount);
  for (int grp = 0; grp < kGroupCount; ++grp) {
    Real s = 1.0;
    plan.scale_index[grp] = -1;
    if (cfg.flags.scale_select) {
      int idx = 0;
      if (scale_index) {
        idx = (*scale_index)[grp];
        if (idx < 0 || idx >= static_cast<int>(plan.scale_list.size())) {
          throw FormatError("evaluate_state: scale index " + std::to_string(idx) + " outside the scale list");
        }
      } else {
        idx = argmax_lowest(RowVec(model.scale_selector[grp].eval(pooled).row(0)));
      }
      plan.scale_index[grp] = idx;
      s = plan.scale_list[static_cast<std::size_t>(idx)];
    }
    plan.q1[grp] = plan.q0[grp] * s;
    q1[grp] = plan.q1[grp];
  }
  if (cfg.flags.vector) {
    plan.q2 = expand_to_vector(q1, model.vector_net.eval(st.prior));
  } else {
    plan.q2 = q1.replicate(n, 1);
  }
  plan.q4 = build_matrix(plan.q2, active_gradients(model, n), cfg.layout);
  plan.validate();
  st.params = predict_params(st.prior, model.heads, cfg.layout);
  return st;
}

ForwardResult forward(Graph& g, const CompressionModel& model, const GridStencil& stencil, const Mat& attributes,
                      const GradientMatrix& grads, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  const Index n = attributes.rows();
  if (attributes.cols() != cfg.layout.k()) {
    throw ShapeError("forward: attributes have " + std::to_string(attributes.cols()) + " columns, model expects " +
                     std::to_string(cfg.layout.k()));
  }
  if (grads.rows() != n || grads.cols() != cfg.layout.k()) {
    throw ShapeError("forward: gradient matrix " + diff::shape_str(grads.rows(), grads.cols()) + " vs attributes " +
                     diff::shape_str(n, attributes.cols()));
  }

  ForwardResult r;
  const Var interp = model.grid.forward(g, stencil);
  if (interp.rows() != n) throw ShapeError("forward: stencil and attributes disagree on the anchor count");
  const auto mop = model.mop.forward(g, interp);
  r.prior = mop.fused;
  r.gate_weights = mop.weights;

  const Var pooled = diff::mean_rows(r.prior);
  const Index s = static_cast<Index>(cfg.c2fq.scale_list.size());
  std::vector<Var> q1_parts;
  for (int grp = 0; grp < kGroupCount; ++grp) {
    if (cfg.flags.scale_select) {
      const Var logits = model.scale_selector[grp].forward(g, pooled);
      const RowVec& gumbel = options.gumbel[grp].size() == s ? options.gumbel[grp] : RowVec(RowVec::Zero(s));
      r.scale[grp] = select_scale(g, logits, cfg.c2fq.scale_list, options.mode, options.tau, gumbel, options.hard);
      q1_parts.push_back(diff::scale(r.scale[grp].scale, cfg.c2fq.q0[grp]));
    } else {
      r.scale[grp].index = -1;
      q1_parts.push_back(g.constant(cfg.c2fq.q0[grp]));
    }
  }
  r.q1 = diff::concat_cols(q1_parts);
  if (cfg.flags.vector) {
    r.q2 = expand_to_vector(r.q1, model.vector_net.forward(g, r.prior));
  } else {
    r.q2 = diff::repeat_rows(r.q1, n);
  }
  r.q4 = build_matrix(r.q2, grads, cfg.layout);

  const Var a = g.constant(attributes);
  if (options.mode == Mode::Eval) {
    r.quantized = g.constant(quantize(attributes, r.q4.value(), Mode::Eval));
  } else if (options.straight_through) {
    r.quantized = quantize_straight_through(a, r.q4);
  } else {
    const Mat noise = options.noise.size() == 0 ? Mat(Mat::Zero(n, attributes.cols())) : options.noise;
    if (noise.rows() != n || noise.cols() != attributes.cols()) throw ShapeError("forward: noise has the wrong shape");
    r.quantized = quantize_noisy(a, r.q4, noise);
  }

  std::vector<Var> means, stds;
  for (int grp = 0; grp < kGroupCount; ++grp) {
    auto [mu, sd] = model.heads[grp].forward(g, r.prior);
    means.push_back(mu);
    stds.push_back(sd);
  }
  r.mean = diff::concat_cols(means);
  r.std = diff::concat_cols(stds);
  r.bits = gaussian_bits(r.quantized, r.mean, r.std, r.q4);
  return r;
}

}  // namespace msc

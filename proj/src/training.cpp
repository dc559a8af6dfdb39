#include "msc/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace msc {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("train config: lambda must be >= 0");
  if (iterations < 1) throw InputError("train config: iterations must be >= 1");
  if (!(lr_grid > 0.0) || !(lr_mlp > 0.0)) throw InputError("train config: learning rates must be > 0");
  if (!(lr_min_fraction >= 0.0 && lr_min_fraction <= 1.0)) throw InputError("train config: lr_min_fraction outside [0, 1]");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw InputError("train config: temperatures must be > 0");
  if (!(phase_a > 0.0 && phase_a < 1.0)) throw InputError("train config: phase_a must lie in (0, 1)");
  if (experts < 1) throw InputError("train config: experts must be >= 1");
  if (eval_every < 0) throw InputError("train config: eval_every must be >= 0");
  C2fqConfig c;
  c.scale_list = scale_list;
  c.q0 = q0;
  c.validate();
  grid.validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Real to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  Real out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InputError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  const Real r = to_real(key, v);
  if (r != std::floor(r)) throw InputError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<long long>(r);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InputError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace

std::vector<Real> parse_real_list(const std::string& text) {
  std::vector<Real> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(to_real("list", item));
  return out;
}

std::array<Real, kGroupCount> parse_q0(const std::string& text, std::array<Real, kGroupCount> base) {
  for (const auto& item : split(text, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InputError("q0: expected name=value, got '" + item + "'");
    const std::string name = trim(item.substr(0, eq));
    const Real v = to_real("q0." + name, trim(item.substr(eq + 1)));
    bool found = false;
    for (Group g : kGroups) {
      if (name == group_name(g)) {
        base[static_cast<int>(g)] = v;
        found = true;
      }
    }
    if (!found) throw InputError("q0: unknown group '" + name + "' (expected feature, scaling, offsets)");
  }
  return base;
}

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "lambda") c.lambda = to_real(key, v);
    else if (key == "iterations") c.iterations = static_cast<int>(to_int(key, v));
    else if (key == "lr_grid") c.lr_grid = to_real(key, v);
    else if (key == "lr_mlp") c.lr_mlp = to_real(key, v);
    else if (key == "lr_min_fraction") c.lr_min_fraction = to_real(key, v);
    else if (key == "tau_start") c.tau_start = to_real(key, v);
    else if (key == "tau_end") c.tau_end = to_real(key, v);
    else if (key == "phase_a") c.phase_a = to_real(key, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "view_seed") c.view_seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "experts") c.experts = static_cast<int>(to_int(key, v));
    else if (key == "scale_list") c.scale_list = parse_real_list(v);
    else if (key == "q0") c.q0 = parse_q0(v, c.q0);
    else if (key == "variant") c.variant = parse_variant(v);
    else if (key == "eval_every") c.eval_every = static_cast<int>(to_int(key, v));
    else if (key == "measure_actual") c.measure_actual = to_bool(key, v);
    else if (key == "straight_through") c.straight_through = to_bool(key, v);
    else if (key == "grid_levels") c.grid.levels = static_cast<int>(to_int(key, v));
    else if (key == "grid_features") c.grid.features = static_cast<int>(to_int(key, v));
    else if (key == "grid_log2_table") c.grid.log2_table = static_cast<int>(to_int(key, v));
    else if (key == "grid_resolutions") {
      c.grid.resolutions.clear();
      for (Real r : parse_real_list(v)) c.grid.resolutions.push_back(static_cast<int>(r));
    } else if (key == "divergence_limit") c.divergence_limit = to_real(key, v);
    else throw InputError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  auto list = [&o](const auto& v) {
    for (std::size_t i = 0; i < v.size(); ++i) o << (i ? "," : "") << v[i];
  };
  o << "lambda = " << c.lambda << "\n"
    << "iterations = " << c.iterations << "\n"
    << "lr_grid = " << c.lr_grid << "\n"
    << "lr_mlp = " << c.lr_mlp << "\n"
    << "lr_min_fraction = " << c.lr_min_fraction << "\n"
    << "tau_start = " << c.tau_start << "\n"
    << "tau_end = " << c.tau_end << "\n"
    << "phase_a = " << c.phase_a << "\n"
    << "seed = " << c.seed << "\n"
    << "view_seed = " << c.view_seed << "\n"
    << "experts = " << c.experts << "\n"
    << "scale_list = ";
  list(c.scale_list);
  o << "\nq0 = feature=" << c.q0[0] << ",scaling=" << c.q0[1] << ",offsets=" << c.q0[2] << "\n"
    << "variant = " << variant_name(c.variant) << "\n"
    << "eval_every = " << c.eval_every << "\n"
    << "measure_actual = " << (c.measure_actual ? "true" : "false") << "\n"
    << "straight_through = " << (c.straight_through ? "true" : "false") << "\n"
    << "grid_levels = " << c.grid.levels << "\n"
    << "grid_features = " << c.grid.features << "\n"
    << "grid_log2_table = " << c.grid.log2_table << "\n"
    << "grid_resolutions = ";
  list(c.grid.resolutions);
  o << "\ndivergence_limit = " << c.divergence_limit << "\n";
  return o.str();
}

ModelConfig model_config_for(const TrainConfig& c, const AnchorSet& scene) {
  ModelConfig m;
  m.layout = scene.layout();
  m.bounds = scene.bounds();
  m.grid = c.grid;
  m.mop.experts = c.experts;
  m.c2fq.scale_list = c.scale_list;
  m.c2fq.q0 = c.q0;
  m.flags = flags_for(c.variant);
  m.seed = derive_seed(c.seed, 10);
  m.view_seed = c.view_seed;
  m.probe_seed = derive_seed(c.seed, 11);
  return m;
}

void TrainTrace::write_csv(std::ostream& out) const {
  std::size_t experts = 0;
  for (const auto& r : records) experts = std::max<std::size_t>(experts, static_cast<std::size_t>(r.gate_weights.size()));
  out << "iteration,phase,gradients_all_ones,train_loss,distortion,est_bits,actual_bits,scale_idx_feature,"
         "scale_idx_scaling,scale_idx_offsets";
  for (std::size_t i = 0; i < experts; ++i) out << ",w_" << (i + 1);
  out << "\n" << std::setprecision(10);
  for (const auto& r : records) {
    out << r.iteration << "," << (r.phase_b ? "B" : "A") << "," << (r.gradients_all_ones ? 1 : 0) << ","
        << r.train_loss << "," << r.distortion << "," << r.estimated_bits << "," << r.actual_bits;
    for (int idx : r.scale_index) out << "," << idx;
    for (std::size_t i = 0; i < experts; ++i) {
      out << ",";
      if (i < static_cast<std::size_t>(r.gate_weights.size())) out << r.gate_weights[static_cast<Index>(i)];
    }
    out << "\n";
  }
}

LossTerms total_loss(Graph& g, const CompressionModel& model, const GridStencil& stencil, const Mat& attributes,
                     const GradientMatrix& grads, const ForwardOptions& options, Real lambda) {
  LossTerms t;
  t.forward = forward(g, model, stencil, attributes, grads, options);
  t.distortion = toy_distortion(g, model.views(), g.constant(attributes), t.forward.quantized);
  t.bits = diff::sum(t.forward.bits);
  t.total = t.distortion + diff::scale(t.bits, lambda / static_cast<Real>(attributes.rows()));
  return t;
}

EvalPoint evaluate(const CompressionModel& model, const AnchorSet& scene) {
  const Locations locs = dequantize_locations(quantize_locations(scene.locations(), scene.bounds()), scene.bounds());
  const DecodingState st = evaluate_state(model, locs);
  const Mat q = quantize(scene.attributes(), st.plan.q4, Mode::Eval);
  EvalPoint p;
  p.distortion = toy_distortion(model.views(), scene.attributes(), q);
  p.estimated_bits = estimate_bits(q, st.params, st.plan.q4);
  p.scale_index = st.plan.scale_index;
  p.gate_weights = st.gate_weights.colwise().mean();
  return p;
}

TrainResult train(const AnchorSet& scene, const TrainConfig& config) {
  config.validate();
  CompressionModel model = CompressionModel::init(model_config_for(config, scene));
  TrainTrace trace;
  const Index n = scene.size();
  const Index k = scene.layout().k();
  const Mat& attributes = scene.attributes();
  // Priors are computed from the 16-bit locations a decoder sees.
  const Locations locs = dequantize_locations(quantize_locations(scene.locations(), scene.bounds()), scene.bounds());
  const GridStencil stencil = model.grid.stencil(locs);

  std::vector<NamedParam> params = model.parameters();
  std::vector<Real> base_lr;
  for (const auto& p : params) base_lr.push_back(p.name.rfind("grid", 0) == 0 ? config.lr_grid : config.lr_mlp);
  Adam adam;
  std::vector<Real> lr(params.size());

  std::mt19937_64 rng(derive_seed(config.seed, 20));
  const int switch_at = std::clamp(static_cast<int>(std::lround(config.phase_a * config.iterations)), 1,
                                   config.iterations);
  GradientMatrix grads = GradientMatrix::ones(n, k);
  const Index s = static_cast<Index>(config.scale_list.size());

  for (int it = 0; it < config.iterations; ++it) {
    const bool phase_b = it >= switch_at;
    if (it == switch_at && model.config().flags.matrix) {
      model.gradients_collected = true;
      grads = active_gradients(model, n);
    }
    ForwardOptions opt;
    opt.mode = Mode::Train;
    opt.tau = temperature_at(it, config.iterations, config.tau_start, config.tau_end);
    opt.straight_through = config.straight_through;
    for (auto& gum : opt.gumbel) gum = sample_gumbel(s, rng);
    opt.noise = uniform_noise(n, k, rng);

    Graph g;
    const LossTerms terms = total_loss(g, model, stencil, attributes, grads, opt, config.lambda);
    const Real loss = terms.total.value()(0, 0);
    if (!std::isfinite(loss) || loss > config.divergence_limit) {
      std::ostringstream msg;
      msg << "training diverged at iteration " << it << ": loss " << loss << " (distortion "
          << terms.distortion.value()(0, 0) << ", bits " << terms.bits.value()(0, 0) << ")";
      throw DivergenceError(msg.str());
    }
    trace.losses.push_back(loss);
    const auto grad = g.backward(terms.total);

    const Real progress = static_cast<Real>(it) / static_cast<Real>(std::max(1, config.iterations - 1));
    const Real decay = config.lr_min_fraction + (1.0 - config.lr_min_fraction) * 0.5 * (1.0 + std::cos(M_PI * progress));
    for (std::size_t i = 0; i < params.size(); ++i) lr[i] = base_lr[i] * decay;
    adam.step(params, grad, lr);

    const bool last = it + 1 == config.iterations;
    if (last || (config.eval_every > 0 && it % config.eval_every == 0)) {
      TraceRecord rec;
      rec.iteration = it;
      rec.phase_b = phase_b;
      rec.gradients_all_ones = grads.all_ones();
      rec.train_loss = loss;
      const EvalPoint ep = evaluate(model, scene);
      rec.distortion = ep.distortion;
      rec.estimated_bits = ep.estimated_bits;
      rec.scale_index = ep.scale_index;
      rec.gate_weights = ep.gate_weights;
      if (config.measure_actual) {
        const EncodeResult enc = encode_scene(scene, model);
        rec.actual_bits = 8.0 * static_cast<Real>(enc.attribute_payload_bytes);
      }
      trace.records.push_back(std::move(rec));
    }
  }
  return {std::move(model), std::move(trace)};
}

RunResult run_pipeline(const AnchorSet& scene, const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.measure_actual = false;
  cfg.eval_every = 0;
  const TrainResult tr = train(scene, cfg);
  const EncodeResult enc = encode_scene(scene, tr.model);
  const DecodeResult dec = decode_scene(enc.bytes);

  RunResult r;
  r.variant = variant_name(config.variant);
  r.lambda = config.lambda;
  r.seed = config.seed;
  r.total_bytes = enc.bytes.size();
  r.location_bytes = enc.report.location;
  r.attribute_bytes = enc.report.attributes;
  r.network_bytes = enc.report.networks;
  r.other_bytes = enc.report.other;
  const std::size_t loc_payload = enc.container.require("LOCS").payload.size();
  r.attribute_bits = 8.0 * static_cast<Real>(enc.attribute_payload_bytes);
  r.payload_bits = r.attribute_bits + 8.0 * static_cast<Real>(loc_payload);
  r.estimated_bits = enc.estimated_bits;
  r.lossless = dec.attributes == enc.quantized && dec.location_codes == enc.location_codes;
  r.distortion = toy_distortion(tr.model.views(), scene.attributes(), dec.attributes);
  r.scale_index = enc.plan.scale_index;
  r.gate_weights = enc.mean_gate_weights;
  return r;
}

int worker_threads() {
  if (const char* env = std::getenv("MSC_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<RunResult> run_parallel(const std::vector<std::function<RunResult()>>& jobs, int threads) {
  std::vector<RunResult> results(jobs.size());
  if (threads <= 0) threads = worker_threads();
  threads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = jobs[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

std::vector<RunResult> rd_sweep(const AnchorSet& scene, const std::vector<Real>& lambdas, const TrainConfig& config,
                                int threads) {
  if (lambdas.empty()) throw InputError("rd_sweep: the lambda list is empty");
  std::vector<std::function<RunResult()>> jobs;
  for (Real l : lambdas) {
    TrainConfig c = config;
    c.lambda = l;
    c.validate();
    jobs.push_back([&scene, c] { return run_pipeline(scene, c); });
  }
  return run_parallel(jobs, threads);
}

std::vector<RunResult> ablate(const AnchorSet& scene, const TrainConfig& config, const std::vector<Variant>& variants,
                              int threads) {
  if (variants.empty()) throw InputError("ablate: the variant list is empty");
  std::vector<std::function<RunResult()>> jobs;
  for (Variant v : variants) {
    TrainConfig c = config;
    c.variant = v;
    c.validate();
    jobs.push_back([&scene, c] { return run_pipeline(scene, c); });
  }
  return run_parallel(jobs, threads);
}

void write_runs_csv(std::ostream& out, const std::vector<RunResult>& runs) {
  out << "variant,lambda,seed,total_bytes,location_bytes,attribute_bytes,network_bytes,other_bytes,payload_bits,"
         "attribute_bits,est_bits,distortion,lossless,scale_idx_feature,scale_idx_scaling,scale_idx_offsets\n";
  out << std::setprecision(10);
  for (const auto& r : runs) {
    out << r.variant << "," << r.lambda << "," << r.seed << "," << r.total_bytes << "," << r.location_bytes << ","
        << r.attribute_bytes << "," << r.network_bytes << "," << r.other_bytes << "," << r.payload_bits << ","
        << r.attribute_bits << "," << r.estimated_bits << "," << r.distortion << "," << (r.lossless ? 1 : 0);
    for (int idx : r.scale_index) out << "," << idx;
    out << "\n";
  }
}

}  // namespace msc

// msc: command-line front end of the anchor attribute codec.
//
// Exit codes: 0 success, 2 input error, 3 data corruption, 4 divergence.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "msc/training.hpp"

namespace {

using namespace msc;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitCorrupt = 3;
constexpr int kExitDivergence = 4;

// Flags that override the config file.
struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> experts;
  std::optional<int> iterations;
  std::string scale_list;
  std::string q0;
  std::optional<double> phase_a;
  std::string variant;

  void add(CLI::App* cmd, bool with_lambda = true) {
    cmd->add_option("--config", config, "key = value training config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "random seed");
    if (with_lambda) cmd->add_option("--lambda", lambda, "rate weight");
    cmd->add_option("--experts", experts, "number of prior experts");
    cmd->add_option("--iterations", iterations, "training iterations");
    cmd->add_option("--scale-list", scale_list, "comma separated scale candidates");
    cmd->add_option("--q0", q0, "base resolution per group, e.g. feature=1,scaling=10,offsets=10");
    cmd->add_option("--phase-a", phase_a, "fraction of iterations before gradient collection");
    cmd->add_option("--variant", variant, "full, no_c2fq, no_mop, no_c2fq_mop, no_qm or no_qm_qv");
  }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : load_train_config(config);
    if (seed) c.seed = *seed;
    if (lambda) c.lambda = *lambda;
    if (experts) c.experts = *experts;
    if (iterations) c.iterations = *iterations;
    if (!scale_list.empty()) c.scale_list = parse_real_list(scale_list);
    if (!q0.empty()) c.q0 = parse_q0(q0, c.q0);
    if (phase_a) c.phase_a = *phase_a;
    if (!variant.empty()) c.variant = parse_variant(variant);
    c.validate();
    return c;
  }
};

nlohmann::json report_json(const StorageReport& r) {
  nlohmann::json j;
  j["location"] = r.location;
  j["attributes"] = r.attributes;
  j["networks"] = r.networks;
  j["other"] = r.other;
  j["total"] = r.total;
  j["attribute_groups"] = {{"feature", r.attribute_groups[0]},
                           {"scaling", r.attribute_groups[1]},
                           {"offsets", r.attribute_groups[2]}};
  nlohmann::json nets = nlohmann::json::object();
  for (const auto& [tag, bytes] : r.network_sections) nets[tag] = bytes;
  j["network_sections"] = nets;
  return j;
}

void print_report(std::ostream& out, const StorageReport& r) {
  out << "component      bytes\n";
  out << "location   " << std::setw(9) << r.location << "\n";
  out << "attributes " << std::setw(9) << r.attributes << "\n";
  out << "networks   " << std::setw(9) << r.networks << "\n";
  out << "other      " << std::setw(9) << r.other << "\n";
  out << "total      " << std::setw(9) << r.total << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

int cmd_generate(std::uint64_t seed, Index anchors, Index d, Index k, int value_bytes, int clusters,
                 const std::string& out) {
  SceneOptions opt;
  opt.clusters = clusters;
  save_scene(out, generate_synthetic_scene(seed, anchors, AttributeLayout(d, k), opt), value_bytes);
  std::cout << "wrote " << anchors << " anchors to " << out << "\n";
  return kExitOk;
}

int cmd_train(const std::string& scene_path, const TrainFlags& flags, const std::string& out,
              const std::string& trace_path) {
  const AnchorSet scene = load_scene(scene_path);
  const TrainConfig cfg = flags.resolve();
  TrainResult r = train(scene, cfg);
  save_model(out, r.model);
  const std::string trace = trace_path.empty() ? out + ".trace.csv" : trace_path;
  std::ostringstream csv;
  r.trace.write_csv(csv);
  write_text(trace, csv.str());
  const auto& last = r.trace.records.back();
  std::cout << "trained " << cfg.iterations << " iterations (" << variant_name(cfg.variant) << ", lambda "
            << cfg.lambda << "): distortion " << last.distortion << ", estimated bits " << last.estimated_bits
            << "\nmodel: " << out << "\ntrace: " << trace << "\n";
  return kExitOk;
}

int cmd_encode(const std::string& scene_path, const std::string& model_path, const std::string& out, bool report,
               bool json) {
  const AnchorSet scene = load_scene(scene_path);
  const CompressionModel model = load_model(model_path);
  const EncodeResult enc = encode_scene(scene, model);
  write_file(out, enc.bytes);
  if (json) {
    nlohmann::json j;
    j["file"] = out;
    j["bytes"] = enc.bytes.size();
    j["anchors"] = scene.size();
    j["estimated_bits"] = enc.estimated_bits;
    j["attribute_payload_bits"] = 8 * enc.attribute_payload_bytes;
    j["escapes"] = enc.stats.escapes;
    j["report"] = report_json(enc.report);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  std::cout << "wrote " << enc.bytes.size() << " bytes to " << out << " (" << scene.size() << " anchors, "
            << enc.attribute_payload_bytes * 8 << " attribute bits, estimate " << enc.estimated_bits << ")\n";
  if (report) print_report(std::cout, enc.report);
  return kExitOk;
}

int cmd_decode(const std::string& in, const std::string& out, bool report, int value_bytes) {
  const auto bytes = read_file(in);
  const DecodeResult dec = decode_scene(bytes);
  save_scene(out, to_anchor_set(dec), value_bytes);
  std::cout << "decoded " << dec.locations.rows() << " anchors to " << out << "\n";
  if (report) print_report(std::cout, dec.report);
  return kExitOk;
}

int cmd_inspect(const std::string& in, bool json) {
  const auto bytes = read_file(in);
  const CodecContainer c = parse(bytes, kSceneMagic);
  const SceneHeader h = decode_header(c.require("HDR ").payload);
  const StorageReport r = storage_report(c);
  const ModelConfig& m = h.config;
  if (json) {
    nlohmann::json j;
    j["file"] = in;
    j["file_bytes"] = bytes.size();
    j["version"] = c.version;
    j["anchors"] = h.anchors;
    j["layout"] = {{"feature_dim", m.layout.feature_dim()}, {"offset_count", m.layout.offset_count()},
                   {"k", m.layout.k()}};
    j["experts"] = m.effective_experts();
    j["flags"] = {{"mixture", m.flags.mixture}, {"scale_select", m.flags.scale_select},
                  {"vector", m.flags.vector}, {"matrix", m.flags.matrix}};
    j["gradients_collected"] = h.gradients_collected;
    j["q0"] = {{"feature", m.c2fq.q0[0]}, {"scaling", m.c2fq.q0[1]}, {"offsets", m.c2fq.q0[2]}};
    j["scale_list"] = m.c2fq.scale_list;
    j["scale_index"] = {{"feature", h.scale_index[0]}, {"scaling", h.scale_index[1]}, {"offsets", h.scale_index[2]}};
    nlohmann::json sections = nlohmann::json::array();
    for (const auto& s : c.sections) sections.push_back({{"tag", s.tag}, {"payload_bytes", s.payload.size()},
                                                         {"footprint", section_footprint(s)}});
    j["sections"] = sections;
    j["report"] = report_json(r);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  std::cout << in << ": " << bytes.size() << " bytes, format version " << c.version << "\n";
  std::cout << "anchors " << h.anchors << ", layout D=" << m.layout.feature_dim() << " K=" << m.layout.offset_count()
            << " (k=" << m.layout.k() << "), experts n=" << m.effective_experts() << "\n";
  std::cout << "stages: mixture=" << m.flags.mixture << " scale=" << m.flags.scale_select
            << " vector=" << m.flags.vector << " matrix=" << m.flags.matrix
            << " (gradients collected: " << h.gradients_collected << ")\n";
  for (Group g : kGroups) {
    const int gi = static_cast<int>(g);
    std::cout << "group " << std::left << std::setw(8) << group_name(g) << std::right << " Q0 " << m.c2fq.q0[gi]
              << ", scale index ";
    if (h.scale_index[gi] < 0) {
      std::cout << "-";
    } else {
      std::cout << h.scale_index[gi] << " (s=" << m.c2fq.scale_list[static_cast<std::size_t>(h.scale_index[gi])]
                << ")";
    }
    std::cout << "\n";
  }
  std::cout << "sections:\n";
  for (const auto& s : c.sections) {
    std::cout << "  " << s.tag << " " << std::setw(9) << section_footprint(s) << "\n";
  }
  print_report(std::cout, r);
  return kExitOk;
}

int write_runs(const std::vector<RunResult>& runs, const std::string& out) {
  std::ostringstream csv;
  write_runs_csv(csv, runs);
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(out, csv.str());
    std::cout << "wrote " << runs.size() << " rows to " << out << "\n";
  }
  return kExitOk;
}

int cmd_sweep(const std::string& scene_path, const TrainFlags& flags, const std::string& lambdas,
              const std::string& out) {
  const std::vector<Real> list = parse_real_list(lambdas);
  if (list.empty()) throw InputError("sweep: --lambda needs at least one value");
  const AnchorSet scene = load_scene(scene_path);
  return write_runs(rd_sweep(scene, list, flags.resolve(), worker_threads()), out);
}

int cmd_ablate(const std::string& scene_path, const TrainFlags& flags, const std::string& variants,
               const std::string& out) {
  std::vector<Variant> list;
  if (variants.empty()) {
    list.assign(kAllVariants.begin(), kAllVariants.end());
  } else {
    std::stringstream ss(variants);
    std::string item;
    while (std::getline(ss, item, ',')) list.push_back(parse_variant(item));
  }
  const AnchorSet scene = load_scene(scene_path);
  return write_runs(ablate(scene, flags.resolve(), list, worker_threads()), out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor attribute codec: train, encode, decode, inspect, sweep, ablate"};
  app.require_subcommand(1);

  std::uint64_t gen_seed = 0;
  Index gen_n = 1000, gen_d = 8, gen_k = 2;
  int gen_width = 4, gen_clusters = 8;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic scene file");
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--anchors,-n", gen_n, "anchor count")->check(CLI::PositiveNumber);
  gen->add_option("--feature-dim", gen_d, "feature dimension")->check(CLI::PositiveNumber);
  gen->add_option("--offsets", gen_k, "offsets per anchor")->check(CLI::PositiveNumber);
  gen->add_option("--value-bytes", gen_width, "4 or 8")->check(CLI::IsMember({4, 8}));
  gen->add_option("--clusters", gen_clusters, "attribute clusters")->check(CLI::PositiveNumber);
  gen->add_option("--out,-o", gen_out, "output scene file")->required();

  TrainFlags train_flags;
  std::string train_scene, train_out, train_trace;
  auto* tr = app.add_subcommand("train", "train the networks on a scene");
  tr->add_option("scene", train_scene, "scene file")->required();
  tr->add_option("--out,-o", train_out, "output model file")->required();
  tr->add_option("--trace", train_trace, "trace CSV (default: <out>.trace.csv)");
  train_flags.add(tr);

  std::string enc_scene, enc_model, enc_out;
  bool enc_report = false, enc_json = false;
  auto* enc = app.add_subcommand("encode", "compress a scene with a trained model");
  enc->add_option("scene", enc_scene, "scene file")->required();
  enc->add_option("model", enc_model, "model file")->required();
  enc->add_option("--out,-o", enc_out, "output .msc file")->required();
  enc->add_flag("--report", enc_report, "print the storage report");
  enc->add_flag("--json", enc_json, "machine-readable output");

  std::string dec_in, dec_out;
  bool dec_report = false;
  int dec_width = 8;
  auto* dec = app.add_subcommand("decode", "decompress a .msc file to a scene file");
  dec->add_option("input", dec_in, ".msc file")->required();
  dec->add_option("--out,-o", dec_out, "output scene file")->required();
  dec->add_flag("--report", dec_report, "print the storage report");
  dec->add_option("--value-bytes", dec_width, "4 or 8 (8 keeps decoded values exact)")->check(CLI::IsMember({4, 8}));

  std::string ins_in;
  bool ins_json = false;
  auto* ins = app.add_subcommand("inspect", "describe a .msc file");
  ins->add_option("input", ins_in, ".msc file")->required();
  ins->add_flag("--json", ins_json, "machine-readable output");

  TrainFlags sweep_flags;
  std::string sweep_scene, sweep_lambdas, sweep_out;
  auto* sw = app.add_subcommand("sweep", "rate-distortion sweep over lambda");
  sw->add_option("scene", sweep_scene, "scene file")->required();
  sw->add_option("--lambda", sweep_lambdas, "comma separated lambda values")->required();
  sw->add_option("--out,-o", sweep_out, "output CSV (default: stdout)");
  sweep_flags.add(sw, false);

  TrainFlags abl_flags;
  std::string abl_scene, abl_variants, abl_out;
  auto* ab = app.add_subcommand("ablate", "compare pipeline variants");
  ab->add_option("scene", abl_scene, "scene file")->required();
  ab->add_option("--variants", abl_variants, "comma separated variants (default: all six)");
  ab->add_option("--out,-o", abl_out, "output CSV (default: stdout)");
  abl_flags.add(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*gen) return cmd_generate(gen_seed, gen_n, gen_d, gen_k, gen_width, gen_clusters, gen_out);
    if (*tr) return cmd_train(train_scene, train_flags, train_out, train_trace);
    if (*enc) return cmd_encode(enc_scene, enc_model, enc_out, enc_report, enc_json);
    if (*dec) return cmd_decode(dec_in, dec_out, dec_report, dec_width);
    if (*ins) return cmd_inspect(ins_in, ins_json);
    if (*sw) return cmd_sweep(sweep_scene, sweep_flags, sweep_lambdas, sweep_out);
    if (*ab) return cmd_ablate(abl_scene, abl_flags, abl_variants, abl_out);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const FormatError& e) {
    std::cerr << "error: corrupted or unreadable data: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric failure: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitInput;
}

#include "msc/codec.hpp"

namespace msc {

namespace {

constexpr std::array<const char*, kGroupCount> kAttributeTags{"ATTF", "ATTS", "ATTO"};

void check_compatible(const AnchorSet& scene, const ModelConfig& cfg) {
  if (!(scene.layout() == cfg.layout)) {
    throw InputError("encode: scene layout (D=" + std::to_string(scene.layout().feature_dim()) +
                     ", K=" + std::to_string(scene.layout().offset_count()) + ") does not match the model (D=" +
                     std::to_string(cfg.layout.feature_dim()) + ", K=" + std::to_string(cfg.layout.offset_count()) +
                     ")");
  }
  if (!(scene.bounds() == cfg.bounds)) throw InputError("encode: scene bounds differ from the model's");
}

EntropyParams slice(const EntropyParams& p, ColumnRange r) {
  return {p.mean.middleCols(r.begin, r.count), p.std.middleCols(r.begin, r.count)};
}

}  // namespace

EncodeResult encode_scene(const AnchorSet& scene, const CompressionModel& trained) {
  CompressionModel model = round_to_stored_precision(trained);
  const ModelConfig& cfg = model.config();
  check_compatible(scene, cfg);
  if (scene.size() > 0xFFFFFFFFll) throw InputError("encode: too many anchors");

  EncodeResult out;
  const auto loc_payload = encode_locations(scene.locations(), scene.bounds());
  const auto locs = decode_locations(loc_payload, scene.bounds());
  out.location_codes = locs.codes;
  out.decoded_locations = locs.values;

  const DecodingState st = evaluate_state(model, out.decoded_locations);
  out.plan = st.plan;
  out.params = st.params;
  out.mean_gate_weights = st.gate_weights.colwise().mean();
  out.quantized = quantize(scene.attributes(), st.plan.q4, Mode::Eval);
  out.estimated_bits = 0.0;

  out.header.anchors = static_cast<std::uint32_t>(scene.size());
  out.header.config = cfg;
  out.header.gradients_collected = model.gradients_collected;
  out.header.scale_index = st.plan.scale_index;

  CodecContainer& c = out.container;
  c.sections.push_back({"HDR ", encode_header(out.header)});
  for (auto& s : network_sections(model)) c.sections.push_back(std::move(s));
  c.sections.push_back({"LOCS", loc_payload});
  for (Group grp : kGroups) {
    const auto r = cfg.layout.range(grp);
    const int gi = static_cast<int>(grp);
    const Mat a = out.quantized.middleCols(r.begin, r.count);
    const Mat q = st.plan.q4.middleCols(r.begin, r.count);
    const EntropyParams p = slice(st.params, r);
    CoderStats stats;
    auto payload = encode_attributes(a, p, q, &stats);
    out.stats.symbols += stats.symbols;
    out.stats.escapes += stats.escapes;
    out.estimated_group_bits[gi] = estimate_bits(a, p, q);
    out.estimated_bits += out.estimated_group_bits[gi];
    out.attribute_payload_bytes += payload.size();
    c.sections.push_back({kAttributeTags[gi], std::move(payload)});
  }
  out.bytes = serialize(c);
  out.report = storage_report(c);
  return out;
}

DecodeResult decode_scene(std::span<const std::uint8_t> bytes) {
  const CodecContainer c = parse(bytes, kSceneMagic);
  DecodeResult out;
  out.header = decode_header(c.require("HDR ").payload);
  const ModelConfig& cfg = out.header.config;
  CompressionModel model = CompressionModel::init(cfg);
  model.gradients_collected = out.header.gradients_collected;
  load_network_sections(c, model);

  const auto locs = decode_locations(c.require("LOCS").payload, cfg.bounds);
  if (locs.values.rows() != static_cast<Index>(out.header.anchors)) {
    throw FormatError("decode: location stream holds " + std::to_string(locs.values.rows()) + " anchors, header says " +
                      std::to_string(out.header.anchors));
  }
  out.location_codes = locs.codes;
  out.locations = locs.values;

  std::optional<std::array<int, kGroupCount>> scales;
  if (cfg.flags.scale_select) scales = out.header.scale_index;
  const DecodingState st = evaluate_state(model, out.locations, scales);
  out.plan = st.plan;
  out.attributes.resize(out.locations.rows(), cfg.layout.k());
  for (Group grp : kGroups) {
    const auto r = cfg.layout.range(grp);
    const int gi = static_cast<int>(grp);
    out.attributes.middleCols(r.begin, r.count) = decode_attributes(
        c.require(kAttributeTags[gi]).payload, slice(st.params, r), st.plan.q4.middleCols(r.begin, r.count));
  }
  out.report = storage_report(c);
  return out;
}

AnchorSet to_anchor_set(const DecodeResult& d) {
  return AnchorSet(d.locations, d.attributes, d.header.config.layout, d.header.config.bounds);
}

}  // namespace msc

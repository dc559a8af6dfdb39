#include "msc/container.hpp"

#include <zlib.h>

#include <algorithm>

namespace msc {

const Section* CodecContainer::find(const std::string& tag) const {
  for (const auto& s : sections) {
    if (s.tag == tag) return &s;
  }
  return nullptr;
}

const Section& CodecContainer::require(const std::string& tag) const {
  const Section* s = find(tag);
  if (!s) throw FormatError("container: missing section '" + tag + "'");
  return *s;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t section_footprint(const Section& s) {
  const std::size_t raw = kSectionHeaderBytes + s.payload.size();
  return (raw + kAlignment - 1) / kAlignment * kAlignment;
}

std::vector<std::uint8_t> serialize(const CodecContainer& c) {
  if (c.magic.size() != 4) throw InputError("container: magic must be 4 bytes");
  if (c.sections.size() > 0xFFFF) throw InputError("container: too many sections");
  ByteWriter w;
  w.tag(c.magic);
  w.u16(c.version);
  w.u16(static_cast<std::uint16_t>(c.sections.size()));
  for (const auto& s : c.sections) {
    if (s.tag.size() != 4) throw InputError("container: section tags must be 4 bytes, got '" + s.tag + "'");
    w.tag(s.tag);
    w.u32(crc32_of(s.payload));
    w.u64(s.payload.size());
    w.bytes(s.payload);
    w.pad_to(kAlignment);
  }
  const std::uint64_t total = w.size() + kFooterBytes;
  const std::uint32_t crc = crc32_of(w.data());
  w.tag(kFooterMagic);
  w.u32(crc);
  w.u64(total);
  return w.take();
}

CodecContainer parse(std::span<const std::uint8_t> bytes, const std::string& expected_magic) {
  ByteReader r(bytes, "container");
  CodecContainer c;
  c.magic = r.tag();
  if (c.magic != expected_magic) {
    throw BadMagicError("container: bad magic '" + c.magic + "' (expected '" + expected_magic + "')");
  }
  c.version = r.u16();
  if (c.version != kFormatVersion) {
    throw VersionMismatchError("container: version " + std::to_string(c.version) + " is not supported (expected " +
                               std::to_string(kFormatVersion) + ")");
  }
  const std::uint16_t count = r.u16();
  for (std::uint16_t i = 0; i < count; ++i) {
    Section s;
    s.tag = r.tag();
    const std::uint32_t crc = r.u32();
    const std::uint64_t length = r.u64();
    if (length > r.remaining()) {
      throw TruncatedStreamError("container: section '" + s.tag + "' declares " + std::to_string(length) +
                                 " bytes, only " + std::to_string(r.remaining()) + " remain");
    }
    const auto payload = r.bytes(static_cast<std::size_t>(length));
    if (crc32_of(payload) != crc) throw ChecksumError(s.tag, "container: checksum mismatch in section '" + s.tag + "'");
    s.payload.assign(payload.begin(), payload.end());
    r.skip_to_alignment(kAlignment);
    c.sections.push_back(std::move(s));
  }
  const std::size_t body = r.position();
  if (r.tag() != kFooterMagic) throw BadMagicError("container: bad footer magic");
  const std::uint32_t crc = r.u32();
  const std::uint64_t total = r.u64();
  if (total != bytes.size() || r.remaining() != 0) {
    throw TruncatedStreamError("container: footer records " + std::to_string(total) + " bytes, file has " +
                               std::to_string(bytes.size()));
  }
  if (crc32_of(bytes.first(body)) != crc) throw ChecksumError("footer", "container: file checksum mismatch");
  return c;
}

StorageReport storage_report(const CodecContainer& c) {
  StorageReport rep;
  rep.other = kPreludeBytes + kFooterBytes;
  for (const auto& s : c.sections) {
    const std::size_t n = section_footprint(s);
    if (s.tag == "LOCS") {
      rep.location += n;
    } else if (s.tag == "ATTF" || s.tag == "ATTS" || s.tag == "ATTO") {
      rep.attributes += n;
      rep.attribute_groups[s.tag == "ATTF" ? 0 : s.tag == "ATTS" ? 1 : 2] += n;
    } else if (s.tag == "HDR " || s.tag == "CONF") {
      rep.other += n;
    } else {
      rep.networks += n;
      rep.network_sections.emplace_back(s.tag, n);
    }
  }
  rep.total = rep.location + rep.attributes + rep.networks + rep.other;
  return rep;
}

void write_model_config(ByteWriter& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.layout.feature_dim()));
  w.u32(static_cast<std::uint32_t>(c.layout.offset_count()));
  for (int a = 0; a < 3; ++a) w.f64(c.bounds.min[a]);
  for (int a = 0; a < 3; ++a) w.f64(c.bounds.max[a]);
  w.u32(static_cast<std::uint32_t>(c.grid.levels));
  w.u32(static_cast<std::uint32_t>(c.grid.features));
  w.u32(static_cast<std::uint32_t>(c.grid.log2_table));
  for (int res : c.grid.resolutions) w.u32(static_cast<std::uint32_t>(res));
  w.f64(c.grid.init_range);
  w.u32(static_cast<std::uint32_t>(c.mop.experts));
  w.u32(static_cast<std::uint32_t>(c.mop.hidden));
  w.u32(static_cast<std::uint32_t>(c.mop.output));
  w.u32(static_cast<std::uint32_t>(c.fphi_hidden));
  w.u32(static_cast<std::uint32_t>(c.head_hidden));
  w.u32(static_cast<std::uint32_t>(c.c2fq.scale_list.size()));
  for (Real s : c.c2fq.scale_list) w.f64(s);
  for (Real q : c.c2fq.q0) w.f64(q);
  w.f64(c.c2fq.gradient_floor);
  w.u8(static_cast<std::uint8_t>((c.flags.mixture ? 1 : 0) | (c.flags.scale_select ? 2 : 0) | (c.flags.vector ? 4 : 0) |
                                 (c.flags.matrix ? 8 : 0)));
  w.u32(static_cast<std::uint32_t>(c.views.views));
  w.u32(static_cast<std::uint32_t>(c.views.pixels));
  w.f64(c.views.importance_min);
  w.f64(c.views.importance_max);
  w.u64(c.seed);
  w.u64(c.view_seed);
  w.u64(c.probe_seed);
  w.u32(static_cast<std::uint32_t>(c.probe_passes));
}

namespace {

// Caps applied while parsing so a damaged header cannot request absurd allocations.
int bounded(std::uint32_t v, std::uint32_t cap, const char* what) {
  if (v > cap) throw FormatError(std::string("header: implausible ") + what + " " + std::to_string(v));
  return static_cast<int>(v);
}

}  // namespace

ModelConfig read_model_config(ByteReader& r) {
  ModelConfig c;
  const Index d = bounded(r.u32(), 1u << 16, "feature dimension");
  const Index k = bounded(r.u32(), 1u << 16, "offset count");
  if (d < 1 || k < 1) throw FormatError("header: empty attribute layout");
  c.layout = AttributeLayout(d, k);
  for (int a = 0; a < 3; ++a) c.bounds.min[a] = r.f64();
  for (int a = 0; a < 3; ++a) c.bounds.max[a] = r.f64();
  c.grid.levels = bounded(r.u32(), 64, "grid level count");
  c.grid.features = bounded(r.u32(), 1024, "grid feature count");
  c.grid.log2_table = bounded(r.u32(), 24, "grid table size");
  c.grid.resolutions.resize(static_cast<std::size_t>(c.grid.levels));
  for (int& res : c.grid.resolutions) res = bounded(r.u32(), 1u << 20, "grid resolution");
  c.grid.init_range = r.f64();
  c.mop.experts = bounded(r.u32(), 1024, "expert count");
  c.mop.hidden = bounded(r.u32(), 1u << 16, "expert width");
  c.mop.output = bounded(r.u32(), 1u << 16, "prior width");
  c.fphi_hidden = bounded(r.u32(), 1u << 16, "vector network width");
  c.head_hidden = bounded(r.u32(), 1u << 16, "entropy head width");
  const int s = bounded(r.u32(), 254, "scale count");
  c.c2fq.scale_list.resize(static_cast<std::size_t>(s));
  for (Real& v : c.c2fq.scale_list) v = r.f64();
  for (Real& q : c.c2fq.q0) q = r.f64();
  c.c2fq.gradient_floor = r.f64();
  const std::uint8_t flags = r.u8();
  c.flags.mixture = flags & 1;
  c.flags.scale_select = flags & 2;
  c.flags.vector = flags & 4;
  c.flags.matrix = flags & 8;
  c.views.views = bounded(r.u32(), 1024, "view count");
  c.views.pixels = bounded(r.u32(), 1u << 20, "pixel count");
  c.views.importance_min = r.f64();
  c.views.importance_max = r.f64();
  c.seed = r.u64();
  c.view_seed = r.u64();
  c.probe_seed = r.u64();
  c.probe_passes = bounded(r.u32(), 1u << 16, "probe pass count");
  try {
    c.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("header: invalid model configuration: ") + e.what());
  }
  return c;
}

std::vector<std::uint8_t> encode_header(const SceneHeader& h) {
  ByteWriter w;
  w.u32(h.anchors);
  write_model_config(w, h.config);
  w.u8(h.gradients_collected ? 1 : 0);
  for (int idx : h.scale_index) w.u8(idx < 0 ? 0xFF : static_cast<std::uint8_t>(idx));
  w.f64(h.sigma_min);
  w.f64(h.prob_min);
  w.u64(static_cast<std::uint64_t>(h.support_window));
  w.u32(h.escape_freq);
  return w.take();
}

SceneHeader decode_header(std::span<const std::uint8_t> payload) {
  ByteReader r(payload, "header");
  SceneHeader h;
  h.anchors = r.u32();
  h.config = read_model_config(r);
  h.gradients_collected = r.u8() != 0;
  for (int& idx : h.scale_index) {
    const std::uint8_t v = r.u8();
    idx = v == 0xFF ? -1 : v;
  }
  h.sigma_min = r.f64();
  h.prob_min = r.f64();
  h.support_window = static_cast<std::int64_t>(r.u64());
  h.escape_freq = r.u32();
  if (r.remaining() != 0) throw FormatError("header: trailing bytes");
  if (h.sigma_min != kSigmaMin || h.prob_min != kProbMin || h.support_window != kSupportWindow ||
      h.escape_freq != kEscapeFreq) {
    throw VersionMismatchError("header: coder constants differ from this decoder's");
  }
  return h;
}

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedParam>& params) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xFFFF) throw InputError("tensor name too long");
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(p.name.data()), p.name.size()));
    const Mat& v = p.tensor->value;
    w.u32(static_cast<std::uint32_t>(v.rows()));
    w.u32(static_cast<std::uint32_t>(v.cols()));
    for (Index i = 0; i < v.rows(); ++i) {
      for (Index j = 0; j < v.cols(); ++j) w.f32(static_cast<float>(v(i, j)));
    }
  }
  return w.take();
}

void decode_tensors(std::span<const std::uint8_t> payload, const std::vector<NamedParam>& params,
                    const std::string& section) {
  ByteReader r(payload, "section " + section);
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw FormatError("section " + section + ": " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const std::uint16_t len = r.u16();
    const auto name = r.bytes(len);
    if (std::string(name.begin(), name.end()) != p.name) {
      throw FormatError("section " + section + ": expected tensor '" + p.name + "'");
    }
    const Index rows = r.u32();
    const Index cols = r.u32();
    if (rows != p.tensor->rows() || cols != p.tensor->cols()) {
      throw FormatError("section " + section + ": tensor '" + p.name + "' has shape " + diff::shape_str(rows, cols) +
                        ", model expects " + diff::shape_str(p.tensor->rows(), p.tensor->cols()));
    }
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) p.tensor->value(i, j) = static_cast<Real>(r.f32());
    }
  }
  if (r.remaining() != 0) throw FormatError("section " + section + ": trailing bytes");
}

std::vector<Section> network_sections(CompressionModel& model) {
  std::vector<Section> out;
  for (Component c : kComponents) {
    if (!model.has_component(c)) continue;
    out.push_back({component_tag(c), encode_tensors(model.parameters(c))});
  }
  return out;
}

void load_network_sections(const CodecContainer& c, CompressionModel& model) {
  for (Component comp : kComponents) {
    if (!model.has_component(comp)) continue;
    const std::string tag = component_tag(comp);
    decode_tensors(c.require(tag).payload, model.parameters(comp), tag);
  }
}

std::vector<std::uint8_t> serialize_model(CompressionModel& model) {
  CodecContainer c;
  c.magic = kModelMagic;
  ByteWriter w;
  write_model_config(w, model.config());
  w.u8(model.gradients_collected ? 1 : 0);
  c.sections.push_back({"CONF", w.take()});
  for (auto& s : network_sections(model)) c.sections.push_back(std::move(s));
  return serialize(c);
}

CompressionModel parse_model(std::span<const std::uint8_t> bytes) {
  const CodecContainer c = parse(bytes, kModelMagic);
  ByteReader r(c.require("CONF").payload, "model configuration");
  const ModelConfig cfg = read_model_config(r);
  const bool collected = r.u8() != 0;
  if (r.remaining() != 0) throw FormatError("model configuration: trailing bytes");
  CompressionModel m = CompressionModel::init(cfg);
  m.gradients_collected = collected;
  load_network_sections(c, m);
  return m;
}

void save_model(const std::string& path, CompressionModel& model) { write_file(path, serialize_model(model)); }

CompressionModel load_model(const std::string& path) { return parse_model(read_file(path)); }

CompressionModel round_to_stored_precision(const CompressionModel& model) {
  CompressionModel copy = model;
  for (auto& p : copy.parameters()) {
    p.tensor->value = p.tensor->value.unaryExpr([](Real v) { return static_cast<Real>(static_cast<float>(v)); });
  }
  return copy;
}

}  // namespace msc

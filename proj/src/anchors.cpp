#include "msc/anchors.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "msc/bytes.hpp"

namespace msc {

const char* group_name(Group g) {
  switch (g) {
    case Group::Feature:
      return "feature";
    case Group::Scaling:
      return "scaling";
    case Group::Offsets:
      return "offsets";
  }
  return "?";
}

AttributeLayout::AttributeLayout(Index feature_dim, Index offset_count)
    : feature_dim_(feature_dim), offset_count_(offset_count) {
  if (feature_dim < 1 || offset_count < 1) {
    throw InputError("AttributeLayout: feature_dim and offset_count must be >= 1");
  }
}

ColumnRange AttributeLayout::range(Group g) const {
  switch (g) {
    case Group::Feature:
      return {0, feature_dim_};
    case Group::Scaling:
      return {feature_dim_, 6};
    case Group::Offsets:
      return {feature_dim_ + 6, 3 * offset_count_};
  }
  return {};
}

Group AttributeLayout::group_of(Index column) const {
  if (column < 0 || column >= k()) throw ShapeError("group_of: column " + std::to_string(column) + " outside layout");
  if (column < feature_dim_) return Group::Feature;
  if (column < feature_dim_ + 6) return Group::Scaling;
  return Group::Offsets;
}

std::array<Mat, kGroupCount> AttributeLayout::split(const Mat& attributes) const {
  if (attributes.cols() != k()) {
    throw ShapeError("split: attribute matrix has " + std::to_string(attributes.cols()) + " columns, layout expects " +
                     std::to_string(k()));
  }
  std::array<Mat, kGroupCount> parts;
  for (Group g : kGroups) {
    const auto r = range(g);
    parts[static_cast<int>(g)] = attributes.middleCols(r.begin, r.count);
  }
  return parts;
}

Mat AttributeLayout::concat(const std::array<Mat, kGroupCount>& parts) const {
  const Index n = parts[0].rows();
  Mat out(n, k());
  for (Group g : kGroups) {
    const auto r = range(g);
    const Mat& p = parts[static_cast<int>(g)];
    if (p.rows() != n || p.cols() != r.count) {
      throw ShapeError(std::string("concat: group ") + group_name(g) + " has shape " +
                       diff::shape_str(p.rows(), p.cols()));
    }
    out.middleCols(r.begin, r.count) = p;
  }
  return out;
}

void SceneBounds::validate() const {
  if (!(max.array() > min.array()).all()) throw InputError("SceneBounds: max must exceed min on every axis");
}

bool SceneBounds::contains(const Eigen::Vector3d& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

AnchorSet::AnchorSet(Locations locations, Mat attributes, AttributeLayout layout, SceneBounds bounds)
    : locations_(std::move(locations)), attributes_(std::move(attributes)), layout_(layout), bounds_(bounds) {
  bounds_.validate();
  if (locations_.rows() < 1) throw InputError("AnchorSet: at least one anchor is required");
  if (attributes_.rows() != locations_.rows() || attributes_.cols() != layout_.k()) {
    throw ShapeError("AnchorSet: attributes " + diff::shape_str(attributes_.rows(), attributes_.cols()) +
                     " do not match " + std::to_string(locations_.rows()) + " anchors x k=" +
                     std::to_string(layout_.k()));
  }
  for (Index i = 0; i < locations_.rows(); ++i) {
    if (!bounds_.contains(locations_.row(i).transpose())) {
      throw InputError("AnchorSet: anchor " + std::to_string(i) + " lies outside the scene bounds");
    }
  }
  if (!attributes_.allFinite()) throw NumericError("AnchorSet: non-finite attribute values");
}

namespace {

Real to_f32(Real v) { return static_cast<Real>(static_cast<float>(v)); }

}  // namespace

AnchorSet generate_synthetic_scene(std::uint64_t seed, Index n, const AttributeLayout& layout,
                                   const SceneOptions& options) {
  if (n < 1) throw InputError("generate_synthetic_scene: N must be >= 1");
  if (options.clusters < 1) throw InputError("generate_synthetic_scene: clusters must be >= 1");
  options.bounds.validate();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  std::normal_distribution<Real> normal(0.0, 1.0);
  const Index k = layout.k();
  const Eigen::Vector3d lo = options.bounds.min;
  const Eigen::Vector3d ext = options.bounds.extent();

  const int c = options.clusters;
  Locations centres(c, 3);
  Mat cluster_mean(c, k);
  Vec cluster_noise(c);
  for (int i = 0; i < c; ++i) {
    for (int a = 0; a < 3; ++a) centres(i, a) = lo[a] + unit(rng) * ext[a];
    for (Index j = 0; j < k; ++j) cluster_mean(i, j) = normal(rng);
    const Real t = unit(rng);
    cluster_noise[i] = options.noise_min * std::pow(options.noise_max / options.noise_min, t);
  }

  // Smooth term: one random plane wave per attribute column.
  Mat wave_dir(k, 3);
  Vec wave_phase(k);
  for (Index j = 0; j < k; ++j) {
    Eigen::Vector3d d(normal(rng), normal(rng), normal(rng));
    wave_dir.row(j) = d.normalized().transpose() * options.spatial_frequency;
    wave_phase[j] = unit(rng) * 2.0 * M_PI;
  }

  Locations loc(n, 3);
  Mat attr(n, k);
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      Real v = to_f32(lo[a] + unit(rng) * ext[a]);
      v = std::clamp(v, options.bounds.min[a], options.bounds.max[a]);
      loc(i, a) = v;
    }
    int best = 0;
    Real best_d = std::numeric_limits<Real>::infinity();
    for (int ci = 0; ci < c; ++ci) {
      const Real d = (loc.row(i) - centres.row(ci)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = ci;
      }
    }
    const Eigen::Vector3d p = (loc.row(i).transpose() - lo).cwiseQuotient(ext);
    for (Index j = 0; j < k; ++j) {
      const Real amp = options.group_amplitude[static_cast<int>(layout.group_of(j))];
      const Real wave = std::sin(wave_dir.row(j).dot(p) + wave_phase[j]);
      attr(i, j) = to_f32(amp * (cluster_mean(best, j) + options.spatial_amplitude * wave + cluster_noise[best] * normal(rng)));
    }
  }
  return AnchorSet(std::move(loc), std::move(attr), layout, options.bounds);
}

namespace {

constexpr std::uint32_t kSceneVersion = 1;

void write_value(ByteWriter& w, Real v, int value_bytes) {
  if (value_bytes == 4) {
    w.f32(static_cast<float>(v));
  } else {
    w.f64(v);
  }
}

Real read_value(ByteReader& r, int value_bytes) { return value_bytes == 4 ? static_cast<Real>(r.f32()) : r.f64(); }

}  // namespace

std::vector<std::uint8_t> serialize_scene(const AnchorSet& scene, int value_bytes) {
  if (value_bytes != 4 && value_bytes != 8) throw InputError("serialize_scene: value width must be 4 or 8 bytes");
  ByteWriter w;
  w.tag("MSCS");
  w.u32(kSceneVersion);
  w.u32(static_cast<std::uint32_t>(value_bytes));
  w.u32(static_cast<std::uint32_t>(scene.size()));
  w.u32(static_cast<std::uint32_t>(scene.layout().feature_dim()));
  w.u32(static_cast<std::uint32_t>(scene.layout().offset_count()));
  for (int a = 0; a < 3; ++a) w.f64(scene.bounds().min[a]);
  for (int a = 0; a < 3; ++a) w.f64(scene.bounds().max[a]);
  for (Index i = 0; i < scene.size(); ++i) {
    for (int a = 0; a < 3; ++a) write_value(w, scene.locations()(i, a), value_bytes);
  }
  for (Index i = 0; i < scene.size(); ++i) {
    for (Index j = 0; j < scene.layout().k(); ++j) write_value(w, scene.attributes()(i, j), value_bytes);
  }
  return w.take();
}

AnchorSet parse_scene(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "scene");
  if (r.tag() != "MSCS") throw BadMagicError("scene: bad magic (expected MSCS)");
  const std::uint32_t version = r.u32();
  if (version != kSceneVersion) throw VersionMismatchError("scene: unsupported version " + std::to_string(version));
  const int value_bytes = static_cast<int>(r.u32());
  if (value_bytes != 4 && value_bytes != 8) throw FormatError("scene: bad value width");
  const Index n = r.u32();
  const Index d = r.u32();
  const Index k_off = r.u32();
  SceneBounds b;
  for (int a = 0; a < 3; ++a) b.min[a] = r.f64();
  for (int a = 0; a < 3; ++a) b.max[a] = r.f64();
  AttributeLayout layout(d, k_off);
  Locations loc(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) loc(i, a) = read_value(r, value_bytes);
  }
  Mat attr(n, layout.k());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < layout.k(); ++j) attr(i, j) = read_value(r, value_bytes);
  }
  return AnchorSet(std::move(loc), std::move(attr), layout, b);
}

void save_scene(const std::string& path, const AnchorSet& scene, int value_bytes) {
  write_file(path, serialize_scene(scene, value_bytes));
}

AnchorSet load_scene(const std::string& path) { return parse_scene(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw InputError("write failed for " + path);
}

}  // namespace msc

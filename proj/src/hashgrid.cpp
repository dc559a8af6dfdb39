#include "msc/hashgrid.hpp"

#include <cmath>
#include <random>

namespace msc {

void HashGridConfig::validate() const {
  if (levels < 1 || features < 1) throw InputError("HashGridConfig: levels and features must be >= 1");
  if (log2_table < 1 || log2_table > 24) throw InputError("HashGridConfig: log2_table must be in [1, 24]");
  if (static_cast<int>(resolutions.size()) != levels) {
    throw InputError("HashGridConfig: need one resolution per level");
  }
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    if (resolutions[i] < 1 || (i > 0 && resolutions[i] <= resolutions[i - 1])) {
      throw InputError("HashGridConfig: resolutions must be positive and strictly increasing");
    }
  }
}

HashGrid::HashGrid(const HashGridConfig& config, const SceneBounds& bounds, std::uint64_t seed)
    : config_(config), bounds_(bounds) {
  config_.validate();
  bounds_.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(-config_.init_range, config_.init_range);
  for (int l = 0; l < config_.levels; ++l) {
    Mat t(config_.table_size(), config_.features);
    for (Index i = 0; i < t.size(); ++i) t(i) = u(rng);
    tables_.emplace_back(std::move(t));
  }
}

std::uint32_t HashGrid::hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size) {
  const std::uint32_t h = (static_cast<std::uint32_t>(x) * kPrimes[0]) ^ (static_cast<std::uint32_t>(y) * kPrimes[1]) ^
                          (static_cast<std::uint32_t>(z) * kPrimes[2]);
  return h & (table_size - 1u);
}

GridStencil HashGrid::stencil(const Locations& locations) const {
  const Index n = locations.rows();
  GridStencil s;
  const auto table = static_cast<std::uint32_t>(config_.table_size());
  const Eigen::Vector3d ext = bounds_.extent();
  std::vector<Eigen::Vector3d> unit(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d p = (locations.row(i).transpose() - bounds_.min).cwiseQuotient(ext);
    if ((p.array() < 0.0).any() || (p.array() > 1.0).any()) {
      ++s.clamped;
      p = p.cwiseMax(0.0).cwiseMin(1.0);
    }
    unit[static_cast<std::size_t>(i)] = p;
  }
  for (int l = 0; l < config_.levels; ++l) {
    const int res = config_.resolutions[static_cast<std::size_t>(l)];
    Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> idx(n, 8);
    Mat w(n, 8);
    for (Index i = 0; i < n; ++i) {
      std::array<std::int64_t, 3> cell{};
      std::array<Real, 3> frac{};
      for (int a = 0; a < 3; ++a) {
        const Real x = unit[static_cast<std::size_t>(i)][a] * res;
        std::int64_t c = static_cast<std::int64_t>(std::floor(x));
        if (c >= res) c = res - 1;  // the upper boundary belongs to the last cell
        cell[a] = c;
        frac[a] = x - static_cast<Real>(c);
      }
      for (int corner = 0; corner < 8; ++corner) {
        Real weight = 1.0;
        std::array<std::int64_t, 3> v{};
        for (int a = 0; a < 3; ++a) {
          const bool hi = (corner >> a) & 1;
          v[a] = cell[a] + (hi ? 1 : 0);
          weight *= hi ? frac[a] : 1.0 - frac[a];
        }
        idx(i, corner) = hash(v[0], v[1], v[2], table);
        w(i, corner) = weight;
      }
    }
    s.index.push_back(std::move(idx));
    s.weight.push_back(std::move(w));
  }
  return s;
}

Var HashGrid::forward(Graph& g, const GridStencil& stencil) const {
  std::vector<Var> levels;
  for (int l = 0; l < config_.levels; ++l) {
    const auto li = static_cast<std::size_t>(l);
    levels.push_back(diff::gather_weighted(g.param(tables_[li]), stencil.index[li], stencil.weight[li]));
  }
  return diff::concat_cols(levels);
}

Mat HashGrid::interpolate(const Locations& locations) const {
  const GridStencil s = stencil(locations);
  Mat out = Mat::Zero(locations.rows(), config_.output_dim());
  for (int l = 0; l < config_.levels; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Mat& t = tables_[li].value;
    for (Index i = 0; i < locations.rows(); ++i) {
      for (int c = 0; c < 8; ++c) {
        out.block(i, static_cast<Index>(l) * config_.features, 1, config_.features) +=
            s.weight[li](i, c) * t.row(s.index[li](i, c));
      }
    }
  }
  return out;
}

Vec HashGrid::interpolate(const Eigen::Vector3d& location) const {
  Locations one(1, 3);
  one.row(0) = location.transpose();
  return interpolate(one).row(0).transpose();
}

void HashGrid::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t l = 0; l < tables_.size(); ++l) out.push_back({prefix + ".level" + std::to_string(l), &tables_[l]});
}

std::size_t HashGrid::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tables_) n += static_cast<std::size_t>(t.size());
  return n;
}

}  // namespace msc

#include "fiberlab/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "fiberlab/errors.hpp"
#include "fiberlab/rng.hpp"

namespace fiberlab {

PointCloud::PointCloud(std::size_t d, std::vector<double> c) : dim(d), coords(std::move(c)) { validate(); }

void PointCloud::validate() const {
  if (dim == 0) {
    if (!coords.empty()) throw DomainError("point cloud: zero dimension with nonempty coordinates");
    return;
  }
  if (coords.size() % dim != 0) throw DomainError("point cloud: coordinate count is not a multiple of dim");
  const std::size_t n = size();
  if (orbit_id && orbit_id->size() != n) throw DomainError("point cloud: orbit_id length mismatch");
  if (semantic_id && semantic_id->size() != n) throw DomainError("point cloud: semantic_id length mismatch");
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  PointCloud out;
  out.dim = dim;
  out.coords.reserve(indices.size() * dim);
  if (orbit_id) out.orbit_id.emplace();
  if (semantic_id) out.semantic_id.emplace();
  for (std::size_t i : indices) {
    if (i >= size()) throw DomainError("point cloud: select index out of range");
    const auto p = point(i);
    out.coords.insert(out.coords.end(), p.begin(), p.end());
    if (orbit_id) out.orbit_id->push_back((*orbit_id)[i]);
    if (semantic_id) out.semantic_id->push_back((*semantic_id)[i]);
  }
  return out;
}

PointCloud subsample(const PointCloud& cloud, std::size_t max_points, std::uint64_t seed) {
  if (cloud.size() <= max_points) return cloud;
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  return cloud.select(idx);
}

namespace manifold {

namespace {

void add_circle(PointCloud& cloud, std::size_t count, double cx, double radius, double noise_sigma, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double x = cx + radius * std::cos(theta);
    double y = radius * std::sin(theta);
    if (noise_sigma > 0.0) {
      x += noise_sigma * rng.normal();
      y += noise_sigma * rng.normal();
    }
    cloud.coords.push_back(x);
    cloud.coords.push_back(y);
  }
}

}  // namespace

PointCloud sample_circle(std::size_t count, double radius, double noise_sigma, std::uint64_t seed) {
  if (count < 3) throw DomainError("sample_circle: count must be >= 3");
  if (!(radius > 0.0)) throw DomainError("sample_circle: radius must be positive");
  if (!(noise_sigma >= 0.0)) throw DomainError("sample_circle: noise_sigma must be >= 0");
  PointCloud cloud;
  cloud.dim = 2;
  cloud.coords.reserve(2 * count);
  Rng rng(seed);
  add_circle(cloud, count, 0.0, radius, noise_sigma, rng);
  return cloud;
}

PointCloud sample_disjoint_circles(std::size_t k, std::size_t count_per, double separation, double noise_sigma,
                                   std::uint64_t seed) {
  constexpr double kRadius = 1.0;
  if (k < 1) throw DomainError("sample_disjoint_circles: k must be >= 1");
  if (count_per < 3) throw DomainError("sample_disjoint_circles: count_per must be >= 3");
  if (!(separation > 2.0 * kRadius)) throw DomainError("sample_disjoint_circles: separation must exceed 2 * radius");
  if (!(noise_sigma >= 0.0)) throw DomainError("sample_disjoint_circles: noise_sigma must be >= 0");
  PointCloud cloud;
  cloud.dim = 2;
  cloud.coords.reserve(2 * k * count_per);
  cloud.orbit_id.emplace();
  Rng rng(seed);
  for (std::size_t c = 0; c < k; ++c) {
    add_circle(cloud, count_per, static_cast<double>(c) * separation, kRadius, noise_sigma, rng);
    cloud.orbit_id->insert(cloud.orbit_id->end(), count_per, static_cast<int>(c));
  }
  return cloud;
}

PointCloud apply_rotation(const PointCloud& cloud, double angle) {
  if (cloud.dim != 2) throw DomainError("apply_rotation: cloud must be 2-dimensional");
  PointCloud out = cloud;
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out.point(i);
    const double x = p[0], y = p[1];
    p[0] = c * x - s * y;
    p[1] = s * x + c * y;
  }
  return out;
}

void write_csv(std::ostream& out, const PointCloud& cloud) {
  cloud.validate();
  for (std::size_t d = 0; d < cloud.dim; ++d) out << (d ? "," : "") << 'x' << d;
  if (cloud.orbit_id) out << ",orbit_id";
  if (cloud.semantic_id) out << ",semantic_id";
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    for (std::size_t d = 0; d < cloud.dim; ++d) {
      std::snprintf(buf, sizeof buf, "%.9g", p[d]);
      out << (d ? "," : "") << buf;
    }
    if (cloud.orbit_id) out << ',' << (*cloud.orbit_id)[i];
    if (cloud.semantic_id) out << ',' << (*cloud.semantic_id)[i];
    out << '\n';
  }
}

PointCloud read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("point cloud CSV: missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  PointCloud cloud;
  int orbit_col = -1, semantic_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "orbit_id") {
      orbit_col = static_cast<int>(c);
    } else if (h == "semantic_id") {
      semantic_col = static_cast<int>(c);
    } else if (h == "x" + std::to_string(cloud.dim) && orbit_col < 0 && semantic_col < 0) {
      ++cloud.dim;
    } else {
      throw IoError("point cloud CSV: unexpected header column '" + h + "'");
    }
  }
  if (cloud.dim == 0) throw IoError("point cloud CSV: no coordinate columns");
  if (orbit_col >= 0) cloud.orbit_id.emplace();
  if (semantic_col >= 0) cloud.semantic_id.emplace();

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::size_t c = 0;
    while (std::getline(ss, field, ',')) {
      try {
        if (static_cast<int>(c) == orbit_col) {
          cloud.orbit_id->push_back(std::stoi(field));
        } else if (static_cast<int>(c) == semantic_col) {
          cloud.semantic_id->push_back(std::stoi(field));
        } else {
          cloud.coords.push_back(std::stod(field));
        }
      } catch (const std::logic_error&) {
        throw IoError("point cloud CSV: bad value '" + field + "' on line " + std::to_string(row));
      }
      ++c;
    }
    if (c != header.size()) throw IoError("point cloud CSV: wrong column count on line " + std::to_string(row));
  }
  cloud.validate();
  return cloud;
}

void save_csv(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_csv(out, cloud);
}

PointCloud load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_csv(in);
}

}  // namespace manifold
}  // namespace fiberlab

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace fiberlab {

// Finite sample of a manifold or of latent embeddings. Points are stored
// row-major in one flat buffer.
struct PointCloud {
  std::size_t dim = 0;
  std::vector<double> coords;
  std::optional<std::vector<int>> orbit_id;
  std::optional<std::vector<int>> semantic_id;

  PointCloud() = default;
  PointCloud(std::size_t dim, std::vector<double> coords);

  std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, dim}; }
  std::span<double> point(std::size_t i) { return {coords.data() + i * dim, dim}; }

  // Throws DomainError when coordinates or tags are inconsistent.
  void validate() const;

  // Points (with tags) at the given indices, in that order.
  PointCloud select(std::span<const std::size_t> indices) const;
};

// Seeded uniform subsample without replacement; returns the cloud unchanged
// (copied) when it already has <= max_points points.
PointCloud subsample(const PointCloud& cloud, std::size_t max_points, std::uint64_t seed);

namespace manifold {

PointCloud sample_circle(std::size_t count, double radius, double noise_sigma, std::uint64_t seed);

// k unit circles centred `separation` apart on the x axis; orbit_id = circle index.
PointCloud sample_disjoint_circles(std::size_t k, std::size_t count_per, double separation, double noise_sigma,
                                   std::uint64_t seed);

// SO(2) action about the origin. Tags are preserved.
PointCloud apply_rotation(const PointCloud& cloud, double angle);

// CSV: header x0..x{D-1}[,orbit_id][,semantic_id], then one row per point
// with coordinates printed to 9 significant digits.
void write_csv(std::ostream& out, const PointCloud& cloud);
PointCloud read_csv(std::istream& in);
void save_csv(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_csv(const std::filesystem::path& path);

}  // namespace manifold
}  // namespace fiberlab

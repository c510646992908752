#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <vector>

#include "fiberlab/manifold.hpp"

namespace fiberlab::topo {

// Largest cloud accepted for H1 computation; triangle counts grow as N^3.
inline constexpr std::size_t kMaxPointsH1 = 600;

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), upper_(n * (n > 0 ? n - 1 : 0) / 2, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return upper_[index(i, j)];
  }
  // i != j; negative or non-finite values are rejected later by validate().
  void set(std::size_t i, std::size_t j, double d) {
    if (i > j) std::swap(i, j);
    upper_[index(i, j)] = d;
  }
  double max() const;
  void validate() const;

 private:
  std::size_t index(std::size_t i, std::size_t j) const { return i * n_ - i * (i + 1) / 2 + (j - i - 1); }
  std::size_t n_ = 0;
  std::vector<double> upper_;
};

DistanceMatrix pairwise_distances(const PointCloud& cloud);

struct Simplex {
  double value = 0.0;
  std::uint8_t dim = 0;
  std::array<std::uint32_t, 3> vertices{};  // sorted; unused slots are 0
};

// Rips complex up to triangles, sorted by (value, dim, lexicographic vertices).
struct Filtration {
  std::size_t vertex_count = 0;
  double max_scale = 0.0;
  std::vector<Simplex> simplices;
};

Filtration rips_filtration(const DistanceMatrix& dmat, double max_scale);

struct Bar {
  double birth = 0.0;
  double death = std::numeric_limits<double>::infinity();
  // Set when the class was still alive at max_scale and the infinite death is
  // an artefact of truncating the filtration.
  bool truncated = false;

  bool infinite() const { return death == std::numeric_limits<double>::infinity(); }
};

struct PersistenceDiagram {
  std::array<std::vector<Bar>, 2> bars;  // H0, H1
  double max_scale = 0.0;
  std::size_t point_count = 0;
};

// H0 via union-find over edges, H1 by reducing the coboundary matrix of the
// edges (anti-transposed boundary matrix) in reverse filtration order with
// clearing of H0-paired edges. Zero-persistence bars are dropped.
PersistenceDiagram rips_persistence(const DistanceMatrix& dmat, double max_scale);

struct Betti {
  int b0 = 0;
  int b1 = 0;
  friend bool operator==(const Betti&, const Betti&) = default;
};

// Bars with birth <= scale < death.
Betti betti_at(const PersistenceDiagram& diagram, double scale);

// Midpoint of the widest gap among 0, finite H0 deaths, H1 births, H1 deaths
// and truncated deaths (counted at max_scale). A heuristic reading scale; a
// single point reads at 0.
double dominant_scale(const PersistenceDiagram& diagram);

// CSV with columns dim,birth,death; infinite deaths are written as "inf".
void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diagram);
void save_diagram_csv(const std::filesystem::path& path, const PersistenceDiagram& diagram);

}  // namespace fiberlab::topo

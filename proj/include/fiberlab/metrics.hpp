#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "fiberlab/manifold.hpp"
#include "fiberlab/net.hpp"

namespace fiberlab::metrics {

// Latent embeddings tagged with the class C (semantic_id) and the finest
// fiber the generator controls (orbit_id).
struct LatentSet {
  PointCloud embeddings;

  LatentSet() = default;
  // Throws DomainError unless both tag lists are present and sized to the cloud.
  explicit LatentSet(PointCloud cloud);

  std::size_t size() const { return embeddings.size(); }
  std::size_t dim() const { return embeddings.dim; }
  const std::vector<int>& semantic() const { return *embeddings.semantic_id; }
  const std::vector<int>& orbit() const { return *embeddings.orbit_id; }
};

enum class GroupBy { orbit, semantic };

// (mean squared distance of points to their group centroid) /
// (mean squared distance of group centroids to the global centroid).
double orbit_collapse_ratio(const LatentSet& latents, GroupBy group_by);

struct ProbeResult {
  double accuracy = 0.0;
  net::ReadoutHead head;  // acts on raw latents
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

inline constexpr int kProbeEpochs = 500;
inline constexpr double kProbeLearningRate = 0.5;

// Multinomial logistic readout trained by full-batch gradient descent on an
// 80/20 seeded split. Features are standardized with training statistics and
// the standardization is folded back into the returned head.
ProbeResult linear_probe(const LatentSet& latents, int epochs = kProbeEpochs, double lr = kProbeLearningRate,
                         std::uint64_t seed = 0);

// Class scores for one point; argmax with ties to the lowest index decides.
using Scorer = std::function<void(std::span<const double> x, std::span<double> scores)>;

// Fraction of sampled same-class pairs whose midpoint's argmax set excludes
// the pair's class. Pairs are drawn by picking a point, then a partner with
// the same predicted class.
double convexity_violation_rate(const Scorer& scorer, std::size_t classes, const PointCloud& points,
                                std::size_t pairs, std::uint64_t seed);
double convexity_violation_rate(const net::ReadoutHead& head, const LatentSet& latents, std::size_t pairs,
                                std::uint64_t seed);

struct Snapshot {
  int epoch = 0;
  LatentSet latents;
};

struct MetricSeries {
  std::vector<int> epochs;
  std::vector<double> expansion;      // mean pairwise distance
  std::vector<double> within_orbit;   // mean distance between points sharing orbit_id
  std::vector<double> within_class;   // mean distance between points sharing semantic_id
  std::vector<double> between_class;  // mean distance between points of different classes
  std::vector<double> snap_ratio;     // within_class / expansion
  std::vector<double> probe_accuracy; // NaN where no probe was run

  std::size_t size() const { return epochs.size(); }
  void validate() const;
};

MetricSeries expansion_trace(std::span<const Snapshot> snapshots);

// CSV: epoch,expansion,within_orbit,within_class,between_class,probe_accuracy
void write_series_csv(std::ostream& out, const MetricSeries& series);

struct PcaResult {
  PointCloud projected;
  std::vector<double> component_variance;  // variance along each extracted direction
  double total_variance = 0.0;
};

inline constexpr int kPcaIterations = 200;

// Centers the cloud and extracts the top-k directions by orthogonalized power
// iteration from a seeded start.
PcaResult pca(const PointCloud& cloud, std::size_t k, std::uint64_t seed = 0);
PointCloud pca_project(const PointCloud& cloud, std::size_t k, std::uint64_t seed = 0);

}  // namespace fiberlab::metrics

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fiberlab/bundle.hpp"
#include "fiberlab/errors.hpp"
#include "fiberlab/losses.hpp"
#include "fiberlab/metrics.hpp"
#include "fiberlab/net.hpp"
#include "fiberlab/topo.hpp"

namespace fiberlab::runner {

// Every problem found while parsing, each prefixed with its JSON path.
class ConfigError : public DomainError {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

enum class DatasetKind { bundle, circle, disjoint_circles };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::bundle;
  std::uint64_t seed = 1;

  // bundle
  int modulus = 5;
  int digit_range = 4;
  int height = 16;
  int width = 48;
  bundle::NuisanceConfig nuisance;
  std::size_t count = 2000;
  std::string path;  // load items from a VLHB file instead of generating

  // circle, disjoint_circles (points is per circle)
  std::size_t points = 200;
  double radius = 1.0;
  double noise = 0.0;
  std::size_t circles = 2;
  double separation = 4.0;

  bool labeled() const { return kind != DatasetKind::circle; }
};

struct EncoderConfig {
  std::vector<std::size_t> hidden{64};
  std::size_t latent = 16;
  bool gating = false;  // first hidden block becomes a softmax-gated expert mixture
  std::size_t experts = 2;
};

struct DecoderConfig {
  std::vector<std::size_t> hidden{64};
};

struct TrainingConfig {
  int epochs = 300;
  std::size_t batch = 64;
  double lr = 0.1;
  double weight_decay = 3e-3;  // L2 on weight matrices
  double temperature = net::kDefaultTemperature;
  std::uint64_t seed = 0;
};

struct DiagnosticsConfig {
  std::vector<int> snapshot_epochs;  // empty: ten evenly spaced epochs
  std::size_t topo_subsample = 400;
  double topo_scale_fraction = 0.5;  // Rips cutoff as a fraction of the largest latent distance
  int probe_epochs = metrics::kProbeEpochs;
  double probe_lr = metrics::kProbeLearningRate;
  std::uint64_t probe_seed = 0;
  std::size_t convexity_pairs = 10000;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  net::LossKind objective = net::LossKind::classification;
  EncoderConfig encoder;
  std::optional<DecoderConfig> decoder;
  TrainingConfig training;
  DiagnosticsConfig diagnostics;
  std::string output;

  // Throws ConfigError listing every violated requirement.
  void validate() const;
  // Snapshot epochs actually used: sorted, unique, always 0 and the last epoch.
  std::vector<int> snapshot_schedule() const;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Sorted keys, two-space indent, trailing newline. parse_config(canonical_json(c)) == c.
std::string canonical_json(const ExperimentConfig& config);
std::string canonical_dataset_json(const DatasetConfig& dataset);
std::string config_digest(const ExperimentConfig& config);

// Inputs as a (N, D) matrix with their tags, ready for training.
struct PreparedData {
  Tensor inputs;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<int> orbits;
  std::size_t classes = 0;
  std::optional<bundle::LabeledDataset> bundle;
  std::uint64_t digest = 0;
};

PreparedData prepare_data(const DatasetConfig& dataset);

struct ExperimentReport {
  ExperimentConfig config;
  std::string config_digest;
  std::uint64_t dataset_digest = 0;

  metrics::MetricSeries series;
  std::vector<double> epoch_loss;  // mean training loss per epoch, index 0 is epoch 1
  std::vector<metrics::Snapshot> snapshots;

  topo::PersistenceDiagram diagram;
  double dominant_scale = 0.0;
  topo::Betti betti;

  double collapse_orbit = 0.0;  // NaN when fewer than two groups
  double collapse_semantic = 0.0;
  double probe_accuracy = 0.0;  // NaN when unlabeled
  double convexity_probe = 0.0;
  double convexity_head = 0.0;  // NaN unless the objective trains a readout head
  double final_loss = 0.0;
  double wall_seconds = 0.0;

  net::Network encoder;
  std::optional<net::ReadoutHead> head;
  std::optional<metrics::ProbeResult> probe;

  const metrics::LatentSet& final_latents() const { return snapshots.back().latents; }
  double convexity_rate() const;
};

ExperimentReport run_experiment(const ExperimentConfig& config);
ExperimentReport run_experiment(const ExperimentConfig& config, const PreparedData& data);

// Latents of every input under the given encoder, tagged with the data's labels.
metrics::LatentSet encode(const net::Network& encoder, const PreparedData& data);

struct ComparisonCell {
  net::LossKind objective;
  std::uint64_t seed = 0;
  double probe_accuracy = 0.0;
  double collapse_orbit = 0.0;
  double collapse_semantic = 0.0;
  double convexity_rate = 0.0;
  double final_loss = 0.0;
  std::uint64_t dataset_digest = 0;
};

struct ObjectiveSummary {
  net::LossKind objective;
  double probe_accuracy = 0.0;
  double collapse_orbit = 0.0;
  double collapse_semantic = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonCell> cells;
  std::vector<ObjectiveSummary> medians;  // in config order
  std::vector<net::LossKind> ordering;    // by median probe accuracy, best first
  std::vector<ExperimentReport> reports;  // one per cell, same order as cells
};

// Runs every (config, seed) cell; the seed replaces training.seed.
ComparisonTable compare_objectives(const std::vector<ExperimentConfig>& configs, const std::vector<std::uint64_t>& seeds);

void write_comparison_csv(std::ostream& out, const ComparisonTable& table);
std::string ordering_string(const ComparisonTable& table);

// Writes metrics.csv, diagram.csv, latents_pca.svg and config.json into dir.
std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

void write_pca_svg(std::ostream& out, const metrics::LatentSet& latents);

}  // namespace fiberlab::runner

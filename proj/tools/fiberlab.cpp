// fiberlab command-line front end.
//
//   fiberlab generate --config exp.json --out data.vlhb [--seed S]
//   fiberlab train    --config exp.json --out report/ [--seed S] [--checkpoint enc.vlhn] [--latents z.csv]
//   fiberlab compare  --config 'configs/*.json' --seed 0,1,2 --out table.csv
//   fiberlab topo     cloud.csv [--out diagram.csv] [--subsample N] [--seed S] [--max-scale R]
//   fiberlab probe    latents.csv [--seed S]
//
// Exit status: 0 success, 1 invalid input, 2 runtime failure.

#include <glob.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "fiberlab/bundle.hpp"
#include "fiberlab/errors.hpp"
#include "fiberlab/manifold.hpp"
#include "fiberlab/metrics.hpp"
#include "fiberlab/runner.hpp"
#include "fiberlab/topo.hpp"
#include "json.hpp"

using namespace fiberlab;

namespace {

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (out.empty()) throw DomainError("no config files match " + pattern);
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_generate(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  auto cfg = runner::load_config(config);
  if (cfg.dataset.kind != runner::DatasetKind::bundle) throw DomainError("generate: config dataset must be a bundle");
  if (!cfg.dataset.path.empty()) throw DomainError("generate: config dataset already points at a file");
  if (seed) cfg.dataset.seed = *seed;
  const auto data = runner::prepare_data(cfg.dataset);
  bundle::save_dataset(out, *data.bundle);
  std::cout << "wrote " << data.bundle->items.size() << " items to " << out << " (digest " << std::hex << data.digest
            << std::dec << ")\n";
  return 0;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, std::string out,
              const std::string& checkpoint, const std::string& latents) {
  auto cfg = runner::load_config(config);
  if (seed) cfg.training.seed = *seed;
  if (out.empty()) out = cfg.output;
  if (out.empty()) throw DomainError("train: no output directory (use --out or set \"output\")");

  const auto report = runner::run_experiment(cfg);
  const auto files = runner::emit_report(report, out);
  if (!checkpoint.empty()) net::save_checkpoint(checkpoint, report.encoder);
  if (!latents.empty()) manifold::save_csv(latents, report.final_latents().embeddings);

  nlohmann::ordered_json summary;
  summary["objective"] = net::to_string(cfg.objective);
  summary["seed"] = cfg.training.seed;
  summary["config_digest"] = report.config_digest;
  summary["probe_accuracy"] = num(report.probe_accuracy);
  summary["collapse_orbit"] = num(report.collapse_orbit);
  summary["collapse_semantic"] = num(report.collapse_semantic);
  summary["convexity_rate"] = num(report.convexity_rate());
  summary["final_loss"] = num(report.final_loss);
  summary["betti_at_dominant_scale"] = {report.betti.b0, report.betti.b1};
  summary["dominant_scale"] = num(report.dominant_scale);
  summary["wall_seconds"] = num(report.wall_seconds);
  std::vector<std::string> paths;
  for (const auto& f : files) paths.push_back(f.string());
  summary["files"] = paths;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& patterns, const std::vector<std::uint64_t>& seeds,
                const std::string& out) {
  std::vector<runner::ExperimentConfig> configs;
  for (const auto& p : patterns)
    for (const auto& path : expand_glob(p)) configs.push_back(runner::load_config(path));
  const auto table = runner::compare_objectives(configs, seeds);
  std::ofstream file(out, std::ios::binary);
  if (!file) throw IoError("cannot write " + out);
  runner::write_comparison_csv(file, table);
  std::cout << "ordering: " << runner::ordering_string(table) << "\n";
  return 0;
}

int cmd_topo(const std::string& input, const std::string& out, std::size_t subsample, std::uint64_t seed,
             std::optional<double> max_scale) {
  const PointCloud cloud = manifold::load_csv(input);
  const PointCloud sub = subsample > 0 ? fiberlab::subsample(cloud, subsample, seed) : cloud;
  const auto dmat = topo::pairwise_distances(sub);
  const double cutoff = max_scale ? *max_scale : 0.5 * dmat.max();
  const auto diagram = topo::rips_persistence(dmat, cutoff);
  if (out.empty()) {
    topo::write_diagram_csv(std::cout, diagram);
  } else {
    topo::save_diagram_csv(out, diagram);
    const double scale = topo::dominant_scale(diagram);
    const auto b = topo::betti_at(diagram, scale);
    std::cout << "points " << sub.size() << ", cutoff " << num(cutoff) << ", dominant scale " << num(scale)
              << ", betti (" << b.b0 << ", " << b.b1 << ")\n";
  }
  return 0;
}

int cmd_probe(const std::string& input, std::uint64_t seed) {
  PointCloud cloud = manifold::load_csv(input);
  if (!cloud.semantic_id) throw DomainError("probe: " + input + " has no semantic_id column");
  if (!cloud.orbit_id) cloud.orbit_id = cloud.semantic_id;
  const metrics::LatentSet latents(std::move(cloud));
  const auto res = metrics::linear_probe(latents, metrics::kProbeEpochs, metrics::kProbeLearningRate, seed);
  std::cout << num(res.accuracy) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fiber-bundle representation laboratory"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, latents, input;
  std::vector<std::string> patterns;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::size_t subsample = 400;
  std::optional<double> max_scale;

  auto* gen = app.add_subcommand("generate", "sample a bundle dataset into a VLHB file");
  gen->add_option("--config", config, "experiment config (its dataset block is used)")->required();
  gen->add_option("--seed", seed, "override the dataset seed");
  gen->add_option("--out", out, "output .vlhb path")->required();

  auto* train = app.add_subcommand("train", "run one experiment and write its report");
  train->add_option("--config", config, "experiment config")->required();
  train->add_option("--seed", seed, "override the training seed");
  train->add_option("--out", out, "report directory (defaults to the config's output)");
  train->add_option("--checkpoint", checkpoint, "also save the trained encoder");
  train->add_option("--latents", latents, "also save the final latents as CSV");

  auto* cmp = app.add_subcommand("compare", "run configs x seeds and tabulate diagnostics");
  cmp->add_option("--config", patterns, "config file or glob (repeatable)")->required();
  cmp->add_option("--seed", seeds, "training seeds")->required()->delimiter(',');
  cmp->add_option("--out", out, "comparison CSV path")->required();

  auto* tp = app.add_subcommand("topo", "persistence diagram of a point-cloud CSV");
  tp->add_option("input", input, "point-cloud CSV")->required();
  tp->add_option("--out", out, "diagram CSV path (stdout when absent)");
  tp->add_option("--subsample", subsample, "seeded subsample size, 0 keeps every point");
  tp->add_option("--seed", seed, "subsample seed");
  tp->add_option("--max-scale", max_scale, "Rips cutoff (default half the largest distance)");

  auto* pr = app.add_subcommand("probe", "linear-probe accuracy of a latents CSV");
  pr->add_option("input", input, "latents CSV with a semantic_id column")->required();
  pr->add_option("--seed", seed, "split seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(config, seed, out);
    if (*train) return cmd_train(config, seed, out, checkpoint, latents);
    if (*cmp) return cmd_compare(patterns, seeds, out);
    if (*tp) return cmd_topo(input, out, subsample, seed.value_or(0), max_scale);
    if (*pr) return cmd_probe(input, seed.value_or(0));
  } catch (const runner::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DegenerateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

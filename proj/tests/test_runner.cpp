#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fiberlab/errors.hpp"
#include "fiberlab/runner.hpp"

using namespace fiberlab;
using namespace fiberlab::runner;
namespace fs = std::filesystem;

namespace {

// Small enough to train in well under a second.
const char* kTiny = R"({
  "objective": "classification",
  "dataset": {"kind": "bundle", "count": 120, "seed": 3},
  "encoder": {"hidden": [16], "latent": 4},
  "training": {"epochs": 4, "batch": 32},
  "diagnostics": {"snapshot_epochs": [2], "probe_epochs": 50, "topo_subsample": 60, "convexity_pairs": 500}
})";

ExperimentConfig tiny(std::string_view objective = "classification") {
  auto c = parse_config(kTiny);
  if (objective == "reconstruction") c.decoder = DecoderConfig{{8}};
  c.objective = objective == "classification" ? net::LossKind::classification
                : objective == "alignment"    ? net::LossKind::alignment
                : objective == "contrastive"  ? net::LossKind::contrastive
                                              : net::LossKind::reconstruction;
  c.validate();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fiberlab_test_" + name);
  fs::remove_all(dir);
  return dir;
}

bool mentions(const ConfigError& e, std::string_view text) {
  for (const auto& i : e.issues())
    if (i.find(text) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("minimal config gets defaults and a canonical form") {
  const auto c = parse_config(R"({"objective": "classification", "dataset": {"kind": "bundle"}})");
  CHECK(c.dataset.modulus == 5);
  CHECK(c.dataset.count == 2000);
  CHECK(c.dataset.height == 16);
  CHECK(c.dataset.width == 48);
  CHECK(c.encoder.hidden == std::vector<std::size_t>{64});
  CHECK(c.encoder.latent == 16);
  CHECK(c.training.epochs == 300);
  CHECK(c.training.batch == 64);
  CHECK(c.diagnostics.topo_subsample == 400);
  const std::string text = canonical_json(c);
  CHECK(canonical_json(parse_config(text)) == text);
  CHECK(config_digest(parse_config(text)) == config_digest(c));
  CHECK(config_digest(c) != config_digest(tiny()));
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    parse_config(R"({"objective": "classification", "dataset": {"kind": "bundle"}, "optimiser": "adam"})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "optimiser: unknown key"));
  }
  try {
    parse_config(R"({"objective": "classification", "dataset": {"kind": "bundle", "nuisance": {"blur": 1}},
                     "training": {"momentum": 0.9}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "dataset.nuisance.blur: unknown key"));
    CHECK(mentions(e, "training.momentum: unknown key"));
  }
}

TEST_CASE("type mismatches and missing keys name their path") {
  try {
    parse_config(R"({"dataset": {"kind": "bundle", "count": -5}, "training": {"epochs": "ten", "lr": true}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "objective: missing required key"));
    CHECK(mentions(e, "dataset.count: expected a nonnegative integer"));
    CHECK(mentions(e, "training.epochs: expected an integer"));
    CHECK(mentions(e, "training.lr: expected a number"));
  }
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"objective": "regression", "dataset": {"kind": "bundle"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"objective": "classification", "dataset": {"kind": "torus"}})"), ConfigError);
}

TEST_CASE("objective invariants") {
  try {
    parse_config(R"({"objective": "reconstruction", "dataset": {"kind": "bundle"}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "decoder: required"));
  }
  CHECK_THROWS_AS(parse_config(R"({"objective": "classification", "dataset": {"kind": "circle"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"objective": "alignment", "dataset": {"kind": "circle"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"objective": "contrastive", "dataset": {"kind": "disjoint_circles"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"objective": "contrastive", "dataset": {"kind": "bundle", "nuisance":
                  {"enable": {"translate": false, "rotate": false, "scale": false, "jitter": false, "noise": false}}}})"),
                  ConfigError);
  CHECK_NOTHROW(parse_config(R"({"objective": "reconstruction", "dataset": {"kind": "circle"}, "decoder": {}})"));
  CHECK_NOTHROW(parse_config(R"({"objective": "classification", "dataset": {"kind": "disjoint_circles"}})"));
  CHECK_THROWS_AS(parse_config(R"({"objective": "classification", "dataset": {"kind": "bundle", "width": 12}})"),
                  ConfigError);
}

TEST_CASE("snapshot schedule always spans the run") {
  auto c = tiny();
  CHECK(c.snapshot_schedule() == std::vector<int>{0, 2, 4});
  c.diagnostics.snapshot_epochs.clear();
  c.training.epochs = 20;
  CHECK(c.snapshot_schedule() == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20});
}

TEST_CASE("every objective runs end to end") {
  for (auto name : {"classification", "alignment", "contrastive", "reconstruction"}) {
    INFO(name);
    const auto rep = run_experiment(tiny(name));
    CHECK(rep.series.epochs == std::vector<int>{0, 2, 4});
    CHECK(rep.snapshots.size() == 3);
    CHECK(rep.epoch_loss.size() == 4);
    CHECK(std::isfinite(rep.final_loss));
    CHECK(rep.probe_accuracy >= 0.0);
    CHECK(rep.probe_accuracy <= 1.0);
    CHECK(rep.convexity_rate() == 0.0);
    CHECK(rep.diagram.point_count == 60);
    CHECK(rep.encoder.output_width() == 4);
    CHECK(rep.config_digest == config_digest(rep.config));
    CHECK(rep.head.has_value() == (std::string_view(name) == "classification"));
  }
}

TEST_CASE("zero epochs reports only the initial encoder") {
  auto c = tiny();
  c.training.epochs = 0;
  c.diagnostics.snapshot_epochs.clear();
  const auto rep = run_experiment(c);
  CHECK(rep.series.epochs == std::vector<int>{0});
  CHECK(rep.series.expansion.size() == 1);
  CHECK(rep.epoch_loss.empty());
  CHECK(rep.snapshots.size() == 1);
}

TEST_CASE("circle datasets train and report topology") {
  const auto c = parse_config(R"({"objective": "reconstruction", "dataset": {"kind": "circle", "points": 60},
    "encoder": {"hidden": [8], "latent": 2}, "decoder": {"hidden": [8]}, "training": {"epochs": 3, "batch": 16}})");
  const auto rep = run_experiment(c);
  CHECK(std::isnan(rep.probe_accuracy));
  CHECK(std::isnan(rep.collapse_semantic));
  CHECK(rep.diagram.point_count == 60);
}

TEST_CASE("reports are byte-identical across reruns") {
  const auto a = run_experiment(tiny("contrastive"));
  const auto b = run_experiment(tiny("contrastive"));
  const auto da = scratch_dir("rerun_a"), db = scratch_dir("rerun_b");
  const auto fa = emit_report(a, da), fb = emit_report(b, db);
  REQUIRE(fa.size() == 4);
  REQUIRE(fb.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(fa[i].filename() == fb[i].filename());
    CHECK(fs::exists(fa[i]));
    CHECK(slurp(fa[i]) == slurp(fb[i]));
  }
  CHECK(slurp(da / "config.json") == canonical_json(a.config));
  CHECK(slurp(da / "metrics.csv").rfind("epoch,expansion,within_orbit,within_class,between_class,probe_accuracy\n", 0) ==
        0);
  CHECK(slurp(da / "latents_pca.svg").find("<svg") == 0);
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("unwritable output directory names the directory") {
  const auto base = scratch_dir("blocked");
  fs::create_directories(base);
  std::ofstream(base / "file") << "x";
  const auto rep = run_experiment(tiny());
  const fs::path target = base / "file" / "report";
  const std::string name = target.string();
  CHECK_THROWS_WITH_AS(emit_report(rep, target), doctest::Contains(name.c_str()), IoError);
  fs::remove_all(base);
}

TEST_CASE("snapshots re-encode from a checkpoint") {
  const auto c = tiny();
  const auto rep = run_experiment(c);
  const auto dir = scratch_dir("ckpt");
  fs::create_directories(dir);
  net::save_checkpoint(dir / "enc.vlhn", rep.encoder);
  const auto reloaded = net::load_checkpoint(dir / "enc.vlhn");
  const auto latents = encode(reloaded, prepare_data(c.dataset));
  const auto& recorded = rep.final_latents().embeddings.coords;
  REQUIRE(latents.embeddings.coords.size() == recorded.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < recorded.size(); ++i)
    worst = std::max(worst, std::abs(latents.embeddings.coords[i] - recorded[i]));
  CHECK(worst <= 1e-12);
  fs::remove_all(dir);
}

TEST_CASE("divergent training aborts with the epoch index") {
  auto c = tiny();
  c.training.lr = 1e200;
  c.training.weight_decay = 0.0;
  CHECK_THROWS_WITH_AS(run_experiment(c), doctest::Contains("epoch 1"), NumericError);
}

TEST_CASE("compare_objectives contracts") {
  const auto c = tiny();
  CHECK_THROWS_AS(compare_objectives({c}, {}), DomainError);
  auto other = tiny("alignment");
  other.dataset.seed = 99;
  CHECK_THROWS_AS(compare_objectives({c, other}, {0}), DomainError);

  const auto table = compare_objectives({c}, {5});
  REQUIRE(table.cells.size() == 1);
  auto single = c;
  single.training.seed = 5;
  const auto rep = run_experiment(single);
  CHECK(table.cells[0].probe_accuracy == rep.probe_accuracy);
  CHECK(table.cells[0].collapse_semantic == rep.collapse_semantic);
  CHECK(table.cells[0].final_loss == rep.final_loss);
  CHECK(table.medians[0].probe_accuracy == rep.probe_accuracy);
  CHECK(table.ordering == std::vector<net::LossKind>{net::LossKind::classification});
}

TEST_CASE("objectives in a comparison consume identical data") {
  const auto table = compare_objectives({tiny("classification"), tiny("reconstruction")}, {0, 1});
  REQUIRE(table.cells.size() == 4);
  for (const auto& cell : table.cells) CHECK(cell.dataset_digest == table.cells[0].dataset_digest);
  std::ostringstream out;
  write_comparison_csv(out, table);
  const std::string csv = out.str();
  CHECK(csv.rfind("objective,seed,probe_accuracy,collapse_orbit,collapse_semantic,convexity_rate,final_loss\n", 0) == 0);
  CHECK(csv.find("classification,median,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

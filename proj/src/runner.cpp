#include "fiberlab/runner.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fiberlab/binary_io.hpp"
#include "fiberlab/manifold.hpp"
#include "fiberlab/rng.hpp"
#include "json.hpp"

namespace fiberlab::runner {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kPositiveStream = 0xC0117A57ULL;
constexpr std::uint64_t kTableStream = 0x7AB1EULL;
constexpr std::uint64_t kTopoStream = 0x70B0ULL;
constexpr std::uint64_t kShuffleStream = 0x5F1EULL;

std::string join_issues(const std::vector<std::string>& issues) {
  std::string s = "invalid config";
  for (const auto& i : issues) s += "\n  " + i;
  return s;
}

const char* kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::bundle:
      return "bundle";
    case DatasetKind::circle:
      return "circle";
    case DatasetKind::disjoint_circles:
      return "disjoint_circles";
  }
  return "?";
}

// Strict reader: records every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> issues;

  void fail(const std::string& path, const std::string& msg) { issues.push_back(path + ": " + msg); }

  bool object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return false;
    }
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(join(path, key), "unknown key");
    }
    return true;
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

  bool require(const json& obj, const std::string& path, const char* key) {
    if (obj.contains(key)) return true;
    fail(join(path, key), "missing required key");
    return false;
  }

  void read(const json& obj, const std::string& path, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_boolean()) return fail(join(path, key), "expected a boolean");
    out = v.get<bool>();
  }

  void read(const json& obj, const std::string& path, const char* key, double& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number()) return fail(join(path, key), "expected a number");
    out = v.get<double>();
  }

  void read(const json& obj, const std::string& path, const char* key, int& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) return fail(join(path, key), "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      return fail(join(path, key), "integer out of range");
    out = static_cast<int>(x);
  }

  void read(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
    if (!obj.contains(key)) return;
    if (!unsigned_value(obj.at(key), join(path, key), out)) return;
  }

  void read(const json& obj, const std::string& path, const char* key, std::string& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_string()) return fail(join(path, key), "expected a string");
    out = v.get<std::string>();
  }

  void read(const json& obj, const std::string& path, const char* key, std::vector<std::size_t>& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string p = join(path, key);
    if (!v.is_array()) return fail(p, "expected an array of nonnegative integers");
    std::vector<std::size_t> vals;
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::uint64_t x = 0;
      if (!unsigned_value(v[i], p + "[" + std::to_string(i) + "]", x)) return;
      vals.push_back(static_cast<std::size_t>(x));
    }
    out = std::move(vals);
  }

  void read(const json& obj, const std::string& path, const char* key, std::vector<int>& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string p = join(path, key);
    if (!v.is_array()) return fail(p, "expected an array of integers");
    std::vector<int> vals;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer()) return fail(p + "[" + std::to_string(i) + "]", "expected an integer");
      vals.push_back(v[i].get<int>());
    }
    out = std::move(vals);
  }

 private:
  bool unsigned_value(const json& v, const std::string& path, std::uint64_t& out) {
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
      return true;
    }
    if (v.is_number_integer()) {
      fail(path, "expected a nonnegative integer");
      return false;
    }
    fail(path, "expected an integer");
    return false;
  }
};

std::optional<net::LossKind> objective_from(std::string_view s) {
  for (auto k : {net::LossKind::reconstruction, net::LossKind::contrastive, net::LossKind::classification,
                 net::LossKind::alignment})
    if (s == net::to_string(k)) return k;
  return std::nullopt;
}

void read_nuisance(Reader& r, const json& j, const std::string& path, bundle::NuisanceConfig& n) {
  if (!r.object(j, path,
                {"max_translation", "rotation_range", "scale_min", "scale_max", "stroke_jitter", "noise_sigma",
                 "enable"}))
    return;
  r.read(j, path, "max_translation", n.max_translation);
  r.read(j, path, "rotation_range", n.rotation_range);
  r.read(j, path, "scale_min", n.scale_min);
  r.read(j, path, "scale_max", n.scale_max);
  r.read(j, path, "stroke_jitter", n.stroke_jitter);
  r.read(j, path, "noise_sigma", n.noise_sigma);
  if (j.contains("enable")) {
    const std::string ep = Reader::join(path, "enable");
    const json& e = j.at("enable");
    if (r.object(e, ep, {"translate", "rotate", "scale", "jitter", "noise"})) {
      r.read(e, ep, "translate", n.translate);
      r.read(e, ep, "rotate", n.rotate);
      r.read(e, ep, "scale", n.scale);
      r.read(e, ep, "jitter", n.jitter);
      r.read(e, ep, "noise", n.noise);
    }
  }
}

void read_dataset(Reader& r, const json& j, DatasetConfig& d) {
  const std::string path = "dataset";
  if (!j.is_object()) return r.fail(path, "expected an object");
  std::string kind;
  if (!r.require(j, path, "kind")) return;
  r.read(j, path, "kind", kind);
  if (kind == "bundle") {
    d.kind = DatasetKind::bundle;
    if (!r.object(j, path, {"kind", "seed", "modulus", "digit_range", "height", "width", "nuisance", "count", "path"}))
      return;
    r.read(j, path, "modulus", d.modulus);
    r.read(j, path, "digit_range", d.digit_range);
    r.read(j, path, "height", d.height);
    r.read(j, path, "width", d.width);
    r.read(j, path, "count", d.count);
    r.read(j, path, "path", d.path);
    if (j.contains("nuisance")) read_nuisance(r, j.at("nuisance"), "dataset.nuisance", d.nuisance);
  } else if (kind == "circle") {
    d.kind = DatasetKind::circle;
    if (!r.object(j, path, {"kind", "seed", "points", "radius", "noise"})) return;
    r.read(j, path, "points", d.points);
    r.read(j, path, "radius", d.radius);
    r.read(j, path, "noise", d.noise);
  } else if (kind == "disjoint_circles") {
    d.kind = DatasetKind::disjoint_circles;
    if (!r.object(j, path, {"kind", "seed", "circles", "points", "separation", "noise"})) return;
    r.read(j, path, "circles", d.circles);
    r.read(j, path, "points", d.points);
    r.read(j, path, "separation", d.separation);
    r.read(j, path, "noise", d.noise);
  } else if (!kind.empty()) {
    return r.fail("dataset.kind", "unknown dataset kind \"" + kind + "\" (bundle, circle, disjoint_circles)");
  }
  r.read(j, path, "seed", d.seed);
}

json nuisance_json(const bundle::NuisanceConfig& n) {
  return json{{"max_translation", n.max_translation},
              {"rotation_range", n.rotation_range},
              {"scale_min", n.scale_min},
              {"scale_max", n.scale_max},
              {"stroke_jitter", n.stroke_jitter},
              {"noise_sigma", n.noise_sigma},
              {"enable",
               {{"translate", n.translate},
                {"rotate", n.rotate},
                {"scale", n.scale},
                {"jitter", n.jitter},
                {"noise", n.noise}}}};
}

json dataset_json(const DatasetConfig& d) {
  json j{{"kind", kind_name(d.kind)}, {"seed", d.seed}};
  switch (d.kind) {
    case DatasetKind::bundle:
      j["modulus"] = d.modulus;
      j["digit_range"] = d.digit_range;
      j["height"] = d.height;
      j["width"] = d.width;
      j["count"] = d.count;
      j["nuisance"] = nuisance_json(d.nuisance);
      if (!d.path.empty()) j["path"] = d.path;
      break;
    case DatasetKind::circle:
      j["points"] = d.points;
      j["radius"] = d.radius;
      j["noise"] = d.noise;
      break;
    case DatasetKind::disjoint_circles:
      j["circles"] = d.circles;
      j["points"] = d.points;
      j["separation"] = d.separation;
      j["noise"] = d.noise;
      break;
  }
  return j;
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = dataset_json(c.dataset);
  j["objective"] = net::to_string(c.objective);
  j["encoder"] = {{"hidden", c.encoder.hidden},
                  {"latent", c.encoder.latent},
                  {"gating", c.encoder.gating},
                  {"experts", c.encoder.experts}};
  if (c.decoder) j["decoder"] = {{"hidden", c.decoder->hidden}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch", c.training.batch},
                   {"lr", c.training.lr},
                   {"weight_decay", c.training.weight_decay},
                   {"temperature", c.training.temperature},
                   {"seed", c.training.seed}};
  j["diagnostics"] = {{"snapshot_epochs", c.diagnostics.snapshot_epochs},
                      {"topo_subsample", c.diagnostics.topo_subsample},
                      {"topo_scale_fraction", c.diagnostics.topo_scale_fraction},
                      {"probe_epochs", c.diagnostics.probe_epochs},
                      {"probe_lr", c.diagnostics.probe_lr},
                      {"probe_seed", c.diagnostics.probe_seed},
                      {"convexity_pairs", c.diagnostics.convexity_pairs}};
  if (!c.output.empty()) j["output"] = c.output;
  return j;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Re-throws the in-flight exception as the same type with a prefix.
[[noreturn]] void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const DomainError& e) {
    throw DomainError(ctx + e.what());
  } catch (const NumericError& e) {
    throw NumericError(ctx + e.what());
  } catch (const DegenerateError& e) {
    throw DegenerateError(ctx + e.what());
  } catch (const RenderError& e) {
    throw RenderError(ctx + e.what());
  } catch (const IoError& e) {
    throw IoError(ctx + e.what());
  } catch (const UsageError& e) {
    throw UsageError(ctx + e.what());
  }
}

struct Model {
  net::Network net;
  std::size_t encoder_layers = 0;
};

std::vector<net::LayerSpec> encoder_layers(const EncoderConfig& enc, std::size_t input) {
  std::vector<net::LayerSpec> layers;
  std::size_t prev = input;
  for (std::size_t i = 0; i < enc.hidden.size(); ++i) {
    const std::size_t h = enc.hidden[i];
    if (i == 0 && enc.gating) {
      layers.push_back(net::LayerSpec::gate(prev, h, enc.experts, {}));
    } else {
      layers.push_back(net::LayerSpec::dense(prev, h));
      layers.push_back(net::LayerSpec::relu(h));
    }
    prev = h;
  }
  layers.push_back(net::LayerSpec::dense(prev, enc.latent));
  return layers;
}

Model build_model(const ExperimentConfig& cfg, const PreparedData& data) {
  auto layers = encoder_layers(cfg.encoder, data.inputs.cols());
  const std::size_t enc_count = layers.size();
  if (cfg.objective == net::LossKind::classification) {
    layers.push_back(net::LayerSpec::dense(cfg.encoder.latent, data.classes));
  } else if (cfg.objective == net::LossKind::reconstruction) {
    std::size_t prev = cfg.encoder.latent;
    for (std::size_t h : cfg.decoder->hidden) {
      layers.push_back(net::LayerSpec::dense(prev, h));
      layers.push_back(net::LayerSpec::relu(h));
      prev = h;
    }
    layers.push_back(net::LayerSpec::dense(prev, data.inputs.cols()));
  }
  return {net::Network::initialize(std::move(layers), cfg.training.seed), enc_count};
}

net::Network prefix(const net::Network& full, std::size_t count) {
  std::vector<net::LayerSpec> layers(full.layers().begin(), full.layers().begin() + static_cast<std::ptrdiff_t>(count));
  net::ParamStore params(full.params().begin(), full.params().begin() + static_cast<std::ptrdiff_t>(count));
  return net::Network(std::move(layers), std::move(params), full.seed());
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), src.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto s = src.row(rows[r]);
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

// Second views: fresh nuisance draws of the same (a, b), one stream per epoch.
Tensor positives_for(const bundle::LabeledDataset& ds, std::span<const std::size_t> rows, std::uint64_t seed,
                     int epoch) {
  const std::size_t width = static_cast<std::size_t>(ds.spec.pixel_count());
  Tensor out({rows.size(), width});
  const std::uint64_t stream = Rng::derive(seed ^ kPositiveStream, static_cast<std::uint64_t>(epoch)).next();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& item = ds.items[rows[r]];
    Rng rng(Rng::derive(stream, rows[r]));
    const auto draw = bundle::sample_draw(ds.spec.nuisance(), rng);
    const auto obs = bundle::render_expression(item.a, item.b, draw, ds.spec);
    std::copy(obs.pixels.begin(), obs.pixels.end(), out.row(r).begin());
  }
  return out;
}

net::Objective objective_for(const ExperimentConfig& cfg, const PreparedData& data, const Tensor& x,
                             std::span<const std::size_t> rows, const Tensor& table, int epoch) {
  switch (cfg.objective) {
    case net::LossKind::reconstruction:
      return net::Objective::reconstruction(x);
    case net::LossKind::contrastive:
      return net::Objective::contrastive(positives_for(*data.bundle, rows, cfg.training.seed, epoch),
                                         cfg.training.temperature);
    case net::LossKind::classification:
    case net::LossKind::alignment: {
      std::vector<int> y(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) y[r] = data.labels[rows[r]];
      if (cfg.objective == net::LossKind::classification) return net::Objective::classification(std::move(y));
      return net::Objective::alignment(std::move(y), table, cfg.training.temperature);
    }
  }
  throw UsageError("unknown objective");
}

double safe_collapse(const metrics::LatentSet& ls, metrics::GroupBy g) {
  try {
    return metrics::orbit_collapse_ratio(ls, g);
  } catch (const DegenerateError&) {
    return kNaN;
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues) : DomainError(join_issues(issues)), issues_(std::move(issues)) {}

void ExperimentConfig::validate() const {
  std::vector<std::string> issues;
  const auto fail = [&](const std::string& path, const std::string& msg) { issues.push_back(path + ": " + msg); };

  switch (dataset.kind) {
    case DatasetKind::bundle:
      try {
        bundle::BundleSpec(dataset.modulus, dataset.digit_range, dataset.height, dataset.width, dataset.nuisance);
      } catch (const std::exception& e) {
        fail("dataset", e.what());
      }
      if (dataset.count < 1) fail("dataset.count", "must be >= 1");
      break;
    case DatasetKind::circle:
      if (dataset.points < 3) fail("dataset.points", "must be >= 3");
      if (!(dataset.radius > 0.0)) fail("dataset.radius", "must be positive");
      if (!(dataset.noise >= 0.0)) fail("dataset.noise", "must be nonnegative");
      break;
    case DatasetKind::disjoint_circles:
      if (dataset.circles < 1) fail("dataset.circles", "must be >= 1");
      if (dataset.points < 3) fail("dataset.points", "must be >= 3");
      if (!(dataset.separation > 2.0)) fail("dataset.separation", "must exceed 2 so unit circles stay disjoint");
      if (!(dataset.noise >= 0.0)) fail("dataset.noise", "must be nonnegative");
      break;
  }

  const char* obj = net::to_string(objective);
  if (objective == net::LossKind::reconstruction && !decoder)
    fail("decoder", "required by the reconstruction objective");
  if (objective != net::LossKind::reconstruction && decoder)
    fail("decoder", std::string("not used by the ") + obj + " objective");
  if ((objective == net::LossKind::classification || objective == net::LossKind::alignment) && !dataset.labeled())
    fail("objective", std::string(obj) + " needs labels; dataset kind " + kind_name(dataset.kind) + " has none");
  if (objective == net::LossKind::contrastive) {
    if (dataset.kind != DatasetKind::bundle) {
      fail("objective", "contrastive needs nuisance re-draws; only bundle datasets provide them");
    } else {
      const auto& n = dataset.nuisance;
      const bool any = (n.translate && n.max_translation > 0) || (n.rotate && n.rotation_range > 0) ||
                       (n.scale && n.scale_min < n.scale_max) || (n.jitter && n.stroke_jitter > 0) ||
                       (n.noise && n.noise_sigma > 0);
      if (!any) fail("dataset.nuisance", "contrastive needs at least one active nuisance transform");
    }
  }

  if (encoder.latent < 1) fail("encoder.latent", "must be >= 1");
  for (std::size_t i = 0; i < encoder.hidden.size(); ++i)
    if (encoder.hidden[i] < 1) fail("encoder.hidden[" + std::to_string(i) + "]", "must be >= 1");
  if (encoder.gating) {
    if (encoder.hidden.empty()) fail("encoder.gating", "needs at least one hidden layer");
    if (encoder.experts < 2) fail("encoder.experts", "must be >= 2");
  }
  if (decoder)
    for (std::size_t i = 0; i < decoder->hidden.size(); ++i)
      if (decoder->hidden[i] < 1) fail("decoder.hidden[" + std::to_string(i) + "]", "must be >= 1");

  if (training.epochs < 0) fail("training.epochs", "must be >= 0");
  if (training.batch < 1) fail("training.batch", "must be >= 1");
  if (!(training.lr > 0.0) || !std::isfinite(training.lr)) fail("training.lr", "must be positive and finite");
  if (!(training.weight_decay >= 0.0) || !std::isfinite(training.weight_decay))
    fail("training.weight_decay", "must be finite and >= 0");
  if (!(training.temperature > 0.0) || !std::isfinite(training.temperature))
    fail("training.temperature", "must be positive and finite");

  for (std::size_t i = 0; i < diagnostics.snapshot_epochs.size(); ++i) {
    const int e = diagnostics.snapshot_epochs[i];
    if (e < 0 || e > training.epochs)
      fail("diagnostics.snapshot_epochs[" + std::to_string(i) + "]", "must lie in [0, training.epochs]");
  }
  if (diagnostics.topo_subsample < 2 || diagnostics.topo_subsample > topo::kMaxPointsH1)
    fail("diagnostics.topo_subsample", "must lie in [2, " + std::to_string(topo::kMaxPointsH1) + "]");
  if (!(diagnostics.topo_scale_fraction > 0.0 && diagnostics.topo_scale_fraction <= 1.0))
    fail("diagnostics.topo_scale_fraction", "must lie in (0, 1]");
  if (diagnostics.probe_epochs < 1) fail("diagnostics.probe_epochs", "must be >= 1");
  if (!(diagnostics.probe_lr > 0.0)) fail("diagnostics.probe_lr", "must be positive");
  if (diagnostics.convexity_pairs < 1) fail("diagnostics.convexity_pairs", "must be >= 1");

  if (!issues.empty()) throw ConfigError(std::move(issues));
}

std::vector<int> ExperimentConfig::snapshot_schedule() const {
  std::set<int> epochs{0, training.epochs};
  if (diagnostics.snapshot_epochs.empty()) {
    for (int k = 1; k < 10; ++k) epochs.insert(training.epochs * k / 10);
  } else {
    epochs.insert(diagnostics.snapshot_epochs.begin(), diagnostics.snapshot_epochs.end());
  }
  return {epochs.begin(), epochs.end()};
}

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("(root): malformed JSON: ") + e.what()});
  }
  Reader r;
  ExperimentConfig c;
  if (!r.object(j, "(root)", {"dataset", "objective", "encoder", "decoder", "training", "diagnostics", "output"}))
    throw ConfigError(std::move(r.issues));

  if (r.require(j, "", "dataset")) read_dataset(r, j.at("dataset"), c.dataset);
  if (r.require(j, "", "objective")) {
    std::string obj;
    r.read(j, "", "objective", obj);
    if (j.at("objective").is_string()) {
      if (auto k = objective_from(obj))
        c.objective = *k;
      else
        r.fail("objective", "unknown objective \"" + obj + "\" (reconstruction, contrastive, classification, alignment)");
    }
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    if (r.object(e, "encoder", {"hidden", "latent", "gating", "experts"})) {
      r.read(e, "encoder", "hidden", c.encoder.hidden);
      r.read(e, "encoder", "latent", c.encoder.latent);
      r.read(e, "encoder", "gating", c.encoder.gating);
      r.read(e, "encoder", "experts", c.encoder.experts);
    }
  }
  if (j.contains("decoder")) {
    const json& d = j.at("decoder");
    c.decoder.emplace();
    if (r.object(d, "decoder", {"hidden"})) r.read(d, "decoder", "hidden", c.decoder->hidden);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    if (r.object(t, "training", {"epochs", "batch", "lr", "weight_decay", "temperature", "seed"})) {
      r.read(t, "training", "weight_decay", c.training.weight_decay);
      r.read(t, "training", "epochs", c.training.epochs);
      r.read(t, "training", "batch", c.training.batch);
      r.read(t, "training", "lr", c.training.lr);
      r.read(t, "training", "temperature", c.training.temperature);
      r.read(t, "training", "seed", c.training.seed);
    }
  }
  if (j.contains("diagnostics")) {
    const json& d = j.at("diagnostics");
    const std::string p = "diagnostics";
    if (r.object(d, p,
                 {"snapshot_epochs", "topo_subsample", "topo_scale_fraction", "probe_epochs", "probe_lr", "probe_seed",
                  "convexity_pairs"})) {
      r.read(d, p, "snapshot_epochs", c.diagnostics.snapshot_epochs);
      r.read(d, p, "topo_subsample", c.diagnostics.topo_subsample);
      r.read(d, p, "topo_scale_fraction", c.diagnostics.topo_scale_fraction);
      r.read(d, p, "probe_epochs", c.diagnostics.probe_epochs);
      r.read(d, p, "probe_lr", c.diagnostics.probe_lr);
      r.read(d, p, "probe_seed", c.diagnostics.probe_seed);
      r.read(d, p, "convexity_pairs", c.diagnostics.convexity_pairs);
    }
  }
  r.read(j, "", "output", c.output);

  if (!r.issues.empty()) throw ConfigError(std::move(r.issues));
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    std::vector<std::string> issues;
    for (const auto& i : e.issues()) issues.push_back(path.string() + ": " + i);
    throw ConfigError(std::move(issues));
  }
}

std::string canonical_json(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string canonical_dataset_json(const DatasetConfig& dataset) { return dataset_json(dataset).dump(); }

std::string config_digest(const ExperimentConfig& config) {
  const std::string text = canonical_json(config);
  return hex64(io::fnv1a(text.data(), text.size()));
}

PreparedData prepare_data(const DatasetConfig& d) {
  PreparedData out;
  switch (d.kind) {
    case DatasetKind::bundle: {
      const bundle::BundleSpec spec(d.modulus, d.digit_range, d.height, d.width, d.nuisance);
      bundle::LabeledDataset ds = d.path.empty() ? bundle::sample_dataset(spec, d.count, d.seed) : bundle::load_dataset(d.path);
      if (!d.path.empty()) {
        const auto& s = ds.spec;
        if (s.modulus() != spec.modulus() || s.digit_range() != spec.digit_range() ||
            s.canvas_height() != spec.canvas_height() || s.canvas_width() != spec.canvas_width() ||
            nuisance_json(s.nuisance()) != nuisance_json(spec.nuisance()))
          throw DomainError("dataset file " + d.path + " was generated with a different bundle spec");
      }
      const std::size_t width = static_cast<std::size_t>(spec.pixel_count());
      out.inputs = Tensor({ds.items.size(), width});
      for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const auto& item = ds.items[i];
        std::copy(item.pixels.begin(), item.pixels.end(), out.inputs.row(i).begin());
        out.labels.push_back(item.label.value);
        out.orbits.push_back(item.a * (spec.digit_range() + 1) + item.b);
      }
      out.classes = static_cast<std::size_t>(spec.modulus());
      out.digest = bundle::dataset_digest(ds);
      out.bundle = std::move(ds);
      break;
    }
    case DatasetKind::circle:
    case DatasetKind::disjoint_circles: {
      const PointCloud pc = d.kind == DatasetKind::circle
                                ? manifold::sample_circle(d.points, d.radius, d.noise, d.seed)
                                : manifold::sample_disjoint_circles(d.circles, d.points, d.separation, d.noise, d.seed);
      out.inputs = Tensor({pc.size(), pc.dim}, pc.coords);
      if (d.kind == DatasetKind::disjoint_circles) {
        out.labels = *pc.orbit_id;
        out.orbits = *pc.orbit_id;
        out.classes = d.circles;
      } else {
        out.orbits.assign(pc.size(), 0);
      }
      out.digest = io::fnv1a(pc.coords.data(), pc.coords.size() * sizeof(double));
      break;
    }
  }
  return out;
}

metrics::LatentSet encode(const net::Network& encoder, const PreparedData& data) {
  const Tensor z = net::predict(encoder, data.inputs);
  PointCloud pc(z.cols(), z.values());
  pc.orbit_id = data.orbits;
  pc.semantic_id = data.labels.empty() ? std::vector<int>(data.orbits.size(), 0) : data.labels;
  return metrics::LatentSet(std::move(pc));
}

double ExperimentReport::convexity_rate() const {
  double r = std::isnan(convexity_probe) ? 0.0 : convexity_probe;
  if (!std::isnan(convexity_head)) r = std::max(r, convexity_head);
  return r;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  try {
    return run_experiment(config, prepare_data(config.dataset));
  } catch (...) {
    rethrow_with_context(std::string("experiment [") + net::to_string(config.objective) + ", seed " +
                         std::to_string(config.training.seed) + "]: ");
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const PreparedData& data) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (data.inputs.rows() < 2) throw DomainError("run_experiment: dataset needs at least two items");

  ExperimentReport rep;
  rep.config = cfg;
  rep.config_digest = config_digest(cfg);
  rep.dataset_digest = data.digest;

  Model model = build_model(cfg, data);
  Tensor table;
  if (cfg.objective == net::LossKind::alignment) {
    Rng rng(Rng::derive(cfg.training.seed, kTableStream));
    table = Tensor({data.classes, cfg.encoder.latent});
    for (double& v : table.values()) v = rng.normal();
  }

  const bool labeled = !data.labels.empty() && data.classes >= 2;
  const auto snapshot = [&](int epoch) {
    metrics::Snapshot snap{epoch, encode(prefix(model.net, model.encoder_layers), data)};
    double acc = kNaN;
    if (labeled) {
      try {
        auto probe = metrics::linear_probe(snap.latents, cfg.diagnostics.probe_epochs, cfg.diagnostics.probe_lr,
                                           cfg.diagnostics.probe_seed);
        acc = probe.accuracy;
        if (epoch == cfg.training.epochs) rep.probe = std::move(probe);
      } catch (const DegenerateError&) {
      }
    }
    rep.series.probe_accuracy.push_back(acc);
    rep.snapshots.push_back(std::move(snap));
  };

  const std::vector<int> schedule = cfg.snapshot_schedule();
  std::size_t next_snap = 0;
  if (schedule[next_snap] == 0) {
    snapshot(0);
    ++next_snap;
  }

  const std::size_t N = data.inputs.rows();
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  for (int epoch = 1; epoch <= cfg.training.epochs; ++epoch) {
    Rng shuffle(Rng::derive(cfg.training.seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch)));
    shuffle.shuffle(order.begin(), order.end());
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < N; start += cfg.training.batch) {
        const std::size_t B = std::min(cfg.training.batch, N - start);
        const std::span<const std::size_t> rows(order.data() + start, B);
        const Tensor x = gather_rows(data.inputs, rows);
        auto value = net::evaluate(model.net, x, objective_for(cfg, data, x, rows, table, epoch));
        if (!std::isfinite(value.loss)) throw NumericError("non-finite training loss");
        net::add_weight_decay(value.grads, model.net, cfg.training.weight_decay);
        model.net = net::sgd_step(model.net, value.grads, cfg.training.lr);
        if (cfg.objective == net::LossKind::alignment) net::sgd_update(table, value.table_grad, cfg.training.lr);
        total += value.loss * static_cast<double>(B);
      }
    } catch (const NumericError& e) {
      throw NumericError("training aborted at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    rep.epoch_loss.push_back(total / static_cast<double>(N));
    if (next_snap < schedule.size() && schedule[next_snap] == epoch) {
      snapshot(epoch);
      ++next_snap;
    }
  }

  // Series over the captured snapshots; a lone snapshot is traced against itself.
  {
    std::vector<metrics::Snapshot> trace = rep.snapshots;
    if (trace.size() == 1) {
      trace.push_back(trace.front());
      trace.back().epoch += 1;
    }
    auto probe = std::move(rep.series.probe_accuracy);
    rep.series = metrics::expansion_trace(trace);
    rep.series.probe_accuracy = std::move(probe);
    if (rep.snapshots.size() == 1) {
      for (auto* s : {&rep.series.expansion, &rep.series.within_orbit, &rep.series.within_class,
                      &rep.series.between_class, &rep.series.snap_ratio})
        s->resize(1);
      rep.series.epochs.resize(1);
    }
    rep.series.validate();
  }

  rep.encoder = prefix(model.net, model.encoder_layers);
  const metrics::LatentSet& latents = rep.final_latents();

  const PointCloud sub = subsample(latents.embeddings, cfg.diagnostics.topo_subsample,
                                   Rng::derive(cfg.training.seed, kTopoStream).next());
  const auto dmat = topo::pairwise_distances(sub);
  const double max_scale = cfg.diagnostics.topo_scale_fraction * dmat.max();
  rep.diagram = topo::rips_persistence(dmat, max_scale);
  try {
    rep.dominant_scale = topo::dominant_scale(rep.diagram);
  } catch (const DegenerateError&) {
    rep.dominant_scale = 0.0;
  }
  rep.betti = topo::betti_at(rep.diagram, rep.dominant_scale);

  rep.collapse_orbit = safe_collapse(latents, metrics::GroupBy::orbit);
  rep.collapse_semantic = safe_collapse(latents, metrics::GroupBy::semantic);
  rep.probe_accuracy = rep.probe ? rep.probe->accuracy : kNaN;
  const std::uint64_t convexity_seed = Rng::derive(cfg.training.seed, 0xC0FFEEULL).next();
  rep.convexity_probe =
      rep.probe ? metrics::convexity_violation_rate(rep.probe->head, latents, cfg.diagnostics.convexity_pairs,
                                                    convexity_seed)
                : kNaN;
  rep.convexity_head = kNaN;
  if (cfg.objective == net::LossKind::classification) {
    rep.head = net::head_from_dense(model.net, model.net.layers().size() - 1);
    rep.convexity_head =
        metrics::convexity_violation_rate(*rep.head, latents, cfg.diagnostics.convexity_pairs, convexity_seed);
  }

  // Loss of the final model over the whole dataset, batched as in training.
  {
    double total = 0.0;
    for (std::size_t start = 0; start < N; start += cfg.training.batch) {
      const std::size_t B = std::min(cfg.training.batch, N - start);
      const std::span<const std::size_t> rows(order.data() + start, B);
      const Tensor x = gather_rows(data.inputs, rows);
      total += net::objective_loss(model.net, x, objective_for(cfg, data, x, rows, table, 0)) * static_cast<double>(B);
    }
    rep.final_loss = total / static_cast<double>(N);
  }

  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

ComparisonTable compare_objectives(const std::vector<ExperimentConfig>& configs,
                                   const std::vector<std::uint64_t>& seeds) {
  if (configs.empty()) throw DomainError("compare_objectives: no configs");
  if (seeds.empty()) throw DomainError("compare_objectives: empty seed list");
  const std::string shared = canonical_dataset_json(configs.front().dataset);
  for (const auto& c : configs) {
    c.validate();
    if (canonical_dataset_json(c.dataset) != shared)
      throw DomainError("compare_objectives: configs do not share the same dataset block");
  }

  ComparisonTable table;
  std::optional<std::uint64_t> digest;
  for (const auto& base : configs) {
    std::vector<double> probe, orbit, semantic;
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.training.seed = seed;
      ExperimentReport rep = run_experiment(cfg);
      if (digest && *digest != rep.dataset_digest)
        throw UsageError("compare_objectives: dataset digest differs between cells");
      digest = rep.dataset_digest;
      table.cells.push_back({cfg.objective, seed, rep.probe_accuracy, rep.collapse_orbit, rep.collapse_semantic,
                             rep.convexity_rate(), rep.final_loss, rep.dataset_digest});
      probe.push_back(rep.probe_accuracy);
      orbit.push_back(rep.collapse_orbit);
      semantic.push_back(rep.collapse_semantic);
      table.reports.push_back(std::move(rep));
    }
    table.medians.push_back({base.objective, median(probe), median(orbit), median(semantic)});
  }

  std::vector<std::size_t> idx(table.medians.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return table.medians[a].probe_accuracy > table.medians[b].probe_accuracy;
  });
  for (std::size_t i : idx) table.ordering.push_back(table.medians[i].objective);
  return table;
}

void write_comparison_csv(std::ostream& out, const ComparisonTable& table) {
  out << "objective,seed,probe_accuracy,collapse_orbit,collapse_semantic,convexity_rate,final_loss\n";
  for (const auto& c : table.cells)
    out << net::to_string(c.objective) << ',' << c.seed << ',' << fmt(c.probe_accuracy) << ',' << fmt(c.collapse_orbit)
        << ',' << fmt(c.collapse_semantic) << ',' << fmt(c.convexity_rate) << ',' << fmt(c.final_loss) << '\n';
  for (const auto& m : table.medians)
    out << net::to_string(m.objective) << ",median," << fmt(m.probe_accuracy) << ',' << fmt(m.collapse_orbit) << ','
        << fmt(m.collapse_semantic) << ",,\n";
}

std::string ordering_string(const ComparisonTable& table) {
  std::string s;
  for (std::size_t i = 0; i < table.ordering.size(); ++i) {
    if (i > 0) s += " >= ";
    s += net::to_string(table.ordering[i]);
  }
  return s;
}

void write_pca_svg(std::ostream& out, const metrics::LatentSet& latents) {
  static constexpr std::array<const char*, 10> palette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                       "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double size = 480.0, margin = 24.0;
  const std::size_t N = latents.size();
  std::vector<double> xs(N, 0.0), ys(N, 0.0);
  try {
    const std::size_t k = std::min<std::size_t>(2, latents.dim());
    const PointCloud proj = metrics::pca_project(latents.embeddings, k);
    for (std::size_t i = 0; i < N; ++i) {
      xs[i] = proj.point(i)[0];
      if (k > 1) ys[i] = proj.point(i)[1];
    }
  } catch (const std::exception&) {
    // zero-variance or too few points: everything stays at the origin
  }
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  const double xr = N ? std::max(*xmax - *xmin, 1e-12) : 1.0, yr = N ? std::max(*ymax - *ymin, 1e-12) : 1.0;
  const double x0 = N ? *xmin : 0.0, y0 = N ? *ymin : 0.0;

  char buf[160];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"480\" height=\"480\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%.0f\" y=\"%.0f\" width=\"%.0f\" height=\"%.0f\" fill=\"none\" stroke=\"#444\"/>\n",
                margin / 2, margin / 2, size - margin, size - margin);
  out << buf;
  for (std::size_t i = 0; i < N; ++i) {
    const double px = margin + (xs[i] - x0) / xr * (size - 2 * margin);
    const double py = size - margin - (ys[i] - y0) / yr * (size - 2 * margin);
    const int c = latents.semantic()[i];
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\" fill-opacity=\"0.7\"/>\n", px,
                  py, palette[static_cast<std::size_t>(c) % palette.size()]);
    out << buf;
  }
  out << "</svg>\n";
}

std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));

  const std::vector<std::filesystem::path> files{dir / "metrics.csv", dir / "diagram.csv", dir / "latents_pca.svg",
                                                 dir / "config.json"};
  {
    auto out = open_output(files[0]);
    metrics::write_series_csv(out, report.series);
  }
  {
    auto out = open_output(files[1]);
    topo::write_diagram_csv(out, report.diagram);
  }
  {
    auto out = open_output(files[2]);
    write_pca_svg(out, report.final_latents());
  }
  {
    auto out = open_output(files[3]);
    out << canonical_json(report.config);
  }
  for (const auto& f : files) {
    std::ifstream check(f);
    if (!check) throw IoError("failed writing into directory " + dir.string());
  }
  return files;
}

}  // namespace fiberlab::runner

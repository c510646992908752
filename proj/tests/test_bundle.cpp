#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fiberlab/bundle.hpp"
#include "fiberlab/errors.hpp"

using namespace fiberlab;
using namespace fiberlab::bundle;

namespace {

BundleSpec default_spec(int n = 5, int digit_range = 4) { return BundleSpec(n, digit_range, 16, 48); }

BundleSpec clean_spec(int n = 5, int digit_range = 4) { return BundleSpec(n, digit_range, 16, 48, NuisanceConfig::none()); }

double l2(const Observation& x, const Observation& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double d = static_cast<double>(x.pixels[i]) - static_cast<double>(y.pixels[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("semantic label is (a + b) mod n") {
  CHECK(semantic_label(2, 4, 5).value == 1);
  CHECK(semantic_label(0, 0, 7).value == 0);
  CHECK(semantic_label(9, 8, 10).value == 7);
  CHECK_THROWS_AS(semantic_label(1, 1, 1), DomainError);
  CHECK_THROWS_AS(semantic_label(-1, 1, 5), DomainError);
}

TEST_CASE("BundleSpec validation") {
  CHECK_THROWS_AS(BundleSpec(1, 4, 16, 48), DomainError);
  CHECK_THROWS_AS(BundleSpec(5, 3, 16, 48), DomainError);  // digit_range < n - 1
  CHECK_THROWS_AS(BundleSpec(5, 4, 7, 48), DomainError);   // 7 rows * 1.1 > 7
  CHECK_THROWS_AS(BundleSpec(5, 4, 16, 18), DomainError);  // 17 px * 1.1 > 18
  CHECK_NOTHROW(BundleSpec(5, 4, 8, 19));
  CHECK_THROWS_AS(BundleSpec(5, 4, 16, 48, {}, 2), DomainError);
  NuisanceConfig bad;
  bad.scale_min = 1.2;
  CHECK_THROWS_AS(BundleSpec(5, 4, 16, 48, bad), DomainError);
  bad = {};
  bad.stroke_jitter = 1.5;
  CHECK_THROWS_AS(BundleSpec(5, 4, 16, 48, bad), DomainError);
  bad = {};
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(BundleSpec(5, 4, 16, 48, bad), DomainError);
  // Multi-digit operands widen the expression: "12+12" is 5 glyphs = 29 px.
  CHECK_THROWS_AS(BundleSpec(5, 12, 16, 31), DomainError);
  CHECK_NOTHROW(BundleSpec(5, 12, 16, 32));
}

TEST_CASE("identity render is deterministic and places the glyph strip") {
  const auto spec = default_spec();
  const auto a = render_expression(1, 2, NuisanceDraw::identity(), spec);
  const auto b = render_expression(1, 2, NuisanceDraw::identity(), spec);
  CHECK(a.pixels.size() == 16u * 48u);
  CHECK(a.height == 16);
  CHECK(a.width == 48);
  CHECK(a.pixels == b.pixels);
  CHECK(std::all_of(a.pixels.begin(), a.pixels.end(), [](float p) { return p >= 0.0f && p <= 1.0f; }));
  CHECK(a.label.value == 3);

  const auto strip = layout_expression(1, 2);
  const auto ink = std::accumulate(strip.ink.begin(), strip.ink.end(), 0);
  const auto lit = std::count(a.pixels.begin(), a.pixels.end(), 1.0f);
  CHECK(lit == ink);
}

TEST_CASE("different draws stay in the fiber") {
  const auto spec = default_spec();
  Rng r1(1), r2(2);
  const auto d1 = sample_draw(spec.nuisance(), r1);
  const auto d2 = sample_draw(spec.nuisance(), r2);
  REQUIRE_FALSE(d1 == d2);
  const auto x1 = render_expression(3, 4, d1, spec);
  const auto x2 = render_expression(3, 4, d2, spec);
  CHECK(x1.pixels != x2.pixels);
  CHECK(x1.label == x2.label);
}

TEST_CASE("commuted expressions differ in pixels but share the label") {
  for (int n : {2, 5, 7}) {
    const auto spec = default_spec(n, 9);
    Rng rng(5);
    const auto d = sample_draw(spec.nuisance(), rng);
    const auto x = render_expression(3, 4, d, spec);
    const auto y = render_expression(4, 3, d, spec);
    CHECK(x.pixels != y.pixels);
    CHECK(x.label == y.label);
  }
}

TEST_CASE("render rejects out-of-range latents and draws") {
  const auto spec = default_spec();
  CHECK_THROWS_AS(render_expression(5, 0, NuisanceDraw::identity(), spec), DomainError);
  CHECK_THROWS_AS(render_expression(-1, 0, NuisanceDraw::identity(), spec), DomainError);
  NuisanceDraw d;
  d.dx = 4;
  CHECK_THROWS_AS(render_expression(1, 1, d, spec), DomainError);
  d = {};
  d.angle = 0.2f;
  CHECK_THROWS_AS(render_expression(1, 1, d, spec), DomainError);
  d = {};
  d.scale = 0.85f;
  CHECK_THROWS_AS(render_expression(1, 1, d, spec), DomainError);
  d = {};
  d.noise_sigma = 0.1f;
  CHECK_THROWS_AS(render_expression(1, 1, d, spec), DomainError);
}

TEST_CASE("sampled datasets are reproducible") {
  const auto spec = default_spec();
  const auto a = sample_dataset(spec, 100, 7);
  const auto b = sample_dataset(spec, 100, 7);
  CHECK(dataset_digest(a) == dataset_digest(b));
  CHECK(dataset_digest(a) != dataset_digest(sample_dataset(spec, 100, 8)));
  CHECK_THROWS_AS(sample_dataset(spec, 0, 7), DomainError);
}

TEST_CASE("every label appears in a 500-sample draw") {
  const auto ds = sample_dataset(default_spec(5, 9), 500, 7);
  std::array<int, 5> counts{};
  for (const auto& o : ds.items) ++counts[static_cast<std::size_t>(o.label.value)];
  for (int c : counts) CHECK(c > 0);
}

TEST_CASE("projection invariance and uniform label marginal over 10^4 samples") {
  const auto spec = default_spec(5, 9);  // 10 digit values: labels uniform
  const auto ds = sample_dataset(spec, 10000, 2024);
  std::array<double, 5> counts{};
  for (const auto& o : ds.items) {
    REQUIRE(o.label == semantic_label(o.a, o.b, 5));
    REQUIRE(o.nuisance.within(spec.nuisance()));
    ++counts[static_cast<std::size_t>(o.label.value)];
  }
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 2000.0) * (c - 2000.0) / 2000.0;
  CHECK(chi2 < 18.47);  // chi-square, 4 dof, p = 0.001
}

TEST_CASE("orbit batches share latents and differ in pixels") {
  const auto spec = default_spec();
  const auto orbit = orbit_batch(2, 3, spec, 8, 99);
  REQUIRE(orbit.size() == 8);
  for (const auto& o : orbit) {
    CHECK(o.label.value == 0);
    CHECK(o.a == 2);
    CHECK(o.b == 3);
  }
  for (std::size_t i = 0; i < orbit.size(); ++i)
    for (std::size_t j = i + 1; j < orbit.size(); ++j) CHECK(l2(orbit[i], orbit[j]) > 0.0);

  const auto clean = clean_spec();
  const auto single = orbit_batch(2, 3, clean, 1, 99);
  CHECK(single.front().pixels == render_expression(2, 3, NuisanceDraw::identity(), clean).pixels);
  CHECK_THROWS_AS(orbit_batch(2, 3, spec, 0, 1), DomainError);
}

TEST_CASE("fiber nontriviality with noise-free geometric nuisance") {
  NuisanceConfig cfg;
  cfg.noise = false;
  cfg.max_translation = 2;
  const BundleSpec spec(5, 4, 16, 48, cfg);
  const auto pair = orbit_batch(1, 4, spec, 2, 31);
  CHECK(pair[0].pixels != pair[1].pixels);
}

TEST_CASE("stroke jitter moves ink pixels") {
  NuisanceConfig cfg = NuisanceConfig::none();
  cfg.jitter = true;
  cfg.stroke_jitter = 0.5;
  const BundleSpec spec(5, 4, 16, 48, cfg);
  Rng rng(3);
  const auto jittered = render_expression(2, 2, sample_draw(cfg, rng), spec);
  const auto plain = render_expression(2, 2, NuisanceDraw::identity(), clean_spec());
  CHECK(jittered.pixels != plain.pixels);
}

TEST_CASE("VLHB round trip is bit-exact") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    NuisanceConfig cfg;
    cfg.stroke_jitter = 0.1 * static_cast<double>(seed);
    const BundleSpec spec(3 + static_cast<int>(seed), 9, 16, 48, cfg);
    const auto ds = sample_dataset(spec, 20, seed);
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_dataset(buf, ds);
    const std::string bytes = buf.str();
    REQUIRE(bytes.substr(0, 4) == "VLHB");
    const auto back = read_dataset(buf);
    CHECK(back.seed == ds.seed);
    CHECK(back.spec.modulus() == spec.modulus());
    REQUIRE(back.items.size() == ds.items.size());
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      CHECK(back.items[i].pixels == ds.items[i].pixels);
      CHECK(back.items[i].nuisance == ds.items[i].nuisance);
      CHECK(back.items[i].a == ds.items[i].a);
    }
    std::ostringstream again(std::ios::binary);
    write_dataset(again, back);
    CHECK(again.str() == bytes);
    // Re-rendering from the stored draw reproduces the stored pixels.
    const auto& it = back.items.front();
    CHECK(render_expression(it.a, it.b, it.nuisance, back.spec).pixels == it.pixels);
  }
  std::istringstream junk("NOPE");
  CHECK_THROWS_AS(read_dataset(junk), IoError);
}

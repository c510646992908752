#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "fiberlab/rng.hpp"

namespace fiberlab::bundle {

// Parameterization of the nuisance group: which transforms apply and how far.
struct NuisanceConfig {
  int max_translation = 3;       // pixels, each axis
  double rotation_range = 0.15;  // radians, symmetric
  double scale_min = 0.9;
  double scale_max = 1.1;
  double stroke_jitter = 0.0;  // per-ink-pixel displacement probability
  double noise_sigma = 0.05;   // additive Gaussian, intensity units

  bool translate = true;
  bool rotate = true;
  bool scale = true;
  bool jitter = true;
  bool noise = true;

  static NuisanceConfig none();
  void validate() const;
  // Largest scale factor a draw can produce.
  double max_scale() const { return scale ? scale_max : 1.0; }
};

// One concrete group element. Stored as f32 so files round-trip exactly.
struct NuisanceDraw {
  std::int32_t dx = 0;
  std::int32_t dy = 0;
  float angle = 0.0f;
  float scale = 1.0f;
  float jitter = 0.0f;
  float noise_sigma = 0.0f;
  std::uint64_t noise_seed = 0;

  static NuisanceDraw identity() { return {}; }
  bool within(const NuisanceConfig& cfg) const;
  friend bool operator==(const NuisanceDraw&, const NuisanceDraw&) = default;
};

NuisanceDraw sample_draw(const NuisanceConfig& cfg, Rng& rng);

struct SemanticLabel {
  int value = 0;
  friend bool operator==(const SemanticLabel&, const SemanticLabel&) = default;
};

// (a + b) mod n. Throws DomainError for n < 2 or negative inputs.
SemanticLabel semantic_label(long long a, long long b, long long n);

class BundleSpec {
 public:
  // Rejects n < 2, digit_range < n - 1, unknown glyph versions, invalid
  // nuisance ranges, and canvases too small for the widest expression at
  // maximum nuisance scale.
  BundleSpec(int modulus, int digit_range, int canvas_height, int canvas_width,
             NuisanceConfig nuisance = {}, int glyph_set_version = 1);

  int modulus() const { return modulus_; }
  int digit_range() const { return digit_range_; }
  int canvas_height() const { return canvas_height_; }
  int canvas_width() const { return canvas_width_; }
  int pixel_count() const { return canvas_height_ * canvas_width_; }
  const NuisanceConfig& nuisance() const { return nuisance_; }
  int glyph_set_version() const { return glyph_set_version_; }

 private:
  int modulus_;
  int digit_range_;
  int canvas_height_;
  int canvas_width_;
  NuisanceConfig nuisance_;
  int glyph_set_version_;
};

struct Observation {
  std::vector<float> pixels;  // row-major, values in [0, 1]
  int height = 0;
  int width = 0;
  SemanticLabel label;
  int a = 0;
  int b = 0;
  NuisanceDraw nuisance;
};

struct LabeledDataset {
  BundleSpec spec;
  std::vector<Observation> items;
  std::uint64_t seed = 0;
};

// Glyph strip for "a+b" before any nuisance: 7 rows, 1-pixel gaps between glyphs.
struct GlyphStrip {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> ink;  // row-major 0/1
};
GlyphStrip layout_expression(int a, int b, int glyph_set_version = 1);

Observation render_expression(int a, int b, const NuisanceDraw& draw, const BundleSpec& spec);

LabeledDataset sample_dataset(const BundleSpec& spec, std::size_t count, std::uint64_t seed);

std::vector<Observation> orbit_batch(int a, int b, const BundleSpec& spec, std::size_t k, std::uint64_t seed);

// "VLHB" binary dataset format.
void write_dataset(std::ostream& out, const LabeledDataset& ds);
LabeledDataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

// FNV-1a over the serialized bytes.
std::uint64_t dataset_digest(const LabeledDataset& ds);

}  // namespace fiberlab::bundle

#include "fiberlab/bundle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "fiberlab/binary_io.hpp"
#include "fiberlab/errors.hpp"

namespace fiberlab::bundle {

namespace {

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;
constexpr int kPlusGlyph = 10;
constexpr std::uint16_t kFormatVersion = 1;

// Glyph set version 1: rows top to bottom, bit 4 is the leftmost column.
constexpr std::array<std::array<std::uint8_t, kGlyphH>, 11> kGlyphsV1{{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
    {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00},  // +
}};

int decimal_length(int v) {
  int len = 1;
  while (v >= 10) {
    v /= 10;
    ++len;
  }
  return len;
}

int strip_width(int glyph_count) { return glyph_count * (kGlyphW + 1) - 1; }

void check_version(int glyph_set_version) {
  if (glyph_set_version != 1)
    throw DomainError("unsupported glyph_set_version " + std::to_string(glyph_set_version));
}

}  // namespace

NuisanceConfig NuisanceConfig::none() {
  NuisanceConfig cfg;
  cfg.translate = cfg.rotate = cfg.scale = cfg.jitter = cfg.noise = false;
  return cfg;
}

void NuisanceConfig::validate() const {
  if (max_translation < 0) throw DomainError("nuisance.max_translation must be >= 0");
  if (!(rotation_range >= 0.0)) throw DomainError("nuisance.rotation_range must be >= 0");
  if (!(scale_min > 0.0) || !(scale_max >= scale_min))
    throw DomainError("nuisance.scale_range must satisfy 0 < min <= max");
  if (!(stroke_jitter >= 0.0 && stroke_jitter <= 1.0))
    throw DomainError("nuisance.stroke_jitter must lie in [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw DomainError("nuisance.noise_sigma must be >= 0");
}

bool NuisanceDraw::within(const NuisanceConfig& cfg) const {
  const int t = cfg.translate ? cfg.max_translation : 0;
  if (std::abs(dx) > t || std::abs(dy) > t) return false;
  const float r = cfg.rotate ? static_cast<float>(cfg.rotation_range) : 0.0f;
  if (!(angle >= -r && angle <= r)) return false;
  const float lo = cfg.scale ? static_cast<float>(cfg.scale_min) : 1.0f;
  const float hi = cfg.scale ? static_cast<float>(cfg.scale_max) : 1.0f;
  if (!(scale >= lo && scale <= hi)) return false;
  const float j = cfg.jitter ? static_cast<float>(cfg.stroke_jitter) : 0.0f;
  if (!(jitter >= 0.0f && jitter <= j)) return false;
  const float s = cfg.noise ? static_cast<float>(cfg.noise_sigma) : 0.0f;
  return noise_sigma >= 0.0f && noise_sigma <= s;
}

NuisanceDraw sample_draw(const NuisanceConfig& cfg, Rng& rng) {
  NuisanceDraw d;
  if (cfg.translate) {
    d.dx = static_cast<std::int32_t>(rng.between(-cfg.max_translation, cfg.max_translation));
    d.dy = static_cast<std::int32_t>(rng.between(-cfg.max_translation, cfg.max_translation));
  }
  if (cfg.rotate) d.angle = static_cast<float>(rng.uniform(-cfg.rotation_range, cfg.rotation_range));
  if (cfg.scale) d.scale = static_cast<float>(rng.uniform(cfg.scale_min, cfg.scale_max));
  if (cfg.jitter) d.jitter = static_cast<float>(cfg.stroke_jitter);
  if (cfg.noise) d.noise_sigma = static_cast<float>(cfg.noise_sigma);
  d.noise_seed = rng.next();
  return d;
}

SemanticLabel semantic_label(long long a, long long b, long long n) {
  if (n < 2) throw DomainError("semantic_label: modulus must be >= 2");
  if (a < 0 || b < 0) throw DomainError("semantic_label: latents must be nonnegative");
  return SemanticLabel{static_cast<int>((a % n + b % n) % n)};
}

BundleSpec::BundleSpec(int modulus, int digit_range, int canvas_height, int canvas_width, NuisanceConfig nuisance,
                       int glyph_set_version)
    : modulus_(modulus),
      digit_range_(digit_range),
      canvas_height_(canvas_height),
      canvas_width_(canvas_width),
      nuisance_(nuisance),
      glyph_set_version_(glyph_set_version) {
  if (modulus_ < 2) throw DomainError("bundle: modulus must be >= 2");
  if (digit_range_ < 1 || digit_range_ < modulus_ - 1)
    throw DomainError("bundle: digit_range must be >= max(1, modulus - 1)");
  if (digit_range_ > 65535) throw DomainError("bundle: digit_range exceeds 16-bit storage");
  if (canvas_height_ < 1 || canvas_width_ < 1) throw DomainError("bundle: canvas dimensions must be positive");
  check_version(glyph_set_version_);
  nuisance_.validate();

  const int glyphs = 2 * decimal_length(digit_range_) + 1;
  const double s = nuisance_.max_scale();
  if (strip_width(glyphs) * s > canvas_width_ || kGlyphH * s > canvas_height_)
    throw DomainError("bundle: canvas " + std::to_string(canvas_height_) + "x" + std::to_string(canvas_width_) +
                      " cannot hold the widest expression at scale " + std::to_string(s));
}

GlyphStrip layout_expression(int a, int b, int glyph_set_version) {
  check_version(glyph_set_version);
  if (a < 0 || b < 0) throw DomainError("layout_expression: latents must be nonnegative");
  std::vector<int> glyphs;
  for (char ch : std::to_string(a)) glyphs.push_back(ch - '0');
  glyphs.push_back(kPlusGlyph);
  for (char ch : std::to_string(b)) glyphs.push_back(ch - '0');

  GlyphStrip strip;
  strip.height = kGlyphH;
  strip.width = strip_width(static_cast<int>(glyphs.size()));
  strip.ink.assign(static_cast<std::size_t>(strip.height * strip.width), 0);
  for (std::size_t g = 0; g < glyphs.size(); ++g) {
    const int x0 = static_cast<int>(g) * (kGlyphW + 1);
    const auto& rows = kGlyphsV1[static_cast<std::size_t>(glyphs[g])];
    for (int r = 0; r < kGlyphH; ++r)
      for (int c = 0; c < kGlyphW; ++c)
        if ((rows[static_cast<std::size_t>(r)] >> (kGlyphW - 1 - c)) & 1)
          strip.ink[static_cast<std::size_t>(r * strip.width + x0 + c)] = 1;
  }
  return strip;
}

// Order: scale -> rotate -> translate (one inverse map, nearest neighbour in
// Q16 fixed point) -> stroke jitter -> additive noise -> clamp.
Observation render_expression(int a, int b, const NuisanceDraw& draw, const BundleSpec& spec) {
  if (a < 0 || b < 0 || a > spec.digit_range() || b > spec.digit_range())
    throw DomainError("render_expression: latents outside [0, digit_range]");
  if (!draw.within(spec.nuisance())) throw DomainError("render_expression: nuisance draw outside configured ranges");

  const GlyphStrip strip = layout_expression(a, b, spec.glyph_set_version());
  const int H = spec.canvas_height();
  const int W = spec.canvas_width();
  if (strip.width * static_cast<double>(draw.scale) > W || strip.height * static_cast<double>(draw.scale) > H)
    throw RenderError("render_expression: \"" + std::to_string(a) + "+" + std::to_string(b) + "\" overflows canvas");

  // Inverse map, doubled coordinates so pixel centres are integers:
  //   X2 = 2c + 1 - W - 2dx,  Y2 = 2r + 1 - H - 2dy
  //   src_x = (cos*X2 + sin*Y2) / (2s) + strip_w/2
  //   src_y = (-sin*X2 + cos*Y2) / (2s) + strip_h/2
  constexpr int kFrac = 16;
  const double th = static_cast<double>(draw.angle);
  const double inv_s = 1.0 / static_cast<double>(draw.scale);
  const auto q = [](double v) { return static_cast<std::int64_t>(std::llround(v * (1 << kFrac))); };
  const std::int64_t kc = q(std::cos(th) * inv_s);
  const std::int64_t ks = q(std::sin(th) * inv_s);
  const std::int64_t off_x = static_cast<std::int64_t>(strip.width) << kFrac;
  const std::int64_t off_y = static_cast<std::int64_t>(strip.height) << kFrac;

  std::vector<std::uint8_t> ink(static_cast<std::size_t>(H * W), 0);
  for (int r = 0; r < H; ++r) {
    const std::int64_t y2 = 2 * r + 1 - H - 2 * draw.dy;
    for (int c = 0; c < W; ++c) {
      const std::int64_t x2 = 2 * c + 1 - W - 2 * draw.dx;
      const std::int64_t sx = (kc * x2 + ks * y2 + off_x) >> (kFrac + 1);
      const std::int64_t sy = (-ks * x2 + kc * y2 + off_y) >> (kFrac + 1);
      if (sx >= 0 && sx < strip.width && sy >= 0 && sy < strip.height)
        ink[static_cast<std::size_t>(r * W + c)] = strip.ink[static_cast<std::size_t>(sy * strip.width + sx)];
    }
  }

  Rng jitter_rng = Rng::derive(draw.noise_seed, 1);
  if (draw.jitter > 0.0f) {
    std::vector<std::uint8_t> moved(ink.size(), 0);
    constexpr int kDr[4] = {-1, 1, 0, 0};
    constexpr int kDc[4] = {0, 0, -1, 1};
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        if (!ink[static_cast<std::size_t>(r * W + c)]) continue;
        int tr = r, tc = c;
        if (jitter_rng.uniform() < static_cast<double>(draw.jitter)) {
          const auto dir = jitter_rng.below(4);
          const int nr = r + kDr[dir], nc = c + kDc[dir];
          if (nr >= 0 && nr < H && nc >= 0 && nc < W) tr = nr, tc = nc;
        }
        moved[static_cast<std::size_t>(tr * W + tc)] = 1;
      }
    }
    ink.swap(moved);
  }

  Observation obs;
  obs.height = H;
  obs.width = W;
  obs.a = a;
  obs.b = b;
  obs.label = semantic_label(a, b, spec.modulus());
  obs.nuisance = draw;
  obs.pixels.resize(ink.size());
  Rng noise_rng = Rng::derive(draw.noise_seed, 2);
  const double sigma = static_cast<double>(draw.noise_sigma);
  for (std::size_t i = 0; i < ink.size(); ++i) {
    double v = ink[i] ? 1.0 : 0.0;
    if (sigma > 0.0) v += sigma * noise_rng.normal();
    obs.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return obs;
}

LabeledDataset sample_dataset(const BundleSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw DomainError("sample_dataset: count must be >= 1");
  LabeledDataset ds{spec, {}, seed};
  ds.items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, i);
    const int a = static_cast<int>(rng.between(0, spec.digit_range()));
    const int b = static_cast<int>(rng.between(0, spec.digit_range()));
    const NuisanceDraw draw = sample_draw(spec.nuisance(), rng);
    ds.items.push_back(render_expression(a, b, draw, spec));
  }
  return ds;
}

std::vector<Observation> orbit_batch(int a, int b, const BundleSpec& spec, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw DomainError("orbit_batch: k must be >= 1");
  std::vector<Observation> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    Rng rng = Rng::derive(seed, i);
    out.push_back(render_expression(a, b, sample_draw(spec.nuisance(), rng), spec));
  }
  return out;
}

// Layout (all little-endian):
//   "VLHB" u16 version
//   u32 modulus, u32 digit_range, u32 height, u32 width, u32 glyph_set_version
//   i32 max_translation, f64 rotation_range, f64 scale_min, f64 scale_max,
//   f64 stroke_jitter, f64 noise_sigma, u8 enabled-flags (translate..noise = bits 0..4)
//   u64 seed, u32 count
//   per item: u16 a, u16 b, u16 label, u64 noise_seed,
//             f32 x6 (dx, dy, angle, scale, jitter, noise_sigma), f32 x (h*w) pixels
void write_dataset(std::ostream& out, const LabeledDataset& ds) {
  const BundleSpec& s = ds.spec;
  const NuisanceConfig& n = s.nuisance();
  io::write_magic(out, "VLHB");
  io::write_le<std::uint16_t>(out, kFormatVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.modulus()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.digit_range()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.canvas_height()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.canvas_width()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.glyph_set_version()));
  io::write_le<std::int32_t>(out, n.max_translation);
  io::write_le<double>(out, n.rotation_range);
  io::write_le<double>(out, n.scale_min);
  io::write_le<double>(out, n.scale_max);
  io::write_le<double>(out, n.stroke_jitter);
  io::write_le<double>(out, n.noise_sigma);
  const std::uint8_t flags = static_cast<std::uint8_t>((n.translate ? 1 : 0) | (n.rotate ? 2 : 0) | (n.scale ? 4 : 0) |
                                                       (n.jitter ? 8 : 0) | (n.noise ? 16 : 0));
  io::write_le<std::uint8_t>(out, flags);
  io::write_le<std::uint64_t>(out, ds.seed);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.items.size()));
  for (const Observation& o : ds.items) {
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(o.a));
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(o.b));
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(o.label.value));
    io::write_le<std::uint64_t>(out, o.nuisance.noise_seed);
    io::write_le<float>(out, static_cast<float>(o.nuisance.dx));
    io::write_le<float>(out, static_cast<float>(o.nuisance.dy));
    io::write_le<float>(out, o.nuisance.angle);
    io::write_le<float>(out, o.nuisance.scale);
    io::write_le<float>(out, o.nuisance.jitter);
    io::write_le<float>(out, o.nuisance.noise_sigma);
    for (float p : o.pixels) io::write_le<float>(out, p);
  }
  if (!out) throw IoError("write_dataset: stream failure");
}

LabeledDataset read_dataset(std::istream& in) {
  io::expect_magic(in, "VLHB");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kFormatVersion) throw IoError("VLHB: unsupported format version " + std::to_string(version));
  const int modulus = static_cast<int>(io::read_le<std::uint32_t>(in));
  const int digit_range = static_cast<int>(io::read_le<std::uint32_t>(in));
  const int height = static_cast<int>(io::read_le<std::uint32_t>(in));
  const int width = static_cast<int>(io::read_le<std::uint32_t>(in));
  const int glyphs = static_cast<int>(io::read_le<std::uint32_t>(in));
  NuisanceConfig n;
  n.max_translation = io::read_le<std::int32_t>(in);
  n.rotation_range = io::read_le<double>(in);
  n.scale_min = io::read_le<double>(in);
  n.scale_max = io::read_le<double>(in);
  n.stroke_jitter = io::read_le<double>(in);
  n.noise_sigma = io::read_le<double>(in);
  const auto flags = io::read_le<std::uint8_t>(in);
  n.translate = flags & 1;
  n.rotate = flags & 2;
  n.scale = flags & 4;
  n.jitter = flags & 8;
  n.noise = flags & 16;

  LabeledDataset ds{BundleSpec(modulus, digit_range, height, width, n, glyphs), {}, 0};
  ds.seed = io::read_le<std::uint64_t>(in);
  const auto count = io::read_le<std::uint32_t>(in);
  ds.items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Observation o;
    o.height = height;
    o.width = width;
    o.a = io::read_le<std::uint16_t>(in);
    o.b = io::read_le<std::uint16_t>(in);
    o.label.value = io::read_le<std::uint16_t>(in);
    if (o.label != semantic_label(o.a, o.b, modulus)) throw IoError("VLHB: item " + std::to_string(i) + " label mismatch");
    o.nuisance.noise_seed = io::read_le<std::uint64_t>(in);
    o.nuisance.dx = static_cast<std::int32_t>(io::read_le<float>(in));
    o.nuisance.dy = static_cast<std::int32_t>(io::read_le<float>(in));
    o.nuisance.angle = io::read_le<float>(in);
    o.nuisance.scale = io::read_le<float>(in);
    o.nuisance.jitter = io::read_le<float>(in);
    o.nuisance.noise_sigma = io::read_le<float>(in);
    o.pixels.resize(static_cast<std::size_t>(height) * static_cast<std::size_t>(width));
    for (float& p : o.pixels) p = io::read_le<float>(in);
    ds.items.push_back(std::move(o));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_dataset(in);
}

std::uint64_t dataset_digest(const LabeledDataset& ds) {
  std::ostringstream buf(std::ios::binary);
  write_dataset(buf, ds);
  const std::string bytes = buf.str();
  return io::fnv1a(bytes.data(), bytes.size());
}

}  // namespace fiberlab::bundle

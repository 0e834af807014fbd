#include "ratspn/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "ratspn/error.hpp"
#include "ratspn/random.hpp"

namespace ratspn {

namespace {

struct Stroke {
  double x0, y0, x1, y1;
};

std::vector<Stroke> prototype(const GlyphOptions& o, std::uint32_t cls) {
  Rng rng = Rng(o.prototype_seed).fork(0x9f1700 + cls);
  const double lo = 1.5;
  const double hi = o.side - 2.5;
  std::vector<Stroke> strokes;
  for (std::uint32_t k = 0; k < o.strokes; ++k) {
    Stroke s{};
    // reject near-degenerate strokes; a dot carries too little shape
    do {
      s = {lo + (hi - lo) * rng.uniform(), lo + (hi - lo) * rng.uniform(),
           lo + (hi - lo) * rng.uniform(), lo + (hi - lo) * rng.uniform()};
    } while (std::hypot(s.x1 - s.x0, s.y1 - s.y0) < o.side * 0.35);
    strokes.push_back(s);
  }
  return strokes;
}

double segment_distance(double px, double py, const Stroke& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (s.x0 + t * dx), py - (s.y0 + t * dy));
}

}  // namespace

GlyphSet make_glyphs(std::size_t count, const GlyphOptions& o, std::uint64_t seed) {
  if (o.side < 4 || o.num_classes == 0 || o.num_classes > 256 || o.strokes == 0) {
    throw InvalidInput("glyph options out of range");
  }
  std::vector<std::vector<Stroke>> protos;
  for (std::uint32_t c = 0; c < o.num_classes; ++c) protos.push_back(prototype(o, o.first_class + c));

  Rng rng(seed);
  GlyphSet out;
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) out.labels[i] = static_cast<std::uint8_t>(i % o.num_classes);
  rng.shuffle(std::span(out.labels));

  const std::size_t pixels = std::size_t{o.side} * o.side;
  out.images.count = static_cast<std::uint32_t>(count);
  out.images.rows = o.side;
  out.images.cols = o.side;
  out.images.pixels.resize(count * pixels);
  for (std::size_t i = 0; i < count; ++i) {
    const auto span = static_cast<std::uint64_t>(2 * o.max_shift + 1);
    const double sx = static_cast<double>(rng.below(span)) - o.max_shift;
    const double sy = static_cast<double>(rng.below(span)) - o.max_shift;
    std::vector<Stroke> strokes = protos[out.labels[i]];
    for (auto& s : strokes) {
      s.x0 += sx + o.jitter * rng.normal();
      s.y0 += sy + o.jitter * rng.normal();
      s.x1 += sx + o.jitter * rng.normal();
      s.y1 += sy + o.jitter * rng.normal();
    }
    const double intensity = 0.7 + 0.3 * rng.uniform();
    std::uint8_t* img = out.images.pixels.data() + i * pixels;
    for (std::uint32_t y = 0; y < o.side; ++y) {
      for (std::uint32_t x = 0; x < o.side; ++x) {
        double d = 1e9;
        for (const auto& s : strokes) d = std::min(d, segment_distance(x, y, s));
        double v = intensity * std::exp(-d * d / (2 * 0.55 * 0.55)) + o.noise * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        img[y * o.side + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
  }
  return out;
}

IdxImages make_uniform_noise(std::size_t count, std::uint32_t rows, std::uint32_t cols,
                             std::uint64_t seed) {
  Rng rng(seed);
  IdxImages out;
  out.count = static_cast<std::uint32_t>(count);
  out.rows = rows;
  out.cols = cols;
  out.pixels.resize(count * rows * cols);
  for (auto& p : out.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return out;
}

Dataset to_dataset(const IdxImages& images, const std::vector<std::uint8_t>& labels) {
  if (!labels.empty() && labels.size() != images.count) {
    throw InvalidInput("label count does not match image count");
  }
  Dataset d;
  d.features = FeatureMatrix(images.count, std::size_t{images.rows} * images.cols);
  std::transform(images.pixels.begin(), images.pixels.end(), d.features.values().begin(),
                 [](std::uint8_t p) { return static_cast<double>(p); });
  d.labels.assign(labels.begin(), labels.end());
  d.nominal_max = 255.0;
  return d;
}

Dataset to_dataset(const GlyphSet& set) { return to_dataset(set.images, set.labels); }

}  // namespace ratspn

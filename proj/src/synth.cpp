#include "eadnet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "eadnet/random.hpp"

namespace eadnet {

namespace {

struct Rgb {
  float r, g, b;
};

Rgb class_base_color(int k) {
  switch (k % 6) {
    case 1: return {0.82f, 0.18f, 0.16f};  // red
    case 2: return {0.18f, 0.32f, 0.85f};  // blue
    case 3: return {0.88f, 0.80f, 0.15f};  // yellow
    case 4: return {0.20f, 0.75f, 0.30f};  // green
    case 5: return {0.75f, 0.25f, 0.80f};  // magenta
    default: return {0.15f, 0.78f, 0.80f}; // cyan
  }
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

}  // namespace

std::vector<LabeledSample> synth_dataset(unsigned seed, int count, int size, int num_classes) {
  if (size < 8 || size % 8 != 0)
    fail_invalid("synth_dataset: size must be a positive multiple of 8, got ", size);
  if (num_classes < 2) fail_invalid("synth_dataset: need at least 2 classes");
  if (count < 0) fail_invalid("synth_dataset: negative count");

  RandomStream rng(seed);
  std::vector<LabeledSample> samples;
  samples.reserve(static_cast<std::size_t>(count));

  for (int s = 0; s < count; ++s) {
    LabeledSample sample;
    sample.image = Tensor(Dims4{1, 3, size, size});
    sample.labels = LabelMap(1, size, size, 0);
    Tensor& img = sample.image;

    // textured background: muted green-gray with an illumination ramp
    const float ramp = static_cast<float>(rng.uniform(-0.10, 0.10));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const float shade = ramp * (static_cast<float>(x) / size - 0.5f);
        const float noise = static_cast<float>(rng.uniform(-0.06, 0.06));
        img.at(0, 0, y, x) = clamp01(0.34f + shade + noise);
        img.at(0, 1, y, x) = clamp01(0.40f + shade + noise);
        img.at(0, 2, y, x) = clamp01(0.33f + shade + noise);
      }
    }

    for (int k = 1; k < num_classes; ++k) {
      const int kind = (k - 1) % 3;  // rect, ellipse, bar
      const float cx = static_cast<float>(rng.uniform(0.22, 0.78)) * size;
      const float cy = static_cast<float>(rng.uniform(0.22, 0.78)) * size;
      const Rgb base = class_base_color(k);
      const float jr = static_cast<float>(rng.uniform(-0.10, 0.10));
      const float jg = static_cast<float>(rng.uniform(-0.10, 0.10));
      const float jb = static_cast<float>(rng.uniform(-0.10, 0.10));

      float hx = 0, hy = 0, ct = 1, st = 0;
      if (kind == 0) {  // rectangle
        hx = static_cast<float>(rng.uniform(0.12, 0.28)) * size;
        hy = static_cast<float>(rng.uniform(0.12, 0.28)) * size;
      } else if (kind == 1) {  // ellipse
        hx = static_cast<float>(rng.uniform(0.13, 0.28)) * size;
        hy = static_cast<float>(rng.uniform(0.13, 0.28)) * size;
      } else {  // elongated bar, arbitrary orientation
        hx = static_cast<float>(rng.uniform(0.26, 0.44)) * size;
        hy = static_cast<float>(rng.uniform(0.055, 0.10)) * size;
        const double theta = rng.uniform(0.0, 3.14159265358979323846);
        ct = static_cast<float>(std::cos(theta));
        st = static_cast<float>(std::sin(theta));
      }

      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const float dx = x - cx, dy = y - cy;
          bool inside = false;
          if (kind == 0) {
            inside = std::fabs(dx) <= hx && std::fabs(dy) <= hy;
          } else if (kind == 1) {
            const float u = dx / hx, v = dy / hy;
            inside = u * u + v * v <= 1.0f;
          } else {
            const float u = ct * dx + st * dy;
            const float v = -st * dx + ct * dy;
            inside = std::fabs(u) <= hx && std::fabs(v) <= hy;
          }
          if (!inside) continue;
          img.at(0, 0, y, x) = clamp01(base.r + jr);
          img.at(0, 1, y, x) = clamp01(base.g + jg);
          img.at(0, 2, y, x) = clamp01(base.b + jb);
          sample.labels.at(0, y, x) = static_cast<std::uint8_t>(k);
        }
      }
    }

    // pixel noise over everything
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          img.at(0, c, y, x) =
              clamp01(img.at(0, c, y, x) + static_cast<float>(rng.uniform(-0.03, 0.03)));

    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace eadnet

#pragma once

// Small seeded generators for property tests.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <string>
#include <vector>

#include "pole/pole.hpp"

namespace pole::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double real(double lo, double hi) { return uniform(rng_, lo, hi); }
  double unit() { return uniform01(rng_); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_index(rng_, n)); }
  bool coin(double p = 0.5) { return unit() < p; }

  /// log-uniform positive factor in [lo, hi].
  double log_scale(double lo, double hi) { return std::exp(real(std::log(lo), std::log(hi))); }

  std::vector<double> vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = real(lo, hi);
    return v;
  }

  std::vector<int> labels(std::size_t k) {
    std::vector<int> y(k);
    for (auto& v : y) v = coin() ? 1 : 0;
    y[index(k)] = 1;
    return y;
  }

  Image image(std::size_t c, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
    Image img(c, h, w);
    for (auto& v : img.data()) v = real(lo, hi);
    return img;
  }

  ActivationMaps maps(std::size_t k, std::size_t h, std::size_t w) {
    ActivationMaps m;
    m.values = image(k, h, w);
    m.normalized = true;
    return m;
  }

  PseudoMask mask(std::size_t h, std::size_t w, std::size_t num_labels, const std::string& id) {
    PseudoMask m;
    m.height = h;
    m.width = w;
    m.image_id = id;
    m.labels.resize(h * w);
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(index(num_labels));
    return m;
  }

  ImageSample sample(std::size_t k, std::size_t h, std::size_t w, const std::string& id) {
    ImageSample s;
    s.pixels = image(3, h, w);
    s.label = labels(k);
    s.id = id;
    return s;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

/// Central difference of f at x along coordinate i.
template <typename F>
double central_diff(F&& f, std::vector<double> x, std::size_t i, double h = 1e-3) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

/// Distance in units in the last place between two doubles of the same sign.
inline std::uint64_t ulp_distance(double a, double b) {
  if (a == b) return 0;
  if (std::signbit(a) != std::signbit(b)) return ~std::uint64_t{0};
  std::int64_t ia, ib;
  std::memcpy(&ia, &a, 8);
  std::memcpy(&ib, &b, 8);
  return static_cast<std::uint64_t>(ia > ib ? ia - ib : ib - ia);
}

/// Per-pixel triple loop (image, reference label, predicted label) computing
/// pooled IoU per label and their mean over labels with a nonzero union.
struct OracleMiou {
  std::vector<double> iou;
  std::vector<bool> counted;
  double miou = 0.0;
};

inline OracleMiou oracle_miou(const std::vector<PseudoMask>& preds, const std::vector<PseudoMask>& refs,
                              std::size_t num_labels) {
  OracleMiou out;
  out.iou.assign(num_labels, 0.0);
  out.counted.assign(num_labels, false);
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < num_labels; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (std::size_t p = 0; p < refs[i].labels.size(); ++p) {
        const auto r = refs[i].labels[p], q = preds[i].labels[p];
        if (r == kIgnoreLabel || q == kIgnoreLabel) continue;
        const bool in_r = r == c, in_q = q == c;
        if (in_r && in_q) ++inter;
        if (in_r || in_q) ++uni;
      }
    if (uni == 0) continue;
    out.iou[c] = static_cast<double>(inter) / static_cast<double>(uni);
    out.counted[c] = true;
    sum += out.iou[c];
    ++n;
  }
  out.miou = n ? sum / n : 0.0;
  return out;
}

}  // namespace pole::testing

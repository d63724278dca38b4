#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pole/errors.hpp"

namespace pole {

/// Dense channels x height x width array, row-major within each plane.
template <std::floating_point T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, T fill = T(0))
      : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {}

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t plane_size() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }

  std::span<T> plane(std::size_t c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(std::size_t c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Tensor3& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using Image = Tensor3<double>;

/// Source taps for one output coordinate of a half-pixel-centred bilinear
/// resample along a single axis.
struct ResampleAxis {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;

  static ResampleAxis make(std::size_t in, std::size_t out) {
    if (in == 0 || out == 0) throw ArgumentError("resample axis must be nonempty");
    ResampleAxis axis;
    axis.lo.resize(out);
    axis.hi.resize(out);
    axis.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      auto i0 = static_cast<std::size_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      axis.lo[o] = i0;
      axis.hi[o] = i1;
      axis.frac[o] = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
    }
    return axis;
  }
};

/// Bilinear resample of one plane. Written in lerp form so constant planes and
/// same-size resamples are reproduced exactly.
inline void resample_plane(std::span<const double> src, std::size_t in_h, std::size_t in_w, std::span<double> dst,
                           const ResampleAxis& ay, const ResampleAxis& ax) {
  const std::size_t out_h = ay.lo.size();
  const std::size_t out_w = ax.lo.size();
  for (std::size_t y = 0; y < out_h; ++y) {
    const double* r0 = src.data() + ay.lo[y] * in_w;
    const double* r1 = src.data() + ay.hi[y] * in_w;
    const double ty = ay.frac[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const double tx = ax.frac[x];
      const double a = r0[ax.lo[x]] + tx * (r0[ax.hi[x]] - r0[ax.lo[x]]);
      const double b = r1[ax.lo[x]] + tx * (r1[ax.hi[x]] - r1[ax.lo[x]]);
      dst[y * out_w + x] = a + ty * (b - a);
    }
  }
  (void)in_h;
}

/// Adjoint of resample_plane: scatters output gradients back onto the source.
inline void resample_plane_adjoint(std::span<const double> grad_out, std::span<double> grad_src, std::size_t in_w,
                                   const ResampleAxis& ay, const ResampleAxis& ax) {
  const std::size_t out_h = ay.lo.size();
  const std::size_t out_w = ax.lo.size();
  for (std::size_t y = 0; y < out_h; ++y) {
    const double ty = ay.frac[y];
    double* r0 = grad_src.data() + ay.lo[y] * in_w;
    double* r1 = grad_src.data() + ay.hi[y] * in_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double g = grad_out[y * out_w + x];
      if (g == 0.0) continue;
      const double tx = ax.frac[x];
      const double ga = g * (1.0 - ty);
      const double gb = g * ty;
      r0[ax.lo[x]] += ga * (1.0 - tx);
      r0[ax.hi[x]] += ga * tx;
      r1[ax.lo[x]] += gb * (1.0 - tx);
      r1[ax.hi[x]] += gb * tx;
    }
  }
}

inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (src.height() == out_h && src.width() == out_w) return src;
  const auto ay = ResampleAxis::make(src.height(), out_h);
  const auto ax = ResampleAxis::make(src.width(), out_w);
  Image dst(src.channels(), out_h, out_w);
  for (std::size_t c = 0; c < src.channels(); ++c)
    resample_plane(src.plane(c), src.height(), src.width(), dst.plane(c), ay, ax);
  return dst;
}

inline Image resize_bilinear_adjoint(const Image& grad_out, std::size_t in_h, std::size_t in_w) {
  if (grad_out.height() == in_h && grad_out.width() == in_w) return grad_out;
  const auto ay = ResampleAxis::make(in_h, grad_out.height());
  const auto ax = ResampleAxis::make(in_w, grad_out.width());
  Image grad(grad_out.channels(), in_h, in_w);
  for (std::size_t c = 0; c < grad_out.channels(); ++c)
    resample_plane_adjoint(grad_out.plane(c), grad.plane(c), in_w, ay, ax);
  return grad;
}

}  // namespace pole

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pole/errors.hpp"
#include "pole/random.hpp"
#include "pole/tensor.hpp"

namespace pole {

/// An image with its multi-hot class vector.
struct ImageSample {
  Image pixels;             // channels x H x W, values in [0,1]
  std::vector<int> label;   // length K, entries 0/1
  std::string id;

  std::size_t num_classes() const { return label.size(); }

  std::vector<std::size_t> present_classes() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < label.size(); ++k)
      if (label[k] != 0) out.push_back(k);
    return out;
  }

  void validate() const {
    if (label.empty() || std::none_of(label.begin(), label.end(), [](int v) { return v != 0; }))
      throw ArgumentError("sample '" + id + "': label has no present class");
    if (std::any_of(label.begin(), label.end(), [](int v) { return v != 0 && v != 1; }))
      throw ArgumentError("sample '" + id + "': label must be binary");
    if (pixels.height() < 16 || pixels.width() < 16)
      throw ArgumentError("sample '" + id + "': image must be at least 16x16, got " + pixels.shape_string());
    if (!pixels.all_finite()) throw ArgumentError("sample '" + id + "': non-finite pixel");
  }
};

struct FeatureMap {
  Image values;  // C x H' x W'
  std::size_t stride = 1;
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  std::size_t channels() const { return values.channels(); }
};

/// 1x1 convolution weights, stored C x K row-major.
struct ClassifierHead {
  std::size_t channels = 0;
  std::size_t classes = 0;
  std::vector<double> weights;

  ClassifierHead() = default;
  ClassifierHead(std::size_t c, std::size_t k) : channels(c), classes(k), weights(c * k, 0.0) {}

  double& operator()(std::size_t c, std::size_t k) { return weights[c * classes + k]; }
  double operator()(std::size_t c, std::size_t k) const { return weights[c * classes + k]; }

  static ClassifierHead init(std::size_t c, std::size_t k, std::uint64_t seed) {
    if (c == 0 || k == 0) throw ArgumentError("classifier head dimensions must be positive");
    ClassifierHead head(c, k);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    for (auto& w : head.weights) w = uniform(rng, -bound, bound);
    return head;
  }
};

/// Per-class spatial maps, either raw logits or sigmoid-normalized.
struct ActivationMaps {
  Image values;  // K x H' x W'
  bool normalized = false;
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  std::size_t num_classes() const { return values.channels(); }
};

// ---------------------------------------------------------------------------
// Backbones

/// Cached intermediate state from a backbone forward pass, consumed by backward.
struct BackboneTape {
  Image pre_activation;
};

/// Injected feature extractor. Implementations are stateless apart from their
/// weights, so const methods may be called concurrently.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string name() const = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
  virtual std::size_t stride() const = 0;

  virtual FeatureMap forward(const Image& image, BackboneTape* tape = nullptr) const = 0;
  /// Accumulates weight gradients given dL/dZ. `grads` follows parameters() order.
  virtual void backward(const Image& image, const BackboneTape& tape, const Image& grad_features,
                        std::vector<std::vector<double>>& grads) const = 0;

  virtual std::vector<std::vector<double>*> parameters() = 0;
  virtual std::vector<const std::vector<double>*> parameters() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

/// Tiny deterministic convolutional backbone: per-channel input normalization
/// (ImageNet statistics for 3-channel input), 3x3 conv (zero padding) + bias,
/// ReLU, then stride x stride average pooling with partial edge windows.
class StubBackbone final : public Backbone {
 public:
  StubBackbone(std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::uint64_t seed)
      : in_(in_channels), out_(out_channels), stride_(stride),
        weights_(out_channels * in_channels * 9), bias_(out_channels) {
    if (in_channels == 0 || out_channels == 0 || stride == 0)
      throw ArgumentError("stub backbone dimensions must be positive");
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * 9));
    for (auto& w : weights_) w = uniform(rng, -bound, bound);
    for (auto& b : bias_) b = uniform(rng, -bound, bound);
  }

  std::string name() const override { return "stub"; }
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }
  std::size_t stride() const override { return stride_; }

  static std::size_t pooled(std::size_t n, std::size_t s) { return (n + s - 1) / s; }

  Image normalize_input(const Image& image) const {
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdev[3] = {0.229, 0.224, 0.225};
    Image out = image;
    if (in_ != 3) return out;
    for (std::size_t c = 0; c < 3; ++c)
      for (auto& v : out.plane(c)) v = (v - mean[c]) / stdev[c];
    return out;
  }

  FeatureMap forward(const Image& image, BackboneTape* tape) const override {
    if (image.channels() != in_)
      throw ConfigError("backbone expects " + std::to_string(in_) + " channels, image has " +
                        std::to_string(image.channels()));
    const Image input = normalize_input(image);
    const std::size_t h = image.height();
    const std::size_t w = image.width();
    Image pre(out_, h, w);
    for (std::size_t o = 0; o < out_; ++o) {
      auto dst = pre.plane(o);
      std::fill(dst.begin(), dst.end(), bias_[o]);
      for (std::size_t i = 0; i < in_; ++i) {
        const auto src = input.plane(i);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double k = weights_[((o * in_ + i) * 3 + (dy + 1)) * 3 + (dx + 1)];
            const std::size_t y0 = dy < 0 ? 1 : 0;
            const std::size_t y1 = dy > 0 ? h - 1 : h;
            const std::size_t x0 = dx < 0 ? 1 : 0;
            const std::size_t x1 = dx > 0 ? w - 1 : w;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* s = src.data() + (y + dy) * w + dx;
              double* d = dst.data() + y * w;
              for (std::size_t x = x0; x < x1; ++x) d[x] += k * s[x];
            }
          }
        }
      }
    }
    FeatureMap fm;
    fm.stride = stride_;
    fm.image_height = h;
    fm.image_width = w;
    const std::size_t ph = pooled(h, stride_);
    const std::size_t pw = pooled(w, stride_);
    fm.values = Image(out_, ph, pw);
    for (std::size_t o = 0; o < out_; ++o) {
      const auto p = pre.plane(o);
      for (std::size_t i = 0; i < ph; ++i) {
        const std::size_t ya = i * stride_, yb = std::min(h, ya + stride_);
        for (std::size_t j = 0; j < pw; ++j) {
          const std::size_t xa = j * stride_, xb = std::min(w, xa + stride_);
          double acc = 0.0;
          for (std::size_t y = ya; y < yb; ++y)
            for (std::size_t x = xa; x < xb; ++x) acc += std::max(0.0, p[y * w + x]);
          fm.values(o, i, j) = acc / static_cast<double>((yb - ya) * (xb - xa));
        }
      }
    }
    if (tape) tape->pre_activation = std::move(pre);
    return fm;
  }

  void backward(const Image& image, const BackboneTape& tape, const Image& grad_features,
                std::vector<std::vector<double>>& grads) const override {
    const Image input = normalize_input(image);
    const std::size_t h = image.height();
    const std::size_t w = image.width();
    const std::size_t ph = grad_features.height();
    const std::size_t pw = grad_features.width();
    auto& gw = grads.at(0);
    auto& gb = grads.at(1);
    std::vector<double> gpre(h * w);
    for (std::size_t o = 0; o < out_; ++o) {
      const auto pre = tape.pre_activation.plane(o);
      std::fill(gpre.begin(), gpre.end(), 0.0);
      for (std::size_t i = 0; i < ph; ++i) {
        const std::size_t ya = i * stride_, yb = std::min(h, ya + stride_);
        for (std::size_t j = 0; j < pw; ++j) {
          const std::size_t xa = j * stride_, xb = std::min(w, xa + stride_);
          const double g = grad_features(o, i, j) / static_cast<double>((yb - ya) * (xb - xa));
          for (std::size_t y = ya; y < yb; ++y)
            for (std::size_t x = xa; x < xb; ++x)
              if (pre[y * w + x] > 0.0) gpre[y * w + x] = g;
        }
      }
      double bias_acc = 0.0;
      for (double g : gpre) bias_acc += g;
      gb[o] += bias_acc;
      for (std::size_t c = 0; c < in_; ++c) {
        const auto src = input.plane(c);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t y0 = dy < 0 ? 1 : 0;
            const std::size_t y1 = dy > 0 ? h - 1 : h;
            const std::size_t x0 = dx < 0 ? 1 : 0;
            const std::size_t x1 = dx > 0 ? w - 1 : w;
            double acc = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* s = src.data() + (y + dy) * w + dx;
              const double* g = gpre.data() + y * w;
              for (std::size_t x = x0; x < x1; ++x) acc += g[x] * s[x];
            }
            gw[((o * in_ + c) * 3 + (dy + 1)) * 3 + (dx + 1)] += acc;
          }
        }
      }
    }
  }

  std::vector<std::vector<double>*> parameters() override { return {&weights_, &bias_}; }
  std::vector<const std::vector<double>*> parameters() const override { return {&weights_, &bias_}; }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<StubBackbone>(*this); }

 private:
  std::size_t in_;
  std::size_t out_;
  std::size_t stride_;
  std::vector<double> weights_;  // out x in x 3 x 3
  std::vector<double> bias_;
};

inline std::unique_ptr<Backbone> make_backbone(const std::string& kind, std::size_t in_channels,
                                               std::size_t out_channels, std::size_t stride, std::uint64_t seed) {
  if (kind == "stub") return std::make_unique<StubBackbone>(in_channels, out_channels, stride, seed);
  if (kind == "resnet50")
    throw ConfigError("backbone 'resnet50' needs pretrained ImageNet weights and is not bundled in this build");
  throw ConfigError("unknown backbone '" + kind + "'");
}

inline FeatureMap extract_features(const ImageSample& sample, const Backbone& backbone) {
  return backbone.forward(sample.pixels);
}

// ---------------------------------------------------------------------------
// Classification loss

template <std::floating_point T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <std::floating_point T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

inline void check_binary_label(std::span<const int> label) {
  for (int v : label)
    if (v != 0 && v != 1) throw ArgumentError("label entries must be 0 or 1");
}

/// Multi-label soft-margin loss, averaged over the K classes. Evaluated via
/// softplus so large logits stay finite.
template <std::floating_point T>
T multilabel_soft_margin_loss(std::span<const T> logits, std::span<const int> label) {
  if (logits.size() != label.size())
    throw ArgumentError("logits length " + std::to_string(logits.size()) + " != label length " +
                        std::to_string(label.size()));
  if (logits.empty()) throw ArgumentError("multi-label loss needs at least one class");
  check_binary_label(label);
  T acc = 0;
  for (std::size_t k = 0; k < logits.size(); ++k)
    acc += label[k] ? softplus(-logits[k]) : softplus(logits[k]);
  return acc / static_cast<T>(logits.size());
}

/// dL/dz_k = (sigmoid(z_k) - y_k) / K.
template <std::floating_point T>
std::vector<T> multilabel_soft_margin_grad(std::span<const T> logits, std::span<const int> label) {
  if (logits.size() != label.size()) throw ArgumentError("logits/label length mismatch");
  std::vector<T> g(logits.size());
  const T inv_k = T(1) / static_cast<T>(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) g[k] = (sigmoid(logits[k]) - static_cast<T>(label[k])) * inv_k;
  return g;
}

// ---------------------------------------------------------------------------
// CAMs

inline void check_head(const FeatureMap& features, const ClassifierHead& head) {
  if (head.channels != features.channels())
    throw ArgumentError("head expects " + std::to_string(head.channels) + " channels, features have " +
                        std::to_string(features.channels()));
}

inline ActivationMaps compute_raw_cam(const FeatureMap& features, const ClassifierHead& head) {
  check_head(features, head);
  const auto& z = features.values;
  ActivationMaps maps;
  maps.values = Image(head.classes, z.height(), z.width());
  maps.normalized = false;
  maps.image_height = features.image_height;
  maps.image_width = features.image_width;
  const std::size_t n = z.plane_size();
  for (std::size_t k = 0; k < head.classes; ++k) {
    auto dst = maps.values.plane(k);
    for (std::size_t c = 0; c < head.channels; ++c) {
      const double wk = head(c, k);
      const auto src = z.plane(c);
      for (std::size_t p = 0; p < n; ++p) dst[p] += wk * src[p];
    }
  }
  return maps;
}

/// Elementwise sigmoid. Outputs are kept strictly inside (0,1).
inline ActivationMaps sigmoid_normalize(const ActivationMaps& raw) {
  if (raw.normalized) throw ArgumentError("activation maps are already normalized");
  ActivationMaps out = raw;
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  for (auto& v : out.values.data()) v = std::clamp(sigmoid(v), lo, hi);
  out.normalized = true;
  return out;
}

/// Global average pooling followed by the 1x1 projection.
inline std::vector<double> classification_logits(const FeatureMap& features, const ClassifierHead& head) {
  check_head(features, head);
  const auto& z = features.values;
  std::vector<double> pooled(z.channels(), 0.0);
  for (std::size_t c = 0; c < z.channels(); ++c) {
    double acc = 0.0;
    for (double v : z.plane(c)) acc += v;
    pooled[c] = acc / static_cast<double>(z.plane_size());
  }
  std::vector<double> logits(head.classes, 0.0);
  for (std::size_t k = 0; k < head.classes; ++k)
    for (std::size_t c = 0; c < head.channels; ++c) logits[k] += head(c, k) * pooled[c];
  return logits;
}

/// Bilinear upsampling of one class map to the source image resolution.
inline std::vector<double> upsample_map(const ActivationMaps& maps, std::size_t k) {
  const std::size_t h = maps.image_height ? maps.image_height : maps.values.height();
  const std::size_t w = maps.image_width ? maps.image_width : maps.values.width();
  std::vector<double> out(h * w);
  if (h == maps.values.height() && w == maps.values.width()) {
    const auto src = maps.values.plane(k);
    std::copy(src.begin(), src.end(), out.begin());
    return out;
  }
  const auto ay = ResampleAxis::make(maps.values.height(), h);
  const auto ax = ResampleAxis::make(maps.values.width(), w);
  resample_plane(maps.values.plane(k), maps.values.height(), maps.values.width(), out, ay, ax);
  return out;
}

}  // namespace pole

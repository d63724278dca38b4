#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pole/cam_core.hpp"
#include "pole/errors.hpp"
#include "pole/prompt_space.hpp"
#include "pole/random.hpp"
#include "pole/tensor.hpp"

namespace pole {

enum class Modality { visual, text };
enum class Polarity { foreground, background };

struct EmbeddingVector {
  std::vector<double> values;
  Modality modality = Modality::visual;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

struct MaskedImage {
  Image pixels;
  Polarity polarity = Polarity::foreground;
  std::size_t class_index = 0;
};

// ---------------------------------------------------------------------------
// Cosine similarity

template <std::floating_point T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <std::floating_point T>
T cosine_similarity(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size())
    throw ArgumentError("cosine similarity dimension mismatch: " + std::to_string(u.size()) + " vs " +
                        std::to_string(v.size()));
  const T nu = std::sqrt(dot(u, u));
  const T nv = std::sqrt(dot(v, v));
  if (nu == T(0) || nv == T(0)) throw ArgumentError("cosine similarity of a zero-norm vector");
  return std::clamp(dot(u, v) / (nu * nv), T(-1), T(1));
}

inline double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v) {
  return cosine_similarity<double>(u.values, v.values);
}

/// Gradients of cos(u, v) with respect to u and v.
struct CosineGrad {
  std::vector<double> du;
  std::vector<double> dv;
};

inline CosineGrad cosine_similarity_grad(std::span<const double> u, std::span<const double> v) {
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw ArgumentError("cosine similarity of a zero-norm vector");
  const double c = dot(u, v) / (nu * nv);
  CosineGrad g{std::vector<double>(u.size()), std::vector<double>(v.size())};
  for (std::size_t i = 0; i < u.size(); ++i) {
    g.du[i] = v[i] / (nu * nv) - c * u[i] / (nu * nu);
    g.dv[i] = u[i] / (nu * nv) - c * v[i] / (nv * nv);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Encoders

/// Encoder-side intermediate state needed to push gradients back to pixels.
struct VisualTape {
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  Image hidden;
};

/// Frozen image encoder operating on preprocessed (resized, normalized) input.
class VisualEncoder {
 public:
  virtual ~VisualEncoder() = default;
  virtual std::string identity() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t input_size() const = 0;
  virtual std::array<double, 3> channel_mean() const = 0;
  virtual std::array<double, 3> channel_std() const = 0;
  virtual std::vector<double> embed(const Image& preprocessed, VisualTape* tape) const = 0;
  virtual Image embed_backward(const VisualTape& tape, std::span<const double> grad) const = 0;
  virtual std::uint64_t weight_checksum() const = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string identity() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(const std::string& prompt) const = 0;
  virtual std::uint64_t weight_checksum() const = 0;
};

inline std::uint64_t checksum_doubles(std::uint64_t h, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix_seed(h, bits);
  }
  return h;
}

// CLIP's published preprocessing statistics.
inline constexpr std::array<double, 3> kClipMean = {0.48145466, 0.4578275, 0.40821073};
inline constexpr std::array<double, 3> kClipStd = {0.26862954, 0.26130258, 0.27577711};

/// Seeded stand-in for a CLIP image tower: random tanh features of each pixel's
/// colour, averaged over a grid x grid layout of cells, then a fixed random
/// projection to `dim`.
///
/// Weights are drawn from mt19937_64(seed) in this order, each value as
/// 2*u-1 with u = (draw >> 11) * 2^-53: colour map A (features x 3, row-major),
/// bias b (features), projection R (dim x (features*grid*grid + 1), row-major)
/// scaled by sqrt(3 / fan_in).
class MockVisualEncoder final : public VisualEncoder {
 public:
  MockVisualEncoder(std::uint64_t seed, std::size_t dim = 64, std::size_t input_size = 32, std::size_t features = 32,
                    std::size_t grid = 2)
      : seed_(seed), dim_(dim), input_(input_size), features_(features), grid_(grid) {
    if (dim == 0 || input_size == 0 || features == 0 || grid == 0 || input_size < grid)
      throw ArgumentError("invalid mock visual encoder dimensions");
    Rng rng(seed);
    colour_.resize(features * 3);
    bias_.resize(features);
    for (auto& a : colour_) a = 2.0 * uniform01(rng) - 1.0;
    for (auto& b : bias_) b = 2.0 * uniform01(rng) - 1.0;
    const std::size_t fan_in = features * grid * grid + 1;
    const double scale = std::sqrt(3.0 / static_cast<double>(fan_in));
    projection_.resize(dim * fan_in);
    for (auto& r : projection_) r = (2.0 * uniform01(rng) - 1.0) * scale;
    cell_index_.resize(input_size * input_size);
    cell_counts_.assign(grid * grid, 0.0);
    for (std::size_t y = 0; y < input_size; ++y)
      for (std::size_t x = 0; x < input_size; ++x) {
        const std::size_t c = (y * grid / input_size) * grid + x * grid / input_size;
        cell_index_[y * input_size + x] = c;
        cell_counts_[c] += 1.0;
      }
  }

  std::string identity() const override {
    return "mock-visual-s" + std::to_string(seed_) + "-d" + std::to_string(dim_) + "-i" + std::to_string(input_);
  }
  std::size_t dim() const override { return dim_; }
  std::size_t input_size() const override { return input_; }
  std::array<double, 3> channel_mean() const override { return kClipMean; }
  std::array<double, 3> channel_std() const override { return kClipStd; }

  std::vector<double> embed(const Image& x, VisualTape* tape) const override {
    if (x.channels() != 3 || x.height() != input_ || x.width() != input_)
      throw ArgumentError("mock visual encoder expects 3x" + std::to_string(input_) + "x" + std::to_string(input_) +
                          " input, got " + x.shape_string());
    const std::size_t n = x.plane_size();
    Image hidden(features_, input_, input_);
    std::vector<double> phi(features_ * grid_ * grid_ + 1, 0.0);
    for (std::size_t f = 0; f < features_; ++f) {
      const double a0 = colour_[f * 3], a1 = colour_[f * 3 + 1], a2 = colour_[f * 3 + 2];
      const auto r = x.plane(0), g = x.plane(1), b = x.plane(2);
      auto h = hidden.plane(f);
      for (std::size_t p = 0; p < n; ++p) h[p] = std::tanh(a0 * r[p] + a1 * g[p] + a2 * b[p] + bias_[f]);
      double* cells = phi.data() + f * grid_ * grid_;
      for (std::size_t p = 0; p < n; ++p) cells[cell_index_[p]] += h[p];
      for (std::size_t c = 0; c < grid_ * grid_; ++c) cells[c] /= cell_counts_[c];
    }
    phi.back() = 1.0;
    std::vector<double> out(dim_, 0.0);
    const std::size_t fan_in = phi.size();
    for (std::size_t d = 0; d < dim_; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j < fan_in; ++j) acc += projection_[d * fan_in + j] * phi[j];
      out[d] = acc;
    }
    if (tape) tape->hidden = std::move(hidden);
    return out;
  }

  Image embed_backward(const VisualTape& tape, std::span<const double> grad) const override {
    const std::size_t fan_in = features_ * grid_ * grid_ + 1;
    std::vector<double> gphi(fan_in, 0.0);
    for (std::size_t d = 0; d < dim_; ++d)
      for (std::size_t j = 0; j < fan_in; ++j) gphi[j] += projection_[d * fan_in + j] * grad[d];
    Image gx(3, input_, input_);
    auto gr = gx.plane(0), gg = gx.plane(1), gb = gx.plane(2);
    for (std::size_t f = 0; f < features_; ++f) {
      const auto h = tape.hidden.plane(f);
      const double a0 = colour_[f * 3], a1 = colour_[f * 3 + 1], a2 = colour_[f * 3 + 2];
      const double* gcells = gphi.data() + f * grid_ * grid_;
      for (std::size_t p = 0; p < h.size(); ++p) {
        const std::size_t c = cell_index_[p];
        const double gpre = gcells[c] / cell_counts_[c] * (1.0 - h[p] * h[p]);
        gr[p] += a0 * gpre;
        gg[p] += a1 * gpre;
        gb[p] += a2 * gpre;
      }
    }
    return gx;
  }

  std::uint64_t weight_checksum() const override {
    auto h = checksum_doubles(seed_, colour_);
    h = checksum_doubles(h, bias_);
    return checksum_doubles(h, projection_);
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::size_t input_;
  std::size_t features_;
  std::size_t grid_;
  std::vector<double> colour_;
  std::vector<double> bias_;
  std::vector<double> projection_;
  std::vector<std::size_t> cell_index_;
  std::vector<double> cell_counts_;
};

/// Seeded stand-in for a CLIP text tower: each prompt seeds
/// mt19937_64(mix_seed(seed, fnv1a64(prompt))) and takes `dim` draws as 2*u-1.
class MockTextEncoder final : public TextEncoder {
 public:
  explicit MockTextEncoder(std::uint64_t seed, std::size_t dim = 64) : seed_(seed), dim_(dim) {
    if (dim == 0) throw ArgumentError("mock text encoder dimension must be positive");
  }

  std::string identity() const override { return "mock-text-s" + std::to_string(seed_) + "-d" + std::to_string(dim_); }
  std::size_t dim() const override { return dim_; }

  std::vector<double> embed(const std::string& prompt) const override {
    Rng rng(mix_seed(seed_, fnv1a64(prompt)));
    std::vector<double> out(dim_);
    for (auto& v : out) v = 2.0 * uniform01(rng) - 1.0;
    return out;
  }

  std::uint64_t weight_checksum() const override { return mix_seed(seed_, dim_); }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Text embeddings keyed on the exact rendered prompt, with insert-if-absent
/// semantics under a mutex.
class TextEmbeddingCache {
 public:
  template <typename Fn>
  std::vector<double> get_or_compute(const std::string& prompt, Fn&& compute) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = entries_.find(prompt); it != entries_.end()) {
        ++hits_;
        return it->second;
      }
    }
    auto value = compute(prompt);
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_.try_emplace(prompt, std::move(value));
    if (inserted) ++misses_;
    else ++hits_;
    return it->second;
  }

  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }
  std::size_t misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  void clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
  }

  /// Persists entries for `identity`; returns false if the file could not be written.
  bool save(const std::string& path, const std::string& identity) const {
    nlohmann::json doc;
    doc["encoder"] = identity;
    {
      std::lock_guard lock(mutex_);
      std::map<std::string, std::vector<double>> ordered(entries_.begin(), entries_.end());
      doc["entries"] = ordered;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) return false;
    out << doc.dump();
    return static_cast<bool>(out);
  }

  /// Loads a cache file if it belongs to `identity`; mismatched files are ignored.
  bool load(const std::string& path, const std::string& identity) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
      return false;
    }
    if (doc.value("encoder", std::string()) != identity) return false;
    std::lock_guard lock(mutex_);
    for (auto& [k, v] : doc["entries"].items()) entries_.try_emplace(k, v.get<std::vector<double>>());
    return true;
  }

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct EncoderPair {
  std::shared_ptr<const VisualEncoder> visual;
  std::shared_ptr<const TextEncoder> text;
  std::size_t dim = 0;
  bool frozen = true;
  std::shared_ptr<TextEmbeddingCache> text_cache = std::make_shared<TextEmbeddingCache>();

  std::string identity() const { return visual->identity() + "+" + text->identity(); }
  std::uint64_t weight_checksum() const { return mix_seed(visual->weight_checksum(), text->weight_checksum()); }
};

inline EncoderPair make_mock_encoders(std::uint64_t seed, std::size_t dim = 64, std::size_t input_size = 32) {
  EncoderPair pair;
  pair.visual = std::make_shared<MockVisualEncoder>(seed, dim, input_size);
  pair.text = std::make_shared<MockTextEncoder>(mix_seed(seed, 0x7e47), dim);
  pair.dim = dim;
  pair.frozen = true;
  return pair;
}

inline EncoderPair make_encoders(const std::string& kind, std::uint64_t mock_seed, std::size_t dim = 64,
                                 std::size_t input_size = 32) {
  if (kind == "mock") return make_mock_encoders(mock_seed, dim, input_size);
  if (kind == "clip-resnet50" || kind == "clip-vit-b16")
    throw ConfigError("encoder '" + kind + "' needs pretrained CLIP weights, which are not bundled in this build");
  throw ConfigError("unknown encoder '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Masking and embedding

/// Foreground X*P_k and background X*(1-P_k), with P_k bilinearly upsampled to
/// the image resolution and broadcast over channels.
inline std::pair<MaskedImage, MaskedImage> make_masked_pair(const ImageSample& sample, const ActivationMaps& maps,
                                                            std::size_t k) {
  if (!maps.normalized) throw ArgumentError("masking requires sigmoid-normalized activation maps");
  if (k >= maps.num_classes())
    throw ArgumentError("class index " + std::to_string(k) + " out of range for " +
                        std::to_string(maps.num_classes()) + " maps");
  ActivationMaps sized = maps;
  sized.image_height = sample.pixels.height();
  sized.image_width = sample.pixels.width();
  const auto p = upsample_map(sized, k);
  const auto& x = sample.pixels;
  MaskedImage fg{Image(x.channels(), x.height(), x.width()), Polarity::foreground, k};
  MaskedImage bg{Image(x.channels(), x.height(), x.width()), Polarity::background, k};
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto src = x.plane(c);
    auto f = fg.pixels.plane(c);
    auto b = bg.pixels.plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) {
      f[i] = src[i] * p[i];
      b[i] = src[i] * (1.0 - p[i]);
    }
  }
  return {std::move(fg), std::move(bg)};
}

/// Resize to the encoder's native input, then per-channel normalization.
inline Image preprocess_for_encoder(const Image& img, const VisualEncoder& enc) {
  if (img.channels() != 3) throw ArgumentError("visual encoder expects 3-channel images");
  Image out = resize_bilinear(img, enc.input_size(), enc.input_size());
  const auto mean = enc.channel_mean();
  const auto stdev = enc.channel_std();
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : out.plane(c)) v = (v - mean[c]) / stdev[c];
  return out;
}

/// Raw visual embedding of an image; fills `tape` for visual_backward.
inline std::vector<double> visual_forward(const Image& img, const EncoderPair& enc, VisualTape* tape = nullptr) {
  if (!img.all_finite()) throw ArgumentError("image contains non-finite pixels");
  const Image pre = preprocess_for_encoder(img, *enc.visual);
  auto v = enc.visual->embed(pre, tape);
  if (tape) {
    tape->source_height = img.height();
    tape->source_width = img.width();
  }
  return v;
}

/// dL/d(pixels) given dL/d(embedding). Encoder weights receive no gradient.
inline Image visual_backward(const VisualTape& tape, std::span<const double> grad, const EncoderPair& enc) {
  Image g = enc.visual->embed_backward(tape, grad);
  const auto stdev = enc.visual->channel_std();
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : g.plane(c)) v /= stdev[c];
  return resize_bilinear_adjoint(g, tape.source_height, tape.source_width);
}

inline EmbeddingVector encode_image(const MaskedImage& img, const EncoderPair& enc) {
  return {visual_forward(img.pixels, enc), Modality::visual};
}

inline EmbeddingVector encode_text(const std::string& prompt, const EncoderPair& enc) {
  if (prompt.empty()) throw ArgumentError("empty prompt string");
  auto values = enc.text_cache->get_or_compute(prompt, [&](const std::string& p) { return enc.text->embed(p); });
  return {std::move(values), Modality::text};
}

inline std::vector<EmbeddingVector> encode_texts(const PromptSet& prompts, const EncoderPair& enc) {
  if (prompts.prompts.empty()) throw ArgumentError("prompt set is empty");
  std::vector<EmbeddingVector> out;
  out.reserve(prompts.prompts.size());
  for (const auto& p : prompts.prompts) out.push_back(encode_text(p, enc));
  return out;
}

}  // namespace pole

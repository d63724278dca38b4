#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pole/cam_core.hpp"
#include "pole/errors.hpp"
#include "pole/image_io.hpp"
#include "pole/prompt_space.hpp"
#include "pole/pseudo_labels.hpp"
#include "pole/random.hpp"

namespace pole {

struct DatasetItem {
  ImageSample sample;
  std::optional<PseudoMask> mask;
};

struct Dataset {
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<DatasetItem> items;
};

// ---------------------------------------------------------------------------
// Synthetic blobs

struct Blob {
  std::size_t class_index = 0;
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

struct ToyItem {
  ImageSample sample;
  PseudoMask mask;
  std::vector<Blob> blobs;
};

inline std::array<double, 3> toy_class_colour(std::size_t k) {
  // Golden-ratio hue spacing, fixed saturation and value.
  const double hue = std::fmod(0.05 + 0.618033988749895 * static_cast<double>(k), 1.0) * 6.0;
  const double s = 0.85, v = 0.9;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline bool inside_disk(const Blob& b, std::size_t x, std::size_t y) {
  const double dx = static_cast<double>(x) + 0.5 - b.cx;
  const double dy = static_cast<double>(y) + 0.5 - b.cy;
  return dx * dx + dy * dy <= b.radius * b.radius;
}

inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

/// Images of `size` x `size` with one coloured disk per present class on a
/// striped, noisy background. Disks never overlap, so every label entry
/// corresponds to visible pixels. Pixel values are multiples of 1/255.
inline std::vector<ToyItem> make_toy_dataset(std::int64_t n, std::int64_t num_classes, std::int64_t size,
                                             std::uint64_t seed) {
  if (n <= 0 || num_classes <= 0 || size <= 0) throw ArgumentError("toy dataset dimensions must be positive");
  if (num_classes > 254) throw ArgumentError("toy dataset supports at most 254 classes");
  const auto k_count = static_cast<std::size_t>(num_classes);
  const auto sz = static_cast<std::size_t>(size);
  const double side = static_cast<double>(size);
  std::vector<ToyItem> items;
  items.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    ToyItem item;
    char id[32];
    std::snprintf(id, sizeof id, "toy_%05lld", static_cast<long long>(i));
    item.sample.id = id;
    item.sample.label.assign(k_count, 0);

    std::vector<std::size_t> wanted;
    for (std::size_t k = 0; k < k_count; ++k)
      if (uniform01(rng) < 0.5) wanted.push_back(k);
    if (wanted.empty()) wanted.push_back(uniform_index(rng, k_count));

    for (std::size_t k : wanted) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        Blob b;
        b.class_index = k;
        b.radius = uniform(rng, side / 8.0, side / 4.0);
        b.cx = uniform(rng, b.radius, side - b.radius);
        b.cy = uniform(rng, b.radius, side - b.radius);
        const bool clash = std::any_of(item.blobs.begin(), item.blobs.end(), [&](const Blob& o) {
          return std::hypot(o.cx - b.cx, o.cy - b.cy) < o.radius + b.radius + 1.0;
        });
        if (clash) continue;
        item.blobs.push_back(b);
        item.sample.label[k] = 1;
        break;
      }
    }
    if (item.blobs.empty()) {
      // Only reachable when the first placement failed 50 times, which a lone disk cannot.
      throw PipelineError("toy generator could not place any blob");
    }

    const double base = uniform(rng, 0.35, 0.55);
    const double phase = uniform(rng, 0.0, 6.283185307179586);
    const double angle = uniform(rng, 0.0, 3.141592653589793);
    const double freq = uniform(rng, 0.15, 0.45);
    const double ca = std::cos(angle), sa = std::sin(angle);
    Image& px = item.sample.pixels = Image(3, sz, sz);
    item.mask.image_id = item.sample.id;
    item.mask.height = sz;
    item.mask.width = sz;
    item.mask.labels.assign(sz * sz, 0);
    for (std::size_t y = 0; y < sz; ++y) {
      for (std::size_t x = 0; x < sz; ++x) {
        const double stripe = 0.08 * std::sin(freq * (ca * x + sa * y) + phase);
        const Blob* hit = nullptr;
        for (const auto& b : item.blobs)
          if (inside_disk(b, x, y)) hit = &b;
        if (hit) {
          const auto col = toy_class_colour(hit->class_index);
          for (std::size_t c = 0; c < 3; ++c) px(c, y, x) = quantize8(col[c] + uniform(rng, -0.04, 0.04));
          item.mask.at(y, x) = static_cast<std::uint8_t>(hit->class_index + 1);
        } else {
          for (std::size_t c = 0; c < 3; ++c)
            px(c, y, x) = quantize8(base + stripe + 0.03 * static_cast<double>(c) + uniform(rng, -0.04, 0.04));
        }
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<std::string> toy_class_names(std::size_t k) {
  std::vector<std::string> names;
  const auto& voc = voc_class_names();
  for (std::size_t i = 0; i < k; ++i) names.push_back(i < voc.size() ? voc[i] : "class" + std::to_string(i));
  return names;
}

/// Writes images/<id>.png, masks/<id>.png and index.json.
inline void save_toy_dataset(const std::filesystem::path& dir, const std::vector<ToyItem>& items,
                             std::size_t num_classes) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  nlohmann::ordered_json index;
  index["format"] = "pole-toy-1";
  index["num_classes"] = num_classes;
  index["class_names"] = toy_class_names(num_classes);
  auto& list = index["items"] = nlohmann::ordered_json::array();
  for (const auto& it : items) {
    write_png_rgb((dir / "images" / (it.sample.id + ".png")).string(), it.sample.pixels);
    write_png_labels((dir / "masks" / (it.sample.id + ".png")).string(), it.mask);
    nlohmann::ordered_json e;
    e["id"] = it.sample.id;
    e["label"] = it.sample.label;
    auto& blobs = e["blobs"] = nlohmann::ordered_json::array();
    for (const auto& b : it.blobs) blobs.push_back({{"class", b.class_index}, {"cx", b.cx}, {"cy", b.cy}, {"r", b.radius}});
    list.push_back(std::move(e));
  }
  std::ofstream out(dir / "index.json", std::ios::binary);
  out << index.dump(1) << '\n';
}

inline Dataset load_toy_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json", std::ios::binary);
  if (!in) throw ConfigError("toy dataset '" + dir.string() + "' has no index.json");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("toy index: " + std::string(e.what()));
  }
  Dataset ds;
  ds.num_classes = index.at("num_classes").get<std::size_t>();
  ds.class_names = index.at("class_names").get<std::vector<std::string>>();
  for (const auto& e : index.at("items")) {
    DatasetItem item;
    item.sample.id = e.at("id").get<std::string>();
    item.sample.label = e.at("label").get<std::vector<int>>();
    item.sample.pixels = read_png_rgb((dir / "images" / (item.sample.id + ".png")).string());
    const auto mask_path = dir / "masks" / (item.sample.id + ".png");
    if (std::filesystem::exists(mask_path)) item.mask = read_png_labels(mask_path.string(), item.sample.id);
    item.sample.validate();
    ds.items.push_back(std::move(item));
  }
  return ds;
}

/// VOC2012 layout: JPEGImages/, SegmentationClass/ (palette PNG) and
/// ImageSets/Segmentation/<split>.txt. Image-level labels come from the masks;
/// images without any foreground class are skipped.
inline Dataset load_voc_dataset(const std::filesystem::path& root, const std::string& split) {
  const auto list_path = root / "ImageSets" / "Segmentation" / (split + ".txt");
  std::ifstream list(list_path);
  if (!list) throw ConfigError("VOC split list '" + list_path.string() + "' not found");
  Dataset ds;
  ds.class_names = voc_class_names();
  ds.num_classes = ds.class_names.size();
  std::string id;
  while (list >> id) {
    DatasetItem item;
    item.sample.id = id;
    item.sample.pixels = read_jpeg_rgb((root / "JPEGImages" / (id + ".jpg")).string());
    const auto mask_path = root / "SegmentationClass" / (id + ".png");
    if (!std::filesystem::exists(mask_path)) throw IngestionError("VOC image '" + id + "' has no segmentation mask");
    auto mask = read_png_labels(mask_path.string(), id);
    if (mask.height != item.sample.pixels.height() || mask.width != item.sample.pixels.width())
      throw IngestionError("VOC mask for '" + id + "' does not match its image size");
    item.sample.label.assign(ds.num_classes, 0);
    for (auto v : mask.labels)
      if (v >= 1 && v <= ds.num_classes) item.sample.label[v - 1] = 1;
    if (std::none_of(item.sample.label.begin(), item.sample.label.end(), [](int v) { return v != 0; })) continue;
    item.mask = std::move(mask);
    item.sample.validate();
    ds.items.push_back(std::move(item));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& format, const std::string& dir, const std::string& split = "train") {
  if (format == "toy") return load_toy_dataset(dir);
  if (format == "voc") return load_voc_dataset(dir, split);
  throw ConfigError("unknown dataset format '" + format + "'");
}

// ---------------------------------------------------------------------------
// Training-time augmentation

struct Augmentation {
  double rescale_min = 1.0;
  double rescale_max = 1.0;
  bool hflip = false;
  std::size_t crop = 0;
};

/// Random rescale, horizontal flip, then a random crop (zero padded when the
/// image is smaller than the crop). Labels are unchanged.
inline ImageSample augment(const ImageSample& in, const Augmentation& aug, Rng& rng) {
  ImageSample out = in;
  const double scale = aug.rescale_min == aug.rescale_max ? aug.rescale_min : uniform(rng, aug.rescale_min, aug.rescale_max);
  if (scale != 1.0) {
    const auto h = std::max<std::size_t>(16, static_cast<std::size_t>(std::lround(in.pixels.height() * scale)));
    const auto w = std::max<std::size_t>(16, static_cast<std::size_t>(std::lround(in.pixels.width() * scale)));
    out.pixels = resize_bilinear(in.pixels, h, w);
  }
  if (aug.hflip && uniform01(rng) < 0.5) {
    Image& p = out.pixels;
    for (std::size_t c = 0; c < p.channels(); ++c)
      for (std::size_t y = 0; y < p.height(); ++y)
        std::reverse(p.plane(c).begin() + y * p.width(), p.plane(c).begin() + (y + 1) * p.width());
  }
  if (aug.crop > 0) {
    const Image& src = out.pixels;
    const std::size_t h = src.height(), w = src.width();
    const std::size_t ch = aug.crop, cw = aug.crop;
    const std::size_t oy = h > ch ? uniform_index(rng, h - ch + 1) : 0;
    const std::size_t ox = w > cw ? uniform_index(rng, w - cw + 1) : 0;
    Image crop(src.channels(), ch, cw, 0.0);
    for (std::size_t c = 0; c < src.channels(); ++c)
      for (std::size_t y = 0; y < ch && oy + y < h; ++y)
        for (std::size_t x = 0; x < cw && ox + x < w; ++x) crop(c, y, x) = src(c, oy + y, ox + x);
    out.pixels = std::move(crop);
  }
  return out;
}

}  // namespace pole

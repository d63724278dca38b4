#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pole/cam_core.hpp"
#include "pole/errors.hpp"

namespace pole {

/// Label 0 is background, k+1 is class k. Reference masks may carry
/// `kIgnoreLabel` on pixels excluded from scoring.
struct PseudoMask {
  std::vector<std::uint8_t> labels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string image_id;

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

  friend bool operator==(const PseudoMask&, const PseudoMask&) = default;
};

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct EvalReport {
  std::size_t num_labels = 0;  // K + 1
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  std::vector<std::uint64_t> confusion;  // row = reference, column = prediction

  std::uint64_t confusion_at(std::size_t ref, std::size_t pred) const { return confusion[ref * num_labels + pred]; }
};

/// Background wherever the strongest present-class activation is below
/// `bg_threshold`, otherwise the strongest present class (lowest index on ties).
inline PseudoMask cams_to_pseudo_mask(const ActivationMaps& maps, std::span<const int> label, double bg_threshold,
                                      const std::string& image_id = {}) {
  if (!maps.normalized) throw ArgumentError("pseudo masks need normalized activation maps");
  if (!(bg_threshold > 0.0 && bg_threshold < 1.0))
    throw ArgumentError("bg_threshold must lie in (0, 1), got " + std::to_string(bg_threshold));
  if (label.size() != maps.num_classes()) throw ArgumentError("label length does not match the number of maps");
  if (maps.num_classes() > 254) throw ArgumentError("too many classes for 8-bit masks");
  PseudoMask mask;
  mask.image_id = image_id;
  mask.height = maps.image_height ? maps.image_height : maps.values.height();
  mask.width = maps.image_width ? maps.image_width : maps.values.width();
  mask.labels.assign(mask.height * mask.width, 0);
  std::vector<double> best(mask.labels.size(), -1.0);
  for (std::size_t k = 0; k < maps.num_classes(); ++k) {
    if (!label[k]) continue;
    const auto up = upsample_map(maps, k);
    for (std::size_t p = 0; p < up.size(); ++p) {
      if (up[p] > best[p]) {
        best[p] = up[p];
        mask.labels[p] = static_cast<std::uint8_t>(k + 1);
      }
    }
  }
  for (std::size_t p = 0; p < best.size(); ++p)
    if (best[p] < bg_threshold) mask.labels[p] = 0;
  return mask;
}

/// Adds one image's pixel counts into a (K+1)x(K+1) confusion matrix.
inline void accumulate_confusion(const PseudoMask& pred, const PseudoMask& ref, std::size_t num_labels,
                                 std::vector<std::uint64_t>& confusion) {
  if (pred.image_id != ref.image_id)
    throw ArgumentError("prediction '" + pred.image_id + "' paired with reference '" + ref.image_id + "'");
  if (pred.height != ref.height || pred.width != ref.width)
    throw ArgumentError("mask shape mismatch for '" + ref.image_id + "'");
  for (std::size_t p = 0; p < ref.labels.size(); ++p) {
    const std::size_t r = ref.labels[p];
    const std::size_t q = pred.labels[p];
    if (r == kIgnoreLabel || q == kIgnoreLabel) continue;
    if (r >= num_labels || q >= num_labels)
      throw ArgumentError("label value out of range in '" + ref.image_id + "'");
    ++confusion[r * num_labels + q];
  }
}

inline EvalReport report_from_confusion(std::vector<std::uint64_t> confusion, std::size_t num_labels) {
  EvalReport rep;
  rep.num_labels = num_labels;
  rep.confusion = std::move(confusion);
  rep.per_class_iou.assign(num_labels, std::nullopt);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_labels; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < num_labels; ++j) {
      row += rep.confusion[c * num_labels + j];
      col += rep.confusion[j * num_labels + c];
    }
    const std::uint64_t tp = rep.confusion[c * num_labels + c];
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    rep.per_class_iou[c] = iou;
    sum += iou;
    ++counted;
  }
  rep.miou = counted ? sum / static_cast<double>(counted) : 0.0;
  return rep;
}

/// Dataset-pooled IoU per label (background included) and their mean over
/// labels that occur in either predictions or references.
inline EvalReport evaluate_miou(const std::vector<PseudoMask>& preds, const std::vector<PseudoMask>& refs,
                                std::size_t num_classes) {
  if (preds.size() != refs.size())
    throw ArgumentError("got " + std::to_string(preds.size()) + " predictions for " + std::to_string(refs.size()) +
                        " references");
  const std::size_t n = num_classes + 1;
  std::vector<std::uint64_t> confusion(n * n, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) accumulate_confusion(preds[i], refs[i], n, confusion);
  return report_from_confusion(std::move(confusion), n);
}

inline nlohmann::ordered_json to_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["miou"] = rep.miou;
  auto& iou = j["per_class_iou"] = nlohmann::ordered_json::array();
  for (const auto& v : rep.per_class_iou) iou.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json());
  auto& conf = j["confusion"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < rep.num_labels; ++r) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < rep.num_labels; ++c) row.push_back(rep.confusion_at(r, c));
    conf.push_back(row);
  }
  return j;
}

// ---------------------------------------------------------------------------
// CAM dumps: row-major little-endian float32 blob plus a JSON sidecar.

struct CamDump {
  std::string image_id;
  std::size_t num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> class_indices;
  std::vector<float> values;  // class_indices.size() x height x width

  friend bool operator==(const CamDump&, const CamDump&) = default;
};

inline CamDump make_cam_dump(const ActivationMaps& maps, const std::vector<std::size_t>& class_indices,
                             const std::string& image_id) {
  CamDump d;
  d.image_id = image_id;
  d.num_classes = maps.num_classes();
  d.height = maps.values.height();
  d.width = maps.values.width();
  d.class_indices = class_indices;
  d.values.reserve(class_indices.size() * d.height * d.width);
  for (std::size_t k : class_indices) {
    if (k >= d.num_classes) throw ArgumentError("dump class index out of range");
    for (double v : maps.values.plane(k)) d.values.push_back(static_cast<float>(v));
  }
  return d;
}

inline void write_cam_dump(const std::filesystem::path& dir, const CamDump& d) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / (d.image_id + ".bin"), std::ios::binary);
  if (!blob) throw PipelineError("cannot write CAM blob for '" + d.image_id + "'");
  std::vector<unsigned char> bytes(d.values.size() * 4);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &d.values[i], 4);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  blob.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  nlohmann::ordered_json side;
  side["image_id"] = d.image_id;
  side["K"] = d.num_classes;
  side["H'"] = d.height;
  side["W'"] = d.width;
  side["class_indices"] = d.class_indices;
  std::ofstream js(dir / (d.image_id + ".json"), std::ios::binary);
  js << side.dump(2) << '\n';
}

inline CamDump read_cam_dump(const std::filesystem::path& dir, const std::string& image_id) {
  std::ifstream js(dir / (image_id + ".json"), std::ios::binary);
  if (!js) throw IngestionError("missing CAM sidecar for '" + image_id + "'");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("bad CAM sidecar for '" + image_id + "': " + e.what());
  }
  CamDump d;
  d.image_id = side.at("image_id").get<std::string>();
  d.num_classes = side.at("K").get<std::size_t>();
  d.height = side.at("H'").get<std::size_t>();
  d.width = side.at("W'").get<std::size_t>();
  d.class_indices = side.at("class_indices").get<std::vector<std::size_t>>();
  const std::size_t count = d.class_indices.size() * d.height * d.width;
  std::ifstream blob(dir / (image_id + ".bin"), std::ios::binary);
  if (!blob) throw IngestionError("missing CAM blob for '" + image_id + "'");
  std::vector<unsigned char> bytes(count * 4);
  blob.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(blob.gcount()) != bytes.size())
    throw IngestionError("CAM blob for '" + image_id + "' is truncated");
  d.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    std::memcpy(&d.values[i], &bits, 4);
  }
  return d;
}

/// Expands a dump to K maps; classes absent from the dump are zero.
inline ActivationMaps cam_dump_to_maps(const CamDump& d, std::size_t image_height = 0, std::size_t image_width = 0) {
  ActivationMaps maps;
  maps.values = Image(d.num_classes, d.height, d.width);
  maps.normalized = true;
  maps.image_height = image_height;
  maps.image_width = image_width;
  const std::size_t plane = d.height * d.width;
  for (std::size_t i = 0; i < d.class_indices.size(); ++i) {
    auto dst = maps.values.plane(d.class_indices[i]);
    for (std::size_t p = 0; p < plane; ++p) dst[p] = d.values[i * plane + p];
  }
  return maps;
}

}  // namespace pole

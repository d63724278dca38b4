#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pole/image_io.hpp"
#include "pole/pipeline/checkpoint.hpp"
#include "pole/pipeline/dataset.hpp"
#include "pole/pipeline/model.hpp"
#include "pole/pseudo_labels.hpp"

namespace pole {

struct EvalOutcome {
  std::optional<EvalReport> report;  // empty when reference masks are missing
  std::size_t num_images = 0;
  std::vector<std::string> warnings;
};

using WarnFn = std::function<void(const std::string&)>;

/// CAMs of `ckpt` over `ds`: writes cams/<id>.{bin,json} (present classes
/// only), masks/<id>.png and eval_report.json into `out_dir`.
inline EvalOutcome eval_cams(const Checkpoint& ckpt, const Dataset& ds, double bg_threshold,
                             const std::filesystem::path& out_dir, const WarnFn& warn = {}) {
  if (!(bg_threshold > 0.0 && bg_threshold < 1.0)) throw ConfigError("bg_threshold must lie in (0, 1)");
  if (ds.items.empty()) throw ConfigError("evaluation dataset is empty");
  if (ckpt.model.head.classes != ds.num_classes)
    throw ConfigError("checkpoint predicts " + std::to_string(ckpt.model.head.classes) + " classes, dataset has " +
                      std::to_string(ds.num_classes));
  std::filesystem::create_directories(out_dir / "cams");
  std::filesystem::create_directories(out_dir / "masks");
  EvalOutcome outcome;
  std::vector<PseudoMask> preds, refs;
  bool have_refs = true;
  for (const auto& item : ds.items) {
    const auto& s = item.sample;
    auto maps = predict_cams(ckpt.model, s);
    maps.image_height = s.pixels.height();
    maps.image_width = s.pixels.width();
    write_cam_dump(out_dir / "cams", make_cam_dump(maps, s.present_classes(), s.id));
    auto mask = cams_to_pseudo_mask(maps, s.label, bg_threshold, s.id);
    write_png_labels((out_dir / "masks" / (s.id + ".png")).string(), mask);
    if (item.mask) {
      refs.push_back(*item.mask);
    } else if (have_refs) {
      have_refs = false;
      outcome.warnings.push_back("reference mask missing for '" + s.id + "'; mIoU evaluation skipped");
      if (warn) warn(outcome.warnings.back());
    }
    preds.push_back(std::move(mask));
    ++outcome.num_images;
  }
  nlohmann::ordered_json j;
  j["epoch"] = ckpt.epoch;
  j["config_hash"] = ckpt.config_hash;
  j["bg_threshold"] = bg_threshold;
  j["num_images"] = outcome.num_images;
  if (have_refs) {
    outcome.report = evaluate_miou(preds, refs, ds.num_classes);
    const auto rep = to_json(*outcome.report);
    for (const auto& [k, v] : rep.items()) j[k] = v;
  } else {
    j["miou"] = nullptr;
    j["skipped"] = outcome.warnings.front();
  }
  std::ofstream(out_dir / "eval_report.json", std::ios::binary) << j.dump(2) << '\n';
  return outcome;
}

}  // namespace pole

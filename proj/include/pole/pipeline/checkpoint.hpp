#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pole/class_selector.hpp"
#include "pole/errors.hpp"
#include "pole/pipeline/config.hpp"
#include "pole/pipeline/model.hpp"

namespace pole {

inline constexpr const char* kCheckpointFormat = "pole-checkpoint-1";

struct Checkpoint {
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t global_step = 0;
  std::string config_hash;
  RunConfig config;
  Model model;
  SgdState optimizer;
  SelectionMemory selections;
};

namespace detail {

inline void load_vector(const nlohmann::json& j, std::vector<double>& dst, const std::string& what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != dst.size())
    throw ConfigError("checkpoint tensor '" + what + "' has " + std::to_string(v.size()) + " values, expected " +
                      std::to_string(dst.size()));
  dst = std::move(v);
}

inline const char* const kAdapterTensorNames[] = {"visual.w1", "visual.w2", "visual.gate",
                                                  "text.w1",   "text.w2",   "text.gate"};

inline std::string tensor_name(const Model& m, std::size_t t) {
  const std::size_t nb = m.num_backbone_tensors();
  if (t < nb) return "backbone." + std::to_string(t);
  if (t == nb) return "head";
  return std::string("adapter.") + kAdapterTensorNames[t - nb - 1];
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["epoch"] = c.epoch;
  j["global_step"] = c.global_step;
  j["config_hash"] = c.config_hash;
  j["config"] = nlohmann::ordered_json::parse(hashed_config(c.config).dump());
  const auto params = c.model.parameters();
  auto& tensors = j["parameters"] = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < params.size(); ++t) tensors[detail::tensor_name(c.model, t)] = *params[t];
  auto& mom = j["momentum"] = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < c.optimizer.momentum.size(); ++t)
    mom[detail::tensor_name(c.model, t)] = c.optimizer.momentum[t];
  auto& sel = j["locked_selections"] = nlohmann::ordered_json::array();
  for (const auto& [key, rec] : c.selections) sel.push_back(to_json(rec));
  return j;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw PipelineError("cannot write checkpoint '" + path.string() + "'");
    out << checkpoint_to_json(c).dump(1) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

/// Rebuilds the model described by the stored config and fills in its weights.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    if (j.value("format", "") != kCheckpointFormat) throw ConfigError("'" + path.string() + "' is not a checkpoint");
    Checkpoint c;
    c.epoch = j.at("epoch").get<std::int64_t>();
    c.global_step = j.at("global_step").get<std::int64_t>();
    c.config_hash = j.at("config_hash").get<std::string>();
    c.config = config_from_json(j.at("config"));
    const auto k = j.at("parameters").at("head").size() / static_cast<std::size_t>(c.config.backbone_channels);
    c.model = init_model(c.config, k, static_cast<std::size_t>(c.config.mock_dim));
    c.optimizer = init_sgd(c.model);
    auto params = c.model.parameters();
    for (std::size_t t = 0; t < params.size(); ++t) {
      const auto name = detail::tensor_name(c.model, t);
      detail::load_vector(j.at("parameters").at(name), *params[t], name);
      detail::load_vector(j.at("momentum").at(name), c.optimizer.momentum[t], name);
    }
    for (const auto& r : j.at("locked_selections")) {
      auto rec = selection_from_json(r);
      c.selections[{rec.image_id, rec.class_index}] = std::move(rec);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path.string() + "' is malformed: " + e.what());
  }
}

}  // namespace pole

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "pole/adapters.hpp"
#include "pole/errors.hpp"
#include "pole/objective.hpp"
#include "pole/prompt_space.hpp"
#include "pole/random.hpp"

#ifndef POLE_DATA_DIR
#define POLE_DATA_DIR "data"
#endif

namespace pole {

inline std::string default_pool_file() { return std::string(POLE_DATA_DIR) + "/synonyms_chatgpt.json"; }

/// Every knob of a run. Serialized as a flat JSON object whose keys are the
/// member names; each key `a_b` can be overridden on the command line as `--a-b`.
/// Optimizer defaults follow the published training recipe (SGD, cosine
/// annealing, lr 2.5e-4, weight decay 1e-4, batch 16, 10 epochs, 512 crops).
struct RunConfig {
  // data
  std::string dataset_dir;
  std::string dataset_format = "toy";  // toy | voc
  std::string voc_split = "train";
  // models
  std::string backbone = "stub";  // stub | resnet50
  std::int64_t backbone_channels = 16;
  std::int64_t backbone_stride = 4;
  std::string encoder = "mock";  // mock | clip-resnet50 | clip-vit-b16
  std::int64_t mock_seed = 7;
  std::int64_t mock_dim = 64;
  std::int64_t mock_input = 32;
  // prompts
  std::string pool_file;  // empty: shipped ChatGPT synonym table
  std::int64_t pool_size = 4;  // candidate names per class, ground truth included
  std::string template_prefix = "A photo of ";
  std::string template_terminator = ".";
  // optimisation
  std::string optimizer = "sgd";
  double lr = 0.00025;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::string schedule = "cosine";  // cosine | constant
  std::int64_t epochs = 10;
  std::int64_t batch_size = 16;
  std::int64_t crop_size = 512;  // 0 disables cropping
  bool hflip = true;
  double rescale_min = 1.0;
  double rescale_max = 1.0;
  // objective
  double alpha = 1.0;
  double beta = 1.0;
  double sim_eps = 1e-6;
  double temperature = 0.0;  // 0: no temperature, use (1+s)/2
  double lambda_cont = 1.0;
  // adapters
  std::string adapter_gate_mode = "learnable";  // learnable | fixed | none
  double adapter_gate_value = 0.2;
  std::int64_t adapter_hidden = 0;  // 0: dim / 4
  bool gate_clamp = false;
  double adapter_lr_mult = 1.0;
  // class selection
  bool select_after_adapter = false;
  std::int64_t freeze_selection_epoch = -1;  // -1: reselect every step
  // bookkeeping
  std::int64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string run_name;
  double bg_threshold = 0.25;

  std::string resolved_pool_file() const { return pool_file.empty() ? default_pool_file() : pool_file; }

  PromptTemplate prompt_template() const { return {template_prefix, template_terminator}; }

  LossWeights loss_weights() const {
    LossWeights w;
    w.alpha = alpha;
    w.beta = beta;
    w.sim_eps = sim_eps;
    if (temperature > 0.0) w.temperature = temperature;
    return w;
  }

  GateMode gate_mode() const { return parse_gate_mode(adapter_gate_mode); }

  /// Checks value ranges and that referenced files exist.
  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (dataset_format != "toy" && dataset_format != "voc") fail("dataset_format must be toy or voc");
    if (dataset_dir.empty()) fail("dataset_dir is required");
    if (!std::filesystem::is_directory(dataset_dir)) fail("dataset_dir '" + dataset_dir + "' does not exist");
    if (!std::filesystem::is_regular_file(resolved_pool_file()))
      fail("pool_file '" + resolved_pool_file() + "' does not exist");
    if (backbone_channels <= 0 || backbone_stride <= 0) fail("backbone dimensions must be positive");
    if (mock_dim <= 0 || mock_input < 2) fail("mock encoder dimensions are invalid");
    if (pool_size < 1) fail("pool_size counts the ground-truth name and must be >= 1");
    if (optimizer != "sgd") fail("only the sgd optimizer is supported");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(momentum >= 0.0 && momentum < 1.0))
      fail("lr, weight_decay must be >= 0 and momentum in [0, 1)");
    if (schedule != "cosine" && schedule != "constant") fail("schedule must be cosine or constant");
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size <= 0) fail("batch_size must be positive");
    if (crop_size < 0) fail("crop_size must be >= 0");
    if (!(rescale_min > 0.0) || rescale_max < rescale_min) fail("rescale range is invalid");
    if (!(lambda_cont >= 0.0)) fail("lambda_cont must be >= 0");
    if (!(bg_threshold > 0.0 && bg_threshold < 1.0)) fail("bg_threshold must lie in (0, 1)");
    if (adapter_hidden < 0) fail("adapter_hidden must be >= 0");
    if (!(adapter_lr_mult >= 0.0)) fail("adapter_lr_mult must be >= 0");
    if (temperature < 0.0) fail("temperature must be >= 0");
    try {
      loss_weights().validate();
      (void)gate_mode();
    } catch (const ArgumentError& e) {
      fail(e.what());
    }
  }
};

// Member list shared by serialization and the command-line override table.
#define POLE_RUN_CONFIG_FIELDS(X)                                                                                   \
  X(dataset_dir) X(dataset_format) X(voc_split) X(backbone) X(backbone_channels) X(backbone_stride) X(encoder)    \
  X(mock_seed) X(mock_dim) X(mock_input) X(pool_file) X(pool_size) X(template_prefix) X(template_terminator)       \
  X(optimizer) X(lr) X(weight_decay) X(momentum) X(schedule) X(epochs) X(batch_size) X(crop_size) X(hflip)       \
  X(rescale_min) X(rescale_max) X(alpha) X(beta) X(sim_eps) X(temperature) X(lambda_cont) X(adapter_gate_mode)   \
  X(adapter_gate_value) X(adapter_hidden) X(gate_clamp) X(adapter_lr_mult) X(select_after_adapter)                \
  X(freeze_selection_epoch) X(seed) X(out_dir) X(run_name) X(bg_threshold)

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
#define X(name) j[#name] = c.name;
  POLE_RUN_CONFIG_FIELDS(X)
#undef X
  return j;
}

/// Reads keys present in `j` over `base`; unknown keys are rejected.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto known = to_json(base);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    (void)value;
  }
  try {
#define X(name) \
  if (j.contains(#name)) base.name = j.at(#name).get<decltype(base.name)>();
    POLE_RUN_CONFIG_FIELDS(X)
#undef X
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// Command-line spelling of a config key: underscores become hyphens.
inline std::string flag_for_key(const std::string& key) {
  std::string f = key;
  for (auto& ch : f)
    if (ch == '_') ch = '-';
  return f;
}

/// Parses a textual override into the JSON type of the key's current value.
inline void apply_override(RunConfig& cfg, const std::string& key, const std::string& text) {
  auto j = to_json(cfg);
  if (!j.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  auto& slot = j[key];
  try {
    if (slot.is_boolean()) {
      if (text == "true" || text == "1") slot = true;
      else if (text == "false" || text == "0") slot = false;
      else throw ConfigError("expected true/false for '" + key + "'");
    } else if (slot.is_number_integer()) {
      std::size_t used = 0;
      const auto v = std::stoll(text, &used);
      if (used != text.size()) throw ConfigError("expected an integer for '" + key + "'");
      slot = v;
    } else if (slot.is_number()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw ConfigError("expected a number for '" + key + "'");
      slot = v;
    } else {
      slot = text;
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse '" + text + "' for config key '" + key + "'");
  }
  cfg = config_from_json(j, cfg);
}

/// Keys that do not influence the trained weights.
inline nlohmann::json hashed_config(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("out_dir");
  j.erase("run_name");
  j.erase("bg_threshold");
  return j;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(hashed_config(c).dump())));
  return buf;
}

}  // namespace pole

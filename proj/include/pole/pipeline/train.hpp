#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "pole/class_selector.hpp"
#include "pole/errors.hpp"
#include "pole/pipeline/checkpoint.hpp"
#include "pole/pipeline/config.hpp"
#include "pole/pipeline/dataset.hpp"
#include "pole/pipeline/model.hpp"
#include "pole/pipeline/report.hpp"

namespace pole {

struct StepLog {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double cls_loss = 0.0;
  double cont_loss = 0.0;
  double total = 0.0;
};

struct TrainResult {
  Checkpoint final_state;
  std::vector<StepLog> log;  // steps run by this call
  std::filesystem::path out_dir;
};

using ProgressFn = std::function<void(const StepLog&)>;

/// Fisher-Yates with the project RNG, so orders do not depend on the standard library.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

inline Augmentation augmentation_for(const RunConfig& cfg) {
  return {cfg.rescale_min, cfg.rescale_max, cfg.hflip, static_cast<std::size_t>(cfg.crop_size)};
}

/// Pools for the dataset's classes, truncated to the configured pool size.
inline PoolMap pools_for_run(const RunConfig& cfg, const std::vector<std::string>& class_names) {
  const auto all = load_pools(cfg.resolved_pool_file());
  const auto m = synonyms_for_pool_size(cfg.pool_size);
  PoolMap out;
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    const auto it = std::find_if(all.begin(), all.end(),
                                 [&](const auto& kv) { return kv.second.ground_truth_name == class_names[k]; });
    if (it == all.end()) throw ConfigError("no synonym pool for class '" + class_names[k] + "'");
    auto pool = truncate_pool(it->second, m);
    pool.class_index = k;
    out.emplace(k, std::move(pool));
  }
  return out;
}

inline StepContext step_context(const RunConfig& cfg, const EncoderPair& enc, const PoolMap& pools) {
  StepContext ctx;
  ctx.encoders = &enc;
  ctx.pools = &pools;
  ctx.tmpl = cfg.prompt_template();
  ctx.weights = cfg.loss_weights();
  ctx.lambda_cont = cfg.lambda_cont;
  ctx.select_after_adapter = cfg.select_after_adapter;
  return ctx;
}

inline EncoderPair encoders_for(const RunConfig& cfg) {
  return make_encoders(cfg.encoder, static_cast<std::uint64_t>(cfg.mock_seed), static_cast<std::size_t>(cfg.mock_dim),
                       static_cast<std::size_t>(cfg.mock_input));
}

/// Text-embedding cache file under $POLE_CACHE_DIR, or empty when unset.
inline std::optional<std::filesystem::path> text_cache_path(const EncoderPair& enc) {
  const char* dir = std::getenv("POLE_CACHE_DIR");
  if (!dir || !*dir) return std::nullopt;
  char name[64];
  std::snprintf(name, sizeof name, "text_%016llx.json", static_cast<unsigned long long>(fnv1a64(enc.identity())));
  return std::filesystem::path(dir) / name;
}

inline void load_text_cache(const EncoderPair& enc) {
  if (const auto p = text_cache_path(enc); p && std::filesystem::exists(*p)) enc.text_cache->load(p->string(), enc.identity());
}

inline void save_text_cache(const EncoderPair& enc) {
  if (const auto p = text_cache_path(enc)) {
    std::filesystem::create_directories(p->parent_path());
    enc.text_cache->save(p->string(), enc.identity());
  }
}

inline std::string checkpoint_name(std::int64_t epoch) { return "checkpoint_epoch" + std::to_string(epoch) + ".json"; }

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_nan_dump(const std::filesystem::path& out_dir, const StepLog& s, const std::vector<ImageSample>& batch) {
  nlohmann::ordered_json j;
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["cls_loss"] = std::isfinite(s.cls_loss) ? nlohmann::ordered_json(s.cls_loss) : nlohmann::ordered_json("nan");
  j["cont_loss"] = std::isfinite(s.cont_loss) ? nlohmann::ordered_json(s.cont_loss) : nlohmann::ordered_json("nan");
  auto& items = j["batch"] = nlohmann::ordered_json::array();
  for (const auto& b : batch) {
    bool finite = b.pixels.all_finite();
    items.push_back({{"image_id", b.id}, {"label", b.label}, {"pixels_finite", finite}, {"shape", b.pixels.shape_string()}});
  }
  std::ofstream(out_dir / "nan_batch.json", std::ios::binary) << j.dump(2) << '\n';
}

/// Keeps the CSV rows of steps before `first_step`, dropping any later ones.
inline void truncate_loss_csv(const std::filesystem::path& path, std::int64_t first_step) {
  std::ifstream in(path);
  std::ostringstream kept;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < first_step) kept << line << '\n';
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "step,cls_loss,cont_loss,total\n" << kept.str();
}

}  // namespace detail

/// Runs (or resumes) training. Writes into cfg.out_dir:
///   checkpoint_epoch<N>.json after every epoch (N = 0 is the initialization),
///   checkpoint.json (latest), loss.csv, selections.ndjson (last epoch) and
///   config.json. A non-finite loss writes nan_batch.json and throws NumericError.
///   `stop_after_epoch` >= 0 ends the run early, as an interrupted job would.
inline TrainResult train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume = std::nullopt,
                         const ProgressFn& progress = {}, std::int64_t stop_after_epoch = -1) {
  cfg.validate();
  const std::filesystem::path out_dir = cfg.out_dir;
  std::filesystem::create_directories(out_dir);
  const Dataset ds = load_dataset(cfg.dataset_format, cfg.dataset_dir, cfg.voc_split);
  if (ds.items.empty()) throw ConfigError("dataset '" + cfg.dataset_dir + "' has no images");
  const EncoderPair enc = encoders_for(cfg);
  load_text_cache(enc);
  const PoolMap pools = pools_for_run(cfg, ds.class_names);
  const StepContext ctx = step_context(cfg, enc, pools);
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  const std::string hash = config_hash(cfg);

  Checkpoint state;
  if (resume) {
    state = load_checkpoint(*resume);
    if (state.config_hash != hash)
      throw ConfigError("checkpoint '" + resume->string() + "' was written with config hash " + state.config_hash +
                        ", current config hashes to " + hash);
    if (state.epoch > cfg.epochs) throw ConfigError("checkpoint is past the configured number of epochs");
  } else {
    state.config = cfg;
    state.config_hash = hash;
    state.model = init_model(cfg, ds.num_classes, enc.dim);
    state.optimizer = init_sgd(state.model);
  }
  state.config = cfg;

  std::ofstream(out_dir / "config.json", std::ios::binary) << to_json(cfg).dump(2) << '\n';
  write_run_manifest(out_dir, cfg.run_name.empty() ? out_dir.filename().string() : cfg.run_name, ds.class_names,
                     cfg.pool_size, cfg.adapter_gate_mode);
  const auto csv_path = out_dir / "loss.csv";
  detail::truncate_loss_csv(csv_path, state.global_step);
  std::ofstream csv(csv_path, std::ios::binary | std::ios::app);
  if (!resume) save_checkpoint(out_dir / checkpoint_name(0), state);

  const std::size_t n = ds.items.size();
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + bsz - 1) / bsz);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const Augmentation aug = augmentation_for(cfg);

  TrainResult result;
  result.out_dir = out_dir;
  std::vector<SelectionRecord> last_epoch_selections;
  const std::int64_t end_epoch = stop_after_epoch >= 0 ? std::min(stop_after_epoch, cfg.epochs) : cfg.epochs;
  for (std::int64_t epoch = state.epoch; epoch < end_epoch; ++epoch) {
    const auto order = epoch_order(n, seed, epoch);
    const bool frozen = cfg.freeze_selection_epoch >= 0 && epoch >= cfg.freeze_selection_epoch;
    last_epoch_selections.clear();
    for (std::size_t start = 0; start < n; start += bsz) {
      std::vector<ImageSample> batch;
      for (std::size_t i = start; i < std::min(n, start + bsz); ++i) {
        const std::size_t idx = order[i];
        Rng rng(mix_seed(seed, mix_seed(static_cast<std::uint64_t>(epoch), idx)));
        batch.push_back(augment(ds.items[idx].sample, aug, rng));
      }
      StepLog log;
      log.step = state.global_step;
      log.epoch = epoch;
      StepResult step;
      try {
        step = compute_step(state.model, batch, ctx, frozen ? &state.selections : nullptr);
      } catch (const ArgumentError& e) {
        if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
        log.cls_loss = log.cont_loss = log.total = std::nan("");
        detail::write_nan_dump(out_dir, log, batch);
        throw NumericError("non-finite values at step " + std::to_string(log.step) + ": " + e.what());
      }
      log.cls_loss = step.cls_loss;
      log.cont_loss = step.cont_loss;
      log.total = step.total;
      if (!std::isfinite(step.total)) {
        detail::write_nan_dump(out_dir, log, batch);
        throw NumericError("loss became non-finite at step " + std::to_string(log.step) + " (epoch " +
                           std::to_string(epoch) + "); offending batch written to nan_batch.json");
      }
      csv << log.step << ',' << detail::format_double(log.cls_loss) << ',' << detail::format_double(log.cont_loss)
          << ',' << detail::format_double(log.total) << '\n';
      for (auto& r : step.selections) {
        state.selections[{r.image_id, r.class_index}] = r;
        last_epoch_selections.push_back(r);
      }
      sgd_step(state.model, state.optimizer, step.grads, cfg, scheduled_lr(cfg, state.global_step, total_steps));
      ++state.global_step;
      result.log.push_back(log);
      if (progress) progress(log);
    }
    state.epoch = epoch + 1;
    csv.flush();
    save_checkpoint(out_dir / checkpoint_name(state.epoch), state);
    std::sort(last_epoch_selections.begin(), last_epoch_selections.end(), [](const auto& a, const auto& b) {
      return std::tie(a.image_id, a.class_index) < std::tie(b.image_id, b.class_index);
    });
    std::ofstream sel(out_dir / "selections.ndjson", std::ios::binary | std::ios::trunc);
    write_selection_dump(sel, last_epoch_selections);
  }
  save_checkpoint(out_dir / "checkpoint.json", state);
  save_text_cache(enc);
  result.final_state = std::move(state);
  return result;
}

/// Reads loss.csv back into step records.
inline std::vector<StepLog> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::vector<StepLog> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    StepLog s;
    char comma;
    if (!(row >> s.step >> comma >> s.cls_loss >> comma >> s.cont_loss >> comma >> s.total))
      throw IngestionError("malformed loss row '" + line + "'");
    out.push_back(s);
  }
  return out;
}

}  // namespace pole

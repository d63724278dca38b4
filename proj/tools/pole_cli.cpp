// Command-line front end: synonym ingestion, toy data, selection, training,
// CAM evaluation and reports. Exit codes: 0 ok, 2 bad config/input, 3 numeric
// failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pole/pole.hpp"

namespace fs = std::filesystem;

namespace {

/// Registers one string option per config key so any key can be overridden.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON run configuration");
    const auto defaults = pole::to_json(pole::RunConfig{});
    for (const auto& [key, unused] : defaults.items()) {
      (void)unused;
      cmd.add_option("--" + pole::flag_for_key(key), values[key], "override config key '" + key + "'");
    }
  }

  pole::RunConfig resolve(const CLI::App& cmd) const {
    pole::RunConfig cfg = config_path.empty() ? pole::RunConfig{} : pole::load_config(config_path);
    for (const auto& [key, text] : values)
      if (cmd.count("--" + pole::flag_for_key(key))) pole::apply_override(cfg, key, text);
    return cfg;
  }
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_ingest(const std::string& file, const std::string& out, bool as_json) {
  const auto path = file.empty() ? pole::default_pool_file() : file;
  const auto pools = pole::load_pools(path);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [k, p] : pools)
    j.push_back({{"class", p.ground_truth_name}, {"class_index", k}, {"synonyms", p.synonyms}, {"corpus", p.corpus_tag}});
  if (!out.empty()) std::ofstream(out, std::ios::binary) << j.dump(2) << '\n';
  if (as_json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << pools.size() << " pools from " << path << '\n';
    for (const auto& [k, p] : pools) {
      std::cout << k << ' ' << p.ground_truth_name << ':';
      for (std::size_t i = 0; i < p.synonyms.size(); ++i) std::cout << (i ? ", " : " ") << p.synonyms[i];
      std::cout << '\n';
    }
  }
  return 0;
}

int cmd_make_toy(const std::string& out, std::int64_t n, std::int64_t k, std::int64_t size, std::int64_t seed) {
  const auto items = pole::make_toy_dataset(n, k, size, static_cast<std::uint64_t>(seed));
  pole::save_toy_dataset(out, items, static_cast<std::size_t>(k));
  std::cout << "wrote " << items.size() << " images (" << size << "x" << size << ", K=" << k << ") to " << out << '\n';
  return 0;
}

int cmd_select(const pole::RunConfig& cfg, const std::string& checkpoint, const std::string& out) {
  cfg.validate();
  const auto ds = pole::load_dataset(cfg.dataset_format, cfg.dataset_dir, cfg.voc_split);
  const auto enc = pole::encoders_for(cfg);
  pole::load_text_cache(enc);
  const auto pools = pole::pools_for_run(cfg, ds.class_names);
  pole::Model model;
  if (checkpoint.empty()) {
    model = pole::init_model(cfg, ds.num_classes, enc.dim);
  } else {
    model = pole::load_checkpoint(checkpoint).model;
  }
  const auto ctx = pole::step_context(cfg, enc, pools);
  std::vector<pole::SelectionRecord> all;
  for (const auto& item : ds.items) {
    auto maps = pole::predict_cams(model, item.sample);
    auto recs = pole::batch_selections(model, {item.sample}, {maps}, ctx, nullptr);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  if (out.empty()) {
    pole::write_selection_dump(std::cout, all);
  } else {
    std::ofstream f(out, std::ios::binary);
    pole::write_selection_dump(f, all);
    log_line("wrote " + std::to_string(all.size()) + " selection records to " + out);
  }
  pole::save_text_cache(enc);
  return 0;
}

int cmd_train(const pole::RunConfig& cfg, const std::string& resume, std::int64_t stop_after, bool quiet) {
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  std::int64_t last_epoch = -1;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  auto progress = [&](const pole::StepLog& s) {
    if (s.epoch != last_epoch) {
      epoch_sum = 0.0;
      epoch_steps = 0;
      last_epoch = s.epoch;
    }
    epoch_sum += s.total;
    ++epoch_steps;
    if (!quiet) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %lld step %lld  cls %.4f  cont %.4f  total %.4f  (epoch mean %.4f)",
                    static_cast<long long>(s.epoch), static_cast<long long>(s.step), s.cls_loss, s.cont_loss, s.total,
                    epoch_sum / static_cast<double>(epoch_steps));
      log_line(buf);
    }
  };
  const auto result = pole::train(cfg, from, progress, stop_after);
  std::cout << "trained to epoch " << result.final_state.epoch << " (" << result.final_state.global_step
            << " steps); checkpoints in " << result.out_dir.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const pole::RunConfig& overrides, const CLI::App& cmd,
             const std::string& out, double bg_threshold) {
  const auto ckpt = pole::load_checkpoint(checkpoint);
  std::string dir = ckpt.config.dataset_dir, format = ckpt.config.dataset_format, split = ckpt.config.voc_split;
  if (cmd.count("--dataset-dir")) dir = overrides.dataset_dir;
  if (cmd.count("--dataset-format")) format = overrides.dataset_format;
  if (cmd.count("--voc-split")) split = overrides.voc_split;
  const auto ds = pole::load_dataset(format, dir, split);
  const fs::path out_dir = out.empty() ? fs::path(checkpoint).parent_path() / "eval" : fs::path(out);
  const auto res = pole::eval_cams(ckpt, ds, bg_threshold, out_dir, [](const std::string& w) { log_line("warning: " + w); });
  if (res.report) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", res.report->miou);
    std::cout << "mIoU " << buf << " over " << res.num_images << " images; outputs in " << out_dir.string() << '\n';
  } else {
    std::cout << "wrote CAM dumps for " << res.num_images << " images to " << out_dir.string()
              << " (evaluation skipped)\n";
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<pole::RunSummary> summaries;
  for (const auto& r : runs) summaries.push_back(pole::load_run_summary(r));
  const auto files = pole::write_report(summaries, out);
  for (const auto& f : files.written) std::cout << f.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pole: prompt-selection CAM training toolkit"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest-synonyms", "validate a synonym pool file and print its pools");
  std::string ingest_file, ingest_out;
  bool ingest_json = false;
  ingest->add_option("file", ingest_file, "pool file (default: shipped table)");
  ingest->add_option("--out", ingest_out, "write the normalized pools as JSON");
  ingest->add_flag("--json", ingest_json, "print JSON instead of a listing");

  auto* toy = app.add_subcommand("make-toy", "generate the synthetic blob dataset");
  std::string toy_out;
  std::int64_t toy_n = 64, toy_k = 3, toy_size = 64, toy_seed = 0;
  toy->add_option("--out", toy_out, "output directory")->required();
  toy->add_option("-n,--num-images", toy_n, "number of images")->capture_default_str();
  toy->add_option("-k,--classes", toy_k, "number of classes")->capture_default_str();
  toy->add_option("--size", toy_size, "image side length")->capture_default_str();
  toy->add_option("--seed", toy_seed, "generator seed")->capture_default_str();

  auto* select = app.add_subcommand("select", "choose class tokens for every (image, present class)");
  ConfigFlags select_flags;
  select_flags.attach(*select);
  std::string select_ckpt, select_out;
  select->add_option("--checkpoint", select_ckpt, "use CAMs from this checkpoint (default: initialization)");
  select->add_option("--out", select_out, "NDJSON output (default: stdout)");

  auto* train = app.add_subcommand("train", "train the CAM network");
  ConfigFlags train_flags;
  train_flags.attach(*train);
  std::string resume;
  std::int64_t stop_after = -1;
  bool quiet = false;
  train->add_option("--resume", resume, "continue from a checkpoint written with the same config");
  train->add_option("--stop-after-epoch", stop_after, "stop once this many epochs are complete");
  train->add_flag("-q,--quiet", quiet, "no per-step log");

  auto* eval = app.add_subcommand("eval-cams", "dump CAMs and pseudo masks and score them");
  ConfigFlags eval_flags;
  std::string eval_ckpt, eval_out;
  double bg_threshold = 0.25;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--out", eval_out, "output directory (default: <checkpoint dir>/eval)");
  eval->add_option("--bg-threshold", bg_threshold, "background threshold")->capture_default_str();
  eval->add_option("--dataset-dir", eval_flags.values["dataset_dir"], "dataset (default: the training dataset)");
  eval->add_option("--dataset-format", eval_flags.values["dataset_format"], "toy or voc");
  eval->add_option("--voc-split", eval_flags.values["voc_split"], "VOC image-set name");

  auto* report = app.add_subcommand("report", "tables and plots from training/evaluation outputs");
  std::vector<std::string> report_runs;
  std::string report_out = "report";
  report->add_option("runs", report_runs, "run directories")->required();
  report->add_option("--out", report_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_file, ingest_out, ingest_json);
    if (*toy) return cmd_make_toy(toy_out, toy_n, toy_k, toy_size, toy_seed);
    if (*select) return cmd_select(select_flags.resolve(*select), select_ckpt, select_out);
    if (*train) return cmd_train(train_flags.resolve(*train), resume, stop_after, quiet);
    if (*eval) {
      pole::RunConfig o;
      for (const auto& [key, text] : eval_flags.values)
        if (eval->count("--" + pole::flag_for_key(key))) pole::apply_override(o, key, text);
      return cmd_eval(eval_ckpt, o, *eval, eval_out, bg_threshold);
    }
    if (*report) return cmd_report(report_runs, report_out);
  } catch (const pole::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const pole::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const pole::IngestionError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const pole::ArgumentError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

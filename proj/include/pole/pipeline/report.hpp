#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pole/class_selector.hpp"
#include "pole/errors.hpp"

namespace pole {

/// What the report needs from one training (+ evaluation) run.
struct RunSummary {
  std::string name;
  std::int64_t pool_size = 1;
  std::string gate_mode = "none";
  std::vector<std::string> class_names;
  std::optional<double> miou;
  std::vector<SelectionRecord> selections;
};

inline void write_run_manifest(const std::filesystem::path& out_dir, const std::string& name,
                               const std::vector<std::string>& class_names, std::int64_t pool_size,
                               const std::string& gate_mode) {
  nlohmann::ordered_json j;
  j["run_name"] = name;
  j["class_names"] = class_names;
  j["pool_size"] = pool_size;
  j["adapter_gate_mode"] = gate_mode;
  std::ofstream(out_dir / "run.json", std::ios::binary) << j.dump(2) << '\n';
}

/// Reads run.json, selections.ndjson and eval/eval_report.json (or
/// eval_report.json) from a run directory. Missing selections or evaluation
/// leave the corresponding fields empty.
inline RunSummary load_run_summary(const std::filesystem::path& dir) {
  std::ifstream man(dir / "run.json");
  if (!man) throw ConfigError("'" + dir.string() + "' has no run.json; is it a training output directory?");
  RunSummary r;
  try {
    const auto j = nlohmann::json::parse(man);
    r.name = j.at("run_name").get<std::string>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.pool_size = j.at("pool_size").get<std::int64_t>();
    r.gate_mode = j.at("adapter_gate_mode").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("run.json in '" + dir.string() + "': " + e.what());
  }
  if (r.name.empty()) r.name = dir.filename().string();
  if (std::ifstream sel(dir / "selections.ndjson"); sel) r.selections = read_selection_dump(sel, (dir / "selections.ndjson").string());
  for (const auto& p : {dir / "eval" / "eval_report.json", dir / "eval_report.json"}) {
    std::ifstream ev(p);
    if (!ev) continue;
    try {
      const auto j = nlohmann::json::parse(ev);
      if (j.contains("miou") && j["miou"].is_number()) r.miou = j["miou"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(p.string() + ": " + e.what());
    }
    break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Tables

struct StrategyRow {
  std::string run;
  std::string strategy;
  std::int64_t pool_size = 1;
  std::string adapter;
  std::optional<double> miou;
};

inline std::string strategy_label(std::int64_t pool_size) {
  return pool_size <= 1 ? "baseline (m=0)" : "POLE (m=" + std::to_string(pool_size - 1) + ")";
}

inline std::vector<StrategyRow> prompt_strategy_table(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw ConfigError("report needs at least one run");
  std::vector<StrategyRow> rows;
  for (const auto& r : runs) rows.push_back({r.name, strategy_label(r.pool_size), r.pool_size, r.gate_mode, r.miou});
  return rows;
}

struct FrequencyTable {
  std::vector<std::string> class_names;
  std::vector<std::string> runs;
  std::vector<std::vector<std::optional<double>>> values;  // [run][class]
};

inline FrequencyTable selection_frequency_table(const std::vector<RunSummary>& runs) {
  FrequencyTable t;
  for (const auto& r : runs) {
    if (r.selections.empty()) continue;
    if (t.class_names.empty()) t.class_names = r.class_names;
    if (r.class_names.size() != t.class_names.size())
      throw ConfigError("run '" + r.name + "' has a different class list from the other runs");
    t.runs.push_back(r.name);
    t.values.push_back(selection_frequency(r.selections, t.class_names.size()));
  }
  if (t.runs.empty()) throw ConfigError("no run has selection records");
  return t;
}

struct SweepPoint {
  std::int64_t pool_size = 1;
  double miou = 0.0;
  std::string run;
};

/// Evaluated runs ordered by pool size (stable for equal sizes).
inline std::vector<SweepPoint> pool_size_sweep(const std::vector<RunSummary>& runs) {
  std::vector<SweepPoint> pts;
  for (const auto& r : runs)
    if (r.miou) pts.push_back({r.pool_size, *r.miou, r.name});
  if (pts.empty()) throw ConfigError("no run has an evaluation report");
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.pool_size < b.pool_size; });
  return pts;
}

// ---------------------------------------------------------------------------
// Writers

namespace detail {

inline std::string fmt(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, int digits = 4) { return v ? fmt(*v, digits) : ""; }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  return colours[i % 7];
}

}  // namespace detail

inline std::string strategy_table_csv(const std::vector<StrategyRow>& rows) {
  std::ostringstream o;
  o << "run,strategy,pool_size,adapter,miou\n";
  for (const auto& r : rows)
    o << detail::csv_field(r.run) << ',' << detail::csv_field(r.strategy) << ',' << r.pool_size << ',' << r.adapter
      << ',' << detail::fmt_opt(r.miou) << '\n';
  return o.str();
}

inline std::string strategy_table_markdown(const std::vector<StrategyRow>& rows) {
  std::ostringstream o;
  o << "| Run | Prompt strategy | Pool size | Adapter | CAM mIoU |\n|---|---|---|---|---|\n";
  for (const auto& r : rows)
    o << "| " << r.run << " | " << r.strategy << " | " << r.pool_size << " | " << r.adapter << " | "
      << (r.miou ? detail::fmt(*r.miou * 100.0, 1) : "n/a") << " |\n";
  return o.str();
}

inline std::string frequency_csv(const FrequencyTable& t) {
  std::ostringstream o;
  o << "class_index,class_name";
  for (const auto& r : t.runs) o << ',' << detail::csv_field(r);
  o << '\n';
  for (std::size_t k = 0; k < t.class_names.size(); ++k) {
    o << k << ',' << detail::csv_field(t.class_names[k]);
    for (const auto& v : t.values) o << ',' << detail::fmt_opt(v[k]);
    o << '\n';
  }
  return o.str();
}

/// Radar chart: one spoke per class, radius = ground-truth selection frequency.
inline std::string frequency_radar_svg(const FrequencyTable& t) {
  const double cx = 260, cy = 250, radius = 180;
  const std::size_t k = t.class_names.size();
  auto point = [&](std::size_t i, double r) {
    const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    return std::pair{cx + r * radius * std::cos(a), cy + r * radius * std::sin(a)};
  };
  std::ostringstream o;
  o << R"(<svg xmlns="http://www.w3.org/2000/svg" width="640" height="520" font-family="sans-serif" font-size="11">)"
    << '\n';
  for (double ring : {0.25, 0.5, 0.75, 1.0}) {
    o << R"(<polygon fill="none" stroke="#ccc" points=")";
    for (std::size_t i = 0; i < k; ++i) {
      const auto [x, y] = point(i, ring);
      o << detail::fmt(x, 1) << ',' << detail::fmt(y, 1) << ' ';
    }
    o << "\"/>\n";
  }
  for (std::size_t i = 0; i < k; ++i) {
    const auto [x, y] = point(i, 1.0);
    const auto [lx, ly] = point(i, 1.12);
    o << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << detail::fmt(x, 1) << "\" y2=\"" << detail::fmt(y, 1)
      << "\" stroke=\"#ccc\"/>\n";
    o << "<text x=\"" << detail::fmt(lx, 1) << "\" y=\"" << detail::fmt(ly, 1) << "\" text-anchor=\"middle\">"
      << detail::xml_escape(t.class_names[i]) << "</text>\n";
  }
  for (std::size_t r = 0; r < t.runs.size(); ++r) {
    o << "<polygon fill=\"" << detail::palette(r) << "\" fill-opacity=\"0.15\" stroke=\"" << detail::palette(r)
      << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < k; ++i) {
      const auto [x, y] = point(i, t.values[r][i].value_or(0.0));
      o << detail::fmt(x, 1) << ',' << detail::fmt(y, 1) << ' ';
    }
    o << "\"/>\n";
    o << "<text x=\"520\" y=\"" << 30 + 18 * r << "\" fill=\"" << detail::palette(r) << "\">"
      << detail::xml_escape(t.runs[r]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string sweep_csv(const std::vector<SweepPoint>& pts) {
  std::ostringstream o;
  o << "pool_size,miou,run\n";
  for (const auto& p : pts) o << p.pool_size << ',' << detail::fmt(p.miou) << ',' << detail::csv_field(p.run) << '\n';
  return o.str();
}

inline std::string sweep_svg(const std::vector<SweepPoint>& pts) {
  const double x0 = 60, x1 = 580, y0 = 340, y1 = 30;
  const double pmin = static_cast<double>(pts.front().pool_size), pmax = static_cast<double>(pts.back().pool_size);
  double lo = 1.0, hi = 0.0;
  for (const auto& p : pts) {
    lo = std::min(lo, p.miou);
    hi = std::max(hi, p.miou);
  }
  lo = std::max(0.0, lo - 0.05);
  hi = std::min(1.0, hi + 0.05);
  if (hi <= lo) hi = lo + 0.1;
  auto px = [&](double v) { return pmax > pmin ? x0 + (v - pmin) / (pmax - pmin) * (x1 - x0) : (x0 + x1) / 2; };
  auto py = [&](double v) { return y0 - (v - lo) / (hi - lo) * (y0 - y1); };
  std::ostringstream o;
  o << R"(<svg xmlns="http://www.w3.org/2000/svg" width="640" height="400" font-family="sans-serif" font-size="11">)"
    << '\n';
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"#333\"/>\n";
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"#333\"/>\n";
  o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"380\" text-anchor=\"middle\">pool size (m+1)</text>\n";
  o << "<text x=\"15\" y=\"" << (y0 + y1) / 2 << "\" transform=\"rotate(-90 15 " << (y0 + y1) / 2
    << ")\" text-anchor=\"middle\">CAM mIoU</text>\n";
  o << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 << "\" text-anchor=\"end\">" << detail::fmt(lo, 2) << "</text>\n";
  o << "<text x=\"" << x0 - 6 << "\" y=\"" << y1 + 4 << "\" text-anchor=\"end\">" << detail::fmt(hi, 2) << "</text>\n";
  o << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& p : pts) o << detail::fmt(px(static_cast<double>(p.pool_size)), 1) << ',' << detail::fmt(py(p.miou), 1) << ' ';
  o << "\"/>\n";
  for (const auto& p : pts) {
    const double x = px(static_cast<double>(p.pool_size)), y = py(p.miou);
    o << "<circle cx=\"" << detail::fmt(x, 1) << "\" cy=\"" << detail::fmt(y, 1) << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    o << "<text x=\"" << detail::fmt(x, 1) << "\" y=\"" << y0 + 15 << "\" text-anchor=\"middle\">" << p.pool_size
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

struct ReportFiles {
  std::vector<std::filesystem::path> written;
};

/// Writes every table the inputs support. Tables whose inputs are missing
/// from all runs are skipped.
inline ReportFiles write_report(const std::vector<RunSummary>& runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) throw ConfigError("report needs at least one run");
  if (std::none_of(runs.begin(), runs.end(), [](const auto& r) { return !r.selections.empty() || r.miou; }))
    throw ConfigError("runs contain neither selection dumps nor evaluation reports");
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  auto put = [&](const std::string& name, const std::string& body) {
    std::ofstream(out_dir / name, std::ios::binary) << body;
    files.written.push_back(out_dir / name);
  };
  const auto rows = prompt_strategy_table(runs);
  put("prompt_strategies.csv", strategy_table_csv(rows));
  put("prompt_strategies.md", strategy_table_markdown(rows));
  if (std::any_of(runs.begin(), runs.end(), [](const auto& r) { return !r.selections.empty(); })) {
    const auto t = selection_frequency_table(runs);
    put("selection_frequency.csv", frequency_csv(t));
    put("selection_frequency.svg", frequency_radar_svg(t));
  }
  if (std::any_of(runs.begin(), runs.end(), [](const auto& r) { return r.miou.has_value(); })) {
    const auto pts = pool_size_sweep(runs);
    put("pool_size_sweep.csv", sweep_csv(pts));
    put("pool_size_sweep.svg", sweep_svg(pts));
  }
  return files;
}

}  // namespace pole

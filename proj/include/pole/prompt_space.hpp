#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pole/errors.hpp"

namespace pole {

/// PASCAL VOC foreground classes in index order, spelled as in the shipped
/// synonym table (the person class is named "player").
inline const std::vector<std::string>& voc_class_names() {
  static const std::vector<std::string> names = {
      "aeroplane", "bicycle", "bird",  "boat",      "bottle",       "bus",   "car",
      "cat",       "chair",   "cow",   "dining table", "dog",       "horse", "motorbike",
      "player",    "potted plant", "sheep", "sofa", "train",        "tv monitor"};
  return names;
}

struct SynonymPool {
  std::size_t class_index = 0;
  std::string ground_truth_name;
  std::vector<std::string> synonyms;
  std::string corpus_tag;

  std::size_t size() const { return synonyms.size(); }

  /// Ground truth followed by the synonyms, i.e. the m+1 candidate names.
  std::vector<std::string> candidate_names() const {
    std::vector<std::string> out;
    out.reserve(synonyms.size() + 1);
    out.push_back(ground_truth_name);
    out.insert(out.end(), synonyms.begin(), synonyms.end());
    return out;
  }

  friend bool operator==(const SynonymPool&, const SynonymPool&) = default;
};

using PoolMap = std::map<std::size_t, SynonymPool>;

struct PromptTemplate {
  std::string context_prefix = "A photo of ";
  std::string terminator = ".";

  std::string render(const std::string& name) const {
    std::string out = context_prefix + name + terminator;
    if (out.empty()) throw ArgumentError("prompt template renders an empty string");
    return out;
  }
};

struct PromptSet {
  std::size_t class_index = 0;
  std::vector<std::string> prompts;  // index 0 renders the ground-truth name
  std::vector<std::string> names;    // class token behind each prompt
};

namespace detail {

// Line number (1-based) of each top-level array element in a JSON text.
inline std::vector<std::size_t> top_level_element_lines(const std::string& text) {
  std::vector<std::size_t> lines;
  std::size_t line = 1;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  bool expect_element = false;
  for (char ch : text) {
    if (ch == '\n') ++line;
    if (in_string) {
      if (escaped) escaped = false;
      else if (ch == '\\') escaped = true;
      else if (ch == '"') in_string = false;
      continue;
    }
    if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') continue;
    if (depth == 1 && expect_element && ch != ']') {
      lines.push_back(line);
      expect_element = false;
    }
    switch (ch) {
      case '"': in_string = true; break;
      case '[':
      case '{':
        ++depth;
        if (depth == 1) expect_element = true;
        break;
      case ']':
      case '}': --depth; break;
      case ',':
        if (depth == 1) expect_element = true;
        break;
      default: break;
    }
  }
  return lines;
}

}  // namespace detail

/// Parses and validates a synonym file (array of
/// {"class", "class_index", "synonyms", "corpus"} objects) against a class
/// vocabulary. Synonym order is preserved.
inline PoolMap parse_pools(const std::string& text, const std::string& source = "<memory>",
                           const std::vector<std::string>& vocabulary = voc_class_names()) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError(source + ": " + e.what());
  }
  if (!doc.is_array()) throw IngestionError(source + ": top level must be an array of pool objects");
  const auto lines = detail::top_level_element_lines(text);
  PoolMap pools;
  std::set<std::string> seen_names;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where =
        source + ":" + std::to_string(i < lines.size() ? lines[i] : 0) + ": entry " + std::to_string(i);
    const auto& entry = doc[i];
    if (!entry.is_object()) throw IngestionError(where + ": expected an object");
    if (!entry.contains("class") || !entry["class"].is_string())
      throw IngestionError(where + ": missing string field 'class'");
    if (!entry.contains("class_index") || !entry["class_index"].is_number_integer())
      throw IngestionError(where + ": missing integer field 'class_index'");
    if (!entry.contains("synonyms") || !entry["synonyms"].is_array())
      throw IngestionError(where + ": missing array field 'synonyms'");

    SynonymPool pool;
    pool.ground_truth_name = entry["class"].get<std::string>();
    const auto idx = entry["class_index"].get<std::int64_t>();
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), pool.ground_truth_name);
    if (it == vocabulary.end()) throw IngestionError(where + ": unknown class name '" + pool.ground_truth_name + "'");
    if (idx < 0 || static_cast<std::size_t>(idx) != static_cast<std::size_t>(it - vocabulary.begin()))
      throw IngestionError(where + ": class_index " + std::to_string(idx) + " does not match class '" +
                           pool.ground_truth_name + "' (expected " + std::to_string(it - vocabulary.begin()) + ")");
    pool.class_index = static_cast<std::size_t>(idx);
    if (pools.count(pool.class_index) || seen_names.count(pool.ground_truth_name))
      throw IngestionError(where + ": duplicate entry for class '" + pool.ground_truth_name + "'");

    std::set<std::string> distinct;
    for (const auto& s : entry["synonyms"]) {
      if (!s.is_string()) throw IngestionError(where + ": synonyms must be strings");
      auto name = s.get<std::string>();
      if (name.empty()) throw IngestionError(where + ": empty synonym string");
      if (name == pool.ground_truth_name)
        throw IngestionError(where + ": synonym '" + name + "' repeats the class name");
      if (!distinct.insert(name).second) throw IngestionError(where + ": duplicate synonym '" + name + "'");
      pool.synonyms.push_back(std::move(name));
    }
    if (entry.contains("corpus")) {
      if (!entry["corpus"].is_string()) throw IngestionError(where + ": 'corpus' must be a string");
      pool.corpus_tag = entry["corpus"].get<std::string>();
    }
    seen_names.insert(pool.ground_truth_name);
    pools.emplace(pool.class_index, std::move(pool));
  }
  return pools;
}

inline PoolMap load_pools(const std::string& path, const std::vector<std::string>& vocabulary = voc_class_names()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open synonym file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_pools(buf.str(), path, vocabulary);
}

inline PromptSet build_prompt_set(const SynonymPool& pool, const PromptTemplate& tmpl) {
  PromptSet set;
  set.class_index = pool.class_index;
  set.names = pool.candidate_names();
  set.prompts.reserve(set.names.size());
  for (const auto& n : set.names) set.prompts.push_back(tmpl.render(n));
  return set;
}

/// Keeps the first min(m, m_max) synonyms.
inline SynonymPool truncate_pool(const SynonymPool& pool, std::int64_t m_max) {
  if (m_max < 0) throw ArgumentError("m_max must be nonnegative, got " + std::to_string(m_max));
  SynonymPool out = pool;
  if (static_cast<std::size_t>(m_max) < out.synonyms.size()) out.synonyms.resize(static_cast<std::size_t>(m_max));
  return out;
}

/// Converts a pool size counted with the ground truth (m+1) into m.
inline std::int64_t synonyms_for_pool_size(std::int64_t pool_size) {
  if (pool_size < 1) throw ConfigError("pool size counts the ground-truth name and must be >= 1");
  return pool_size - 1;
}

}  // namespace pole

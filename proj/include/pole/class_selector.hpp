#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pole/adapters.hpp"
#include "pole/cam_core.hpp"
#include "pole/clip_bridge.hpp"
#include "pole/errors.hpp"
#include "pole/prompt_space.hpp"

namespace pole {

struct SimilarityVector {
  std::vector<double> values;
  std::size_t class_index = 0;
  std::string image_id;

  friend bool operator==(const SimilarityVector&, const SimilarityVector&) = default;
};

struct SelectionRecord {
  std::string image_id;
  std::size_t class_index = 0;
  std::size_t chosen_index = 0;
  std::string chosen_name;
  SimilarityVector similarities;

  friend bool operator==(const SelectionRecord&, const SelectionRecord&) = default;
};

inline SimilarityVector score_candidates(const EmbeddingVector& v_io, const std::vector<EmbeddingVector>& text_embs) {
  if (text_embs.empty()) throw ArgumentError("no candidate text embeddings to score");
  SimilarityVector out;
  out.values.reserve(text_embs.size());
  for (const auto& t : text_embs) {
    if (t.dim() != v_io.dim())
      throw ArgumentError("candidate dimension " + std::to_string(t.dim()) + " != visual dimension " +
                          std::to_string(v_io.dim()));
    out.values.push_back(cosine_similarity(v_io, t));
  }
  return out;
}

/// Index of the maximum similarity; exact ties go to the lowest index, so the
/// ground-truth name wins any tie it is part of.
inline std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j)
    if (values[j] > values[best]) best = j;
  return best;
}

inline SelectionRecord select_class(const SimilarityVector& scores, const SynonymPool& pool) {
  if (scores.values.size() != pool.size() + 1)
    throw ArgumentError("score vector has " + std::to_string(scores.values.size()) + " entries, pool '" +
                        pool.ground_truth_name + "' has " + std::to_string(pool.size() + 1) + " candidates");
  SelectionRecord rec;
  rec.image_id = scores.image_id;
  rec.class_index = pool.class_index;
  rec.chosen_index = argmax_lowest(scores.values);
  rec.chosen_name = rec.chosen_index == 0 ? pool.ground_truth_name : pool.synonyms[rec.chosen_index - 1];
  rec.similarities = scores;
  rec.similarities.class_index = pool.class_index;
  return rec;
}

/// Picks the class token for every (image, present class). Candidates are
/// scored against the foreground-masked embedding; with `refine` set, both
/// sides pass through the adapters first.
inline std::vector<SelectionRecord> select_for_batch(const std::vector<ImageSample>& samples,
                                                     const std::vector<ActivationMaps>& maps, const PoolMap& pools,
                                                     const PromptTemplate& tmpl, const EncoderPair& enc,
                                                     const AdapterPair* refine = nullptr) {
  if (maps.size() != samples.size())
    throw PipelineError("got activation maps for " + std::to_string(maps.size()) + " of " +
                        std::to_string(samples.size()) + " samples");
  std::vector<SelectionRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& sample = samples[i];
    for (std::size_t k : sample.present_classes()) {
      if (k >= maps[i].num_classes())
        throw PipelineError("sample '" + sample.id + "' has no activation map for present class " + std::to_string(k));
      const auto pool_it = pools.find(k);
      if (pool_it == pools.end()) throw PipelineError("no synonym pool for class " + std::to_string(k));
      const auto prompts = build_prompt_set(pool_it->second, tmpl);
      auto texts = encode_texts(prompts, enc);
      auto [fg, bg] = make_masked_pair(sample, maps[i], k);
      auto v_io = encode_image(fg, enc);
      if (refine && refine->active()) {
        v_io.values = refine->refine(v_io.values, Modality::visual);
        for (auto& t : texts) t.values = refine->refine(t.values, Modality::text);
      }
      auto scores = score_candidates(v_io, texts);
      scores.image_id = sample.id;
      scores.class_index = k;
      records.push_back(select_class(scores, pool_it->second));
    }
  }
  return records;
}

/// Per-class fraction of records that chose the ground-truth name (index 0);
/// nullopt for classes without records.
inline std::vector<std::optional<double>> selection_frequency(const std::vector<SelectionRecord>& records,
                                                              std::size_t num_classes) {
  std::vector<std::size_t> total(num_classes, 0), gt(num_classes, 0);
  for (const auto& r : records) {
    if (r.class_index >= num_classes) continue;
    ++total[r.class_index];
    if (r.chosen_index == 0) ++gt[r.class_index];
  }
  std::vector<std::optional<double>> out(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k)
    if (total[k]) out[k] = static_cast<double>(gt[k]) / static_cast<double>(total[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Newline-delimited JSON dumps

inline nlohmann::ordered_json to_json(const SelectionRecord& r) {
  nlohmann::ordered_json j;
  j["image_id"] = r.image_id;
  j["class_index"] = r.class_index;
  j["chosen_index"] = r.chosen_index;
  j["chosen_name"] = r.chosen_name;
  j["similarities"] = r.similarities.values;
  return j;
}

inline SelectionRecord selection_from_json(const nlohmann::json& j) {
  SelectionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.class_index = j.at("class_index").get<std::size_t>();
  r.chosen_index = j.at("chosen_index").get<std::size_t>();
  r.chosen_name = j.at("chosen_name").get<std::string>();
  r.similarities.values = j.at("similarities").get<std::vector<double>>();
  r.similarities.class_index = r.class_index;
  r.similarities.image_id = r.image_id;
  if (r.chosen_index >= r.similarities.values.size())
    throw IngestionError("selection record for '" + r.image_id + "' has chosen_index beyond its similarities");
  return r;
}

inline void write_selection_dump(std::ostream& out, const std::vector<SelectionRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<SelectionRecord> read_selection_dump(std::istream& in, const std::string& source = "<stream>") {
  std::vector<SelectionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(selection_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pole

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support/generators.hpp"

namespace pole {
namespace {

using testing::Gen;

EmbeddingVector visual(std::vector<double> v) { return {std::move(v), Modality::visual}; }
EmbeddingVector text(std::vector<double> v) { return {std::move(v), Modality::text}; }

SynonymPool pool_with(std::size_t m) {
  SynonymPool p{2, "bird", {}, ""};
  for (std::size_t j = 0; j < m; ++j) p.synonyms.push_back("syn" + std::to_string(j));
  return p;
}

TEST(ScoreCandidates, SelfIsOne) {
  const auto v = visual({0.3, -0.2, 0.9});
  EXPECT_DOUBLE_EQ(score_candidates(v, {text(v.values)}).values.at(0), 1.0);
}

TEST(ScoreCandidates, OrthogonalAndParallel) {
  const auto v = visual({1, 0, 0});
  const auto s = score_candidates(v, {text({0, 1, 0}), text({2, 0, 0}), text({0, 0, -3})});
  EXPECT_EQ(s.values[0], 0.0);
  EXPECT_DOUBLE_EQ(s.values[1], 1.0);
  EXPECT_EQ(s.values[2], 0.0);
}

TEST(ScoreCandidates, MatchesIndependentLoop) {
  Gen g(31);
  for (int t = 0; t < 100; ++t) {
    const auto v = visual(g.vec(12));
    std::vector<EmbeddingVector> cands;
    for (int j = 0; j < 5; ++j) cands.push_back(text(g.vec(12)));
    const auto s = score_candidates(v, cands);
    for (std::size_t j = 0; j < 5; ++j) {
      double uv = 0, uu = 0, vv = 0;
      for (std::size_t d = 0; d < 12; ++d) {
        uv += v.values[d] * cands[j].values[d];
        uu += v.values[d] * v.values[d];
        vv += cands[j].values[d] * cands[j].values[d];
      }
      EXPECT_NEAR(s.values[j], uv / std::sqrt(uu * vv), 1e-14);
    }
  }
}

TEST(ScoreCandidates, DimensionMismatchThrows) {
  EXPECT_THROW(score_candidates(visual({1, 0}), {text({1, 0, 0})}), ArgumentError);
  EXPECT_THROW(score_candidates(visual({1, 0}), {}), ArgumentError);
}

TEST(SelectClass, EmptyPoolChoosesGroundTruth) {
  SimilarityVector s{{-0.4}, 2, "img"};
  const auto r = select_class(s, pool_with(0));
  EXPECT_EQ(r.chosen_index, 0u);
  EXPECT_EQ(r.chosen_name, "bird");
}

TEST(SelectClass, DirectArgmax) {
  SimilarityVector s{{0.2, 0.9, 0.5}, 2, "img"};
  const auto r = select_class(s, pool_with(2));
  EXPECT_EQ(r.chosen_index, 1u);
  EXPECT_EQ(r.chosen_name, "syn0");
  EXPECT_EQ(r.image_id, "img");
  EXPECT_EQ(r.class_index, 2u);
}

TEST(SelectClass, LengthMismatchThrows) {
  SimilarityVector s{{0.2, 0.9}, 2, "img"};
  EXPECT_THROW(select_class(s, pool_with(2)), ArgumentError);
}

TEST(SelectClass, AgreesWithBruteForceScanIncludingTies) {
  Gen g(32);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = g.index(6);
    SimilarityVector s{g.vec(m + 1), 2, "img"};
    if (t % 3 == 0 && m > 0) s.values[1 + g.index(m)] = s.values[0];  // tie with ground truth
    if (t % 5 == 0) {
      // quantized values make ties among synonyms common
      for (auto& v : s.values) v = std::round(v * 2.0) / 2.0;
    }
    std::size_t oracle = 0;
    double best = -2.0;
    for (std::size_t j = 0; j < s.values.size(); ++j)
      if (s.values[j] > best) {
        best = s.values[j];
        oracle = j;
      }
    EXPECT_EQ(select_class(s, pool_with(m)).chosen_index, oracle);
  }
}

TEST(SelectForBatch, CountsAndGroundTruthForEmptyPools) {
  const auto enc = make_mock_encoders(7);
  Gen g(33);
  PoolMap pools;
  pools[0] = SynonymPool{0, "aeroplane", {}, ""};
  pools[1] = SynonymPool{1, "bicycle", {"bike"}, ""};
  ImageSample one = g.sample(2, 16, 16, "one");
  one.label = {1, 0};
  ImageSample two = g.sample(2, 16, 16, "two");
  two.label = {1, 1};
  const auto maps = std::vector<ActivationMaps>{g.maps(2, 4, 4), g.maps(2, 4, 4)};
  const auto recs = select_for_batch({one, two}, maps, pools, PromptTemplate{}, enc);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].image_id, "one");
  EXPECT_EQ(recs[0].chosen_index, 0u);
  EXPECT_EQ(recs[0].chosen_name, "aeroplane");
  EXPECT_EQ(recs[1].image_id, "two");
  EXPECT_EQ(recs[2].class_index, 1u);
  EXPECT_EQ(recs[2].similarities.values.size(), 2u);
  EXPECT_EQ(recs, select_for_batch({one, two}, maps, pools, PromptTemplate{}, enc));
}

TEST(SelectForBatch, MissingMapOrPoolIsPipelineError) {
  const auto enc = make_mock_encoders(7);
  Gen g(34);
  PoolMap pools;
  pools[0] = SynonymPool{0, "aeroplane", {}, ""};
  ImageSample s = g.sample(2, 16, 16, "s");
  s.label = {0, 1};
  EXPECT_THROW(select_for_batch({s}, {g.maps(1, 4, 4)}, pools, PromptTemplate{}, enc), PipelineError);
  EXPECT_THROW(select_for_batch({s}, {g.maps(2, 4, 4)}, pools, PromptTemplate{}, enc), PipelineError);
  EXPECT_THROW(select_for_batch({s}, {}, pools, PromptTemplate{}, enc), PipelineError);
}

TEST(SelectForBatch, ScaleInvarianceOfChoice) {
  Gen g(35);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto v = g.vec(16);
    std::vector<EmbeddingVector> cands;
    for (int j = 0; j < 4; ++j) cands.push_back(text(g.vec(16)));
    const auto base = argmax_lowest(score_candidates(visual(v), cands).values);
    auto scaled = v;
    const double a = g.log_scale(1e-3, 1e3);
    for (auto& x : scaled) x *= a;
    if (argmax_lowest(score_candidates(visual(scaled), cands).values) != base) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(SelectionFrequency, HandTally) {
  auto rec = [](std::size_t k, std::size_t chosen) {
    SelectionRecord r;
    r.class_index = k;
    r.chosen_index = chosen;
    return r;
  };
  const std::vector<SelectionRecord> recs = {rec(0, 0), rec(0, 0), rec(0, 2), rec(0, 0), rec(1, 1), rec(2, 0)};
  const auto f = selection_frequency(recs, 4);
  EXPECT_DOUBLE_EQ(*f[0], 0.75);
  EXPECT_DOUBLE_EQ(*f[1], 0.0);
  EXPECT_DOUBLE_EQ(*f[2], 1.0);
  EXPECT_FALSE(f[3].has_value());
}

TEST(SelectionDump, RoundTripsByteEqual) {
  Gen g(36);
  std::vector<SelectionRecord> recs;
  for (int i = 0; i < 5; ++i) {
    SimilarityVector s{g.vec(4), static_cast<std::size_t>(i % 3), "img" + std::to_string(i)};
    recs.push_back(select_class(s, SynonymPool{static_cast<std::size_t>(i % 3), "gt", {"a", "b", "c"}, ""}));
  }
  std::stringstream a;
  write_selection_dump(a, recs);
  const auto back = read_selection_dump(a);
  EXPECT_EQ(back, recs);
  std::stringstream b;
  write_selection_dump(b, back);
  EXPECT_EQ(a.str(), b.str());
  std::stringstream bad("{\"image_id\": 3}\n");
  EXPECT_THROW(read_selection_dump(bad), IngestionError);
}

TEST(GoldenSelection, ToyFixtureMatchesReference) {
  std::ifstream in(std::string(POLE_TEST_GOLDEN_DIR) + "/reference_fixture.json");
  const auto j = nlohmann::json::parse(in);
  const auto items = make_toy_dataset(4, 3, 48, 3);
  RunConfig cfg;
  cfg.seed = 0;
  const auto m = init_model(cfg, 3, 64);
  const auto enc = make_mock_encoders(7);
  const auto pools = [] {
    const auto all = load_pools(default_pool_file());
    PoolMap p;
    for (std::size_t k = 0; k < 3; ++k) p[k] = truncate_pool(all.at(k), 3);
    return p;
  }();
  std::vector<SelectionRecord> got;
  for (const auto& it : items) {
    const auto recs = select_for_batch({it.sample}, {predict_cams(m, it.sample)}, pools, PromptTemplate{}, enc);
    got.insert(got.end(), recs.begin(), recs.end());
  }
  const auto& want = j.at("selections");
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].image_id, want[i].at("image_id").get<std::string>());
    EXPECT_EQ(got[i].class_index, want[i].at("class_index").get<std::size_t>());
    EXPECT_EQ(got[i].chosen_index, want[i].at("chosen_index").get<std::size_t>());
    EXPECT_EQ(got[i].chosen_name, want[i].at("chosen_name").get<std::string>());
    const auto sims = want[i].at("similarities").get<std::vector<double>>();
    ASSERT_EQ(got[i].similarities.values.size(), sims.size());
    for (std::size_t c = 0; c < sims.size(); ++c) EXPECT_NEAR(got[i].similarities.values[c], sims[c], 1e-10);
  }
}

}  // namespace
}  // namespace pole

#include <gtest/gtest.h>

#include <map>
#include <string>
#include <vector>

#include "support/generators.hpp"

namespace pole {
namespace {

using Names = std::vector<std::string>;

const std::map<std::string, Names>& expected_table() {
  static const std::map<std::string, Names> t = {
      {"aeroplane", {"aircraft", "airplane", "plane"}},
      {"bicycle", {"bike", "cycle", "pedal bike"}},
      {"bird", {"avian", "fowl", "feathered friend"}},
      {"boat", {"ship", "vessel", "watercraft"}},
      {"bottle", {"flask", "container", "jar"}},
      {"bus", {"coach", "transit", "omnibus"}},
      {"car", {"automobile", "vehicle", "sedan"}},
      {"cat", {"feline", "kitty", "tomcat"}},
      {"chair", {"seat", "armchair", "recliner"}},
      {"cow", {"bovine", "heifer", "bull"}},
      {"dining table", {"kitchen table", "dinner table", "breakfast table"}},
      {"dog", {"canine", "puppy", "hound"}},
      {"horse", {"equine", "mare", "stallion"}},
      {"motorbike", {"motorcycle", "bike", "scooter"}},
      {"player", {"person", "individual", "human"}},
      {"potted plant", {"houseplant", "flowerpot", "planter"}},
      {"sheep", {"lamb", "ewe", "ram"}},
      {"sofa", {"couch", "loveseat", "settee"}},
      {"train", {"railway", "locomotive", "subway"}},
      {"tv monitor", {"television", "display screen", "flat screen"}},
  };
  return t;
}

TEST(LoadPools, ShippedTableIsComplete) {
  const auto pools = load_pools(default_pool_file());
  ASSERT_EQ(pools.size(), 20u);
  for (const auto& [k, pool] : pools) {
    EXPECT_EQ(pool.class_index, k);
    EXPECT_EQ(pool.ground_truth_name, voc_class_names()[k]);
    EXPECT_EQ(pool.synonyms, expected_table().at(pool.ground_truth_name)) << pool.ground_truth_name;
    EXPECT_EQ(pool.corpus_tag, "chatgpt");
  }
}

TEST(LoadPools, SpotChecks) {
  const auto pools = load_pools(default_pool_file());
  EXPECT_EQ(pools.at(7).synonyms, (Names{"feline", "kitty", "tomcat"}));
  EXPECT_EQ(pools.at(0).synonyms, (Names{"aircraft", "airplane", "plane"}));
  EXPECT_EQ(pools.at(19).synonyms, (Names{"television", "display screen", "flat screen"}));
}

TEST(LoadPools, ReloadIsOrderStable) {
  EXPECT_EQ(load_pools(default_pool_file()), load_pools(default_pool_file()));
}

TEST(ParsePools, EmptySynonymListIsValid) {
  const auto pools = parse_pools(R"([{"class": "cat", "class_index": 7, "synonyms": []}])");
  ASSERT_EQ(pools.size(), 1u);
  EXPECT_EQ(pools.at(7).size(), 0u);
}

TEST(ParsePools, ErrorsCarryLineContext) {
  const std::string dup = "[\n{\"class\": \"cat\", \"class_index\": 7, \"synonyms\": []},\n"
                          "{\"class\": \"cat\", \"class_index\": 7, \"synonyms\": []}\n]";
  try {
    parse_pools(dup, "pools.json");
    FAIL() << "duplicate accepted";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("pools.json:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
  }
}

TEST(ParsePools, RejectsBadEntries) {
  EXPECT_THROW(parse_pools(R"([{"class": "unicorn", "class_index": 0, "synonyms": []}])"), IngestionError);
  EXPECT_THROW(parse_pools(R"([{"class": "cat", "class_index": 7, "synonyms": [""]}])"), IngestionError);
  EXPECT_THROW(parse_pools(R"([{"class": "cat", "class_index": 7, "synonyms": ["cat"]}])"), IngestionError);
  EXPECT_THROW(parse_pools(R"([{"class": "cat", "class_index": 7, "synonyms": ["a", "a"]}])"), IngestionError);
  EXPECT_THROW(parse_pools(R"([{"class": "cat", "class_index": 3, "synonyms": []}])"), IngestionError);
  EXPECT_THROW(parse_pools(R"({"class": "cat"})"), IngestionError);
  EXPECT_THROW(parse_pools("[{"), IngestionError);
  EXPECT_THROW(load_pools("/nonexistent/pools.json"), IngestionError);
}

TEST(BuildPromptSet, DefaultTemplate) {
  SynonymPool pool{7, "cat", {"feline"}, ""};
  const auto set = build_prompt_set(pool, PromptTemplate{});
  EXPECT_EQ(set.prompts, (Names{"A photo of cat.", "A photo of feline."}));
  EXPECT_EQ(set.class_index, 7u);
}

TEST(BuildPromptSet, EmptyPoolIsGroundTruthOnly) {
  SynonymPool pool{7, "cat", {}, ""};
  EXPECT_EQ(build_prompt_set(pool, PromptTemplate{}).prompts, (Names{"A photo of cat."}));
}

TEST(BuildPromptSet, PrefixSubstitutionOnly) {
  SynonymPool pool{10, "dining table", {"kitchen table"}, ""};
  const auto set = build_prompt_set(pool, PromptTemplate{"An image of ", "."});
  EXPECT_EQ(set.prompts, (Names{"An image of dining table.", "An image of kitchen table."}));
  EXPECT_EQ(set.names, (Names{"dining table", "kitchen table"}));
}

TEST(BuildPromptSet, LengthAndGroundTruthInvariant) {
  const auto pools = load_pools(default_pool_file());
  for (const auto& [k, pool] : pools)
    for (std::int64_t m = 0; m <= 4; ++m) {
      const auto set = build_prompt_set(truncate_pool(pool, m), PromptTemplate{});
      EXPECT_EQ(set.prompts.size(), static_cast<std::size_t>(std::min<std::int64_t>(m, 3)) + 1);
      EXPECT_EQ(set.prompts.front(), "A photo of " + pool.ground_truth_name + ".");
    }
}

TEST(TruncatePool, KeepsPrefix) {
  SynonymPool pool{0, "aeroplane", {"aircraft", "airplane", "plane"}, "chatgpt"};
  EXPECT_EQ(truncate_pool(pool, 2).synonyms, (Names{"aircraft", "airplane"}));
  EXPECT_TRUE(truncate_pool(pool, 0).synonyms.empty());
  EXPECT_EQ(truncate_pool(pool, 10), pool);
  EXPECT_THROW(truncate_pool(pool, -1), ArgumentError);
}

TEST(TruncatePool, PoolSizeCountsGroundTruth) {
  EXPECT_EQ(synonyms_for_pool_size(1), 0);
  EXPECT_EQ(synonyms_for_pool_size(4), 3);
  EXPECT_THROW(synonyms_for_pool_size(0), ConfigError);
}

}  // namespace
}  // namespace pole

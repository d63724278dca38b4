#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "support/generators.hpp"

namespace pole {
namespace {

using testing::Gen;

ActivationMaps maps_2x2(std::vector<double> c0, std::vector<double> c1) {
  ActivationMaps m;
  m.values = Image(2, 2, 2);
  std::copy(c0.begin(), c0.end(), m.values.plane(0).begin());
  std::copy(c1.begin(), c1.end(), m.values.plane(1).begin());
  m.normalized = true;
  return m;
}

TEST(PseudoMask, AllZeroIsBackground) {
  const auto m = maps_2x2({0, 0, 0, 0}, {0, 0, 0, 0});
  const std::vector<int> y{1, 1};
  for (auto v : cams_to_pseudo_mask(m, y, 0.25).labels) EXPECT_EQ(v, 0);
}

TEST(PseudoMask, UnitMapFillsClass) {
  const auto m = maps_2x2({1, 1, 1, 1}, {0.3, 0.9, 0.2, 0.1});
  const std::vector<int> y{1, 0};
  for (auto v : cams_to_pseudo_mask(m, y, 0.25).labels) EXPECT_EQ(v, 1);
}

TEST(PseudoMask, HandTableAtThreshold03) {
  const auto m = maps_2x2({0.1, 0.5, 0.4, 0.2}, {0.2, 0.6, 0.35, 0.25});
  // both present: (0,0) max .2 -> bg; (0,1) .6 -> class 1; (1,0) .4 -> class 0; (1,1) .25 -> bg
  EXPECT_EQ(cams_to_pseudo_mask(m, std::vector<int>{1, 1}, 0.3).labels, (std::vector<std::uint8_t>{0, 2, 1, 0}));
  // class 1 absent: its map is ignored
  EXPECT_EQ(cams_to_pseudo_mask(m, std::vector<int>{1, 0}, 0.3).labels, (std::vector<std::uint8_t>{0, 1, 1, 0}));
  // exact tie goes to the lower class index
  const auto tie = maps_2x2({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_EQ(cams_to_pseudo_mask(tie, std::vector<int>{1, 1}, 0.3).labels, (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(PseudoMask, VanishingThresholdMarksOnlyExactZeros) {
  const auto m = maps_2x2({0.0, 1e-300, 0.0, 0.7}, {0.0, 0.0, 1e-12, 0.1});
  const double eps = std::numeric_limits<double>::denorm_min();
  EXPECT_EQ(cams_to_pseudo_mask(m, std::vector<int>{1, 1}, eps).labels, (std::vector<std::uint8_t>{0, 1, 2, 1}));
}

TEST(PseudoMask, UpsamplesToImageSize) {
  Gen g(61);
  auto m = g.maps(3, 4, 5);
  m.image_height = 16;
  m.image_width = 20;
  const auto mask = cams_to_pseudo_mask(m, std::vector<int>{1, 0, 1}, 0.25, "id");
  EXPECT_EQ(mask.height, 16u);
  EXPECT_EQ(mask.width, 20u);
  EXPECT_EQ(mask.image_id, "id");
  for (auto v : mask.labels) EXPECT_TRUE(v == 0 || v == 1 || v == 3);
}

TEST(PseudoMask, Preconditions) {
  auto m = maps_2x2({0, 0, 0, 0}, {0, 0, 0, 0});
  const std::vector<int> y{1, 1};
  EXPECT_THROW(cams_to_pseudo_mask(m, y, 0.0), ArgumentError);
  EXPECT_THROW(cams_to_pseudo_mask(m, y, 1.0), ArgumentError);
  EXPECT_THROW(cams_to_pseudo_mask(m, std::vector<int>{1}, 0.3), ArgumentError);
  m.normalized = false;
  EXPECT_THROW(cams_to_pseudo_mask(m, y, 0.3), ArgumentError);
}

TEST(Miou, IdenticalMasksScoreOne) {
  Gen g(62);
  std::vector<PseudoMask> masks;
  for (int i = 0; i < 5; ++i) masks.push_back(g.mask(8, 8, 4, "m" + std::to_string(i)));
  EXPECT_EQ(evaluate_miou(masks, masks, 3).miou, 1.0);
}

TEST(Miou, DisjointSingleClassIsZero) {
  PseudoMask a{{1, 1, 0, 0}, 2, 2, "x"}, b{{0, 0, 1, 1}, 2, 2, "x"};
  const auto r = evaluate_miou({a}, {b}, 1);
  EXPECT_EQ(*r.per_class_iou[1], 0.0);
  EXPECT_EQ(*r.per_class_iou[0], 0.0);
  EXPECT_EQ(r.miou, 0.0);
}

TEST(Miou, MatchesTripleLoopOracle) {
  Gen g(63);
  for (int t = 0; t < 10; ++t) {
    std::vector<PseudoMask> preds, refs;
    for (int i = 0; i < 100; ++i) {
      const auto id = "m" + std::to_string(i);
      preds.push_back(g.mask(16, 16, 6, id));
      refs.push_back(g.mask(16, 16, 6, id));
      if (i % 7 == 0) refs.back().labels[g.index(256)] = kIgnoreLabel;
    }
    const auto r = evaluate_miou(preds, refs, 5);
    const auto o = testing::oracle_miou(preds, refs, 6);
    EXPECT_EQ(r.miou, o.miou);
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_EQ(r.per_class_iou[c].has_value(), o.counted[c]);
      if (o.counted[c]) {
        EXPECT_EQ(*r.per_class_iou[c], o.iou[c]);
      }
    }
  }
}

TEST(Miou, AbsentLabelsAreNotAveraged) {
  PseudoMask a{{0, 1, 1, 0}, 2, 2, "x"};
  const auto r = evaluate_miou({a}, {a}, 4);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_FALSE(r.per_class_iou[3].has_value());
}

TEST(Miou, SwappingArgumentsTransposesConfusion) {
  Gen g(64);
  std::vector<PseudoMask> p, q;
  for (int i = 0; i < 20; ++i) {
    p.push_back(g.mask(9, 7, 4, std::to_string(i)));
    q.push_back(g.mask(9, 7, 4, std::to_string(i)));
  }
  const auto a = evaluate_miou(p, q, 3), b = evaluate_miou(q, p, 3);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.confusion_at(r, c), b.confusion_at(c, r));
  EXPECT_EQ(a.per_class_iou, b.per_class_iou);
}

TEST(Miou, PooledEqualsSumOfPerImage) {
  Gen g(65);
  std::vector<PseudoMask> p, q;
  std::vector<std::uint64_t> sum(16, 0);
  for (int i = 0; i < 30; ++i) {
    p.push_back(g.mask(5 + g.index(10), 6, 4, std::to_string(i)));
    q.push_back(g.mask(p.back().height, 6, 4, std::to_string(i)));
    const auto one = evaluate_miou({p.back()}, {q.back()}, 3);
    for (std::size_t j = 0; j < 16; ++j) sum[j] += one.confusion[j];
  }
  const auto pooled = evaluate_miou(p, q, 3);
  EXPECT_EQ(pooled.confusion, sum);
  std::uint64_t total = 0, pixels = 0;
  for (auto v : pooled.confusion) total += v;
  for (const auto& m : q) pixels += m.labels.size();
  EXPECT_EQ(total, pixels);
}

TEST(Miou, MismatchesThrow) {
  PseudoMask a{{0, 1}, 1, 2, "a"}, b{{0, 1}, 1, 2, "b"}, c{{0, 1, 1}, 1, 3, "a"};
  EXPECT_THROW(evaluate_miou({a}, {b}, 1), ArgumentError);
  EXPECT_THROW(evaluate_miou({a}, {c}, 1), ArgumentError);
  EXPECT_THROW(evaluate_miou({a}, {}, 1), ArgumentError);
  PseudoMask bad{{0, 7}, 1, 2, "a"};
  EXPECT_THROW(evaluate_miou({bad}, {a}, 1), ArgumentError);
}

class DumpDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("pole_pl_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(DumpDir, CamDumpRoundTripsBitExactly) {
  Gen g(66);
  const auto maps = g.maps(4, 6, 7);
  const auto dump = make_cam_dump(maps, {1, 3}, "img_1");
  write_cam_dump(dir_, dump);
  const auto back = read_cam_dump(dir_, "img_1");
  EXPECT_EQ(back, dump);
  const auto expanded = cam_dump_to_maps(back);
  for (std::size_t p = 0; p < 42; ++p) {
    EXPECT_EQ(expanded.values.plane(1)[p], static_cast<double>(static_cast<float>(maps.values.plane(1)[p])));
    EXPECT_EQ(expanded.values.plane(0)[p], 0.0);
  }
  EXPECT_EQ(std::filesystem::file_size(dir_ / "img_1.bin"), 2u * 42u * 4u);
}

TEST_F(DumpDir, TruncatedBlobIsRejected) {
  Gen g(67);
  write_cam_dump(dir_, make_cam_dump(g.maps(2, 3, 3), {0, 1}, "x"));
  std::filesystem::resize_file(dir_ / "x.bin", 10);
  EXPECT_THROW(read_cam_dump(dir_, "x"), IngestionError);
  EXPECT_THROW(read_cam_dump(dir_, "missing"), IngestionError);
}

TEST_F(DumpDir, LabelPngRoundTrip) {
  Gen g(68);
  const auto m = g.mask(13, 17, 21, "m");
  write_png_labels((dir_ / "m.png").string(), m);
  EXPECT_EQ(read_png_labels((dir_ / "m.png").string(), "m"), m);
}

}  // namespace
}  // namespace pole

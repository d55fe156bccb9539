#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "segplan/inference.hpp"
#include "segplan/io.hpp"
#include "segplan/predictors.hpp"
#include "test_support.hpp"

namespace segplan {
namespace {

TopologySpec topology(Extent patch, std::vector<std::size_t> axes = {}) {
  TopologySpec t;
  t.dims = patch.size();
  if (axes.empty()) {
    for (std::size_t a = 0; a < patch.size(); ++a) axes.push_back(a);
  }
  t.axes = std::move(axes);
  t.patch_size = std::move(patch);
  t.batch_size = 2;
  t.pools_per_axis.assign(t.dims, 1);
  return t;
}

Volume random_image(Extent extent, std::uint64_t seed) {
  Volume v(VolumeKind::image, 1, extent, Spacing(extent.size(), 1.0));
  std::mt19937_64 gen(seed);
  for (float& x : v.data) x = static_cast<float>(gen() % 1000) / 100.0f;
  return v;
}

Volume blob_labels(const Extent& extent, std::size_t num_classes, std::uint64_t seed) {
  Volume lab = make_labelmap(extent, Spacing(extent.size(), 1.0));
  std::mt19937_64 gen(seed);
  for (std::size_t k = 1; k < num_classes; ++k) {
    Extent lo(extent.size()), hi(extent.size());
    for (std::size_t a = 0; a < extent.size(); ++a) {
      lo[a] = gen() % extent[a];
      hi[a] = std::min(extent[a], lo[a] + 1 + gen() % 6);
    }
    for_each_coord(extent, [&](const Extent& c) {
      bool in = true;
      for (std::size_t a = 0; a < c.size(); ++a) in = in && c[a] >= lo[a] && c[a] < hi[a];
      if (in) lab.data[ravel(c, strides_of(extent))] = static_cast<float>(k);
    });
  }
  return lab;
}

// Deterministic function of absolute image position only.
class PositionPredictor : public Predictor {
 public:
  std::size_t num_classes() const override { return 3; }
  static std::vector<double> at(const Extent& c) {
    const double z0 = std::sin(0.3 * double(c[0]) + 0.1 * double(c[1]));
    const double z1 = std::cos(0.2 * double(c[1]) - 0.05 * double(c.back()));
    const double z2 = 0.0;
    const double s = std::exp(z0) + std::exp(z1) + std::exp(z2);
    return {std::exp(z0) / s, std::exp(z1) / s, std::exp(z2) / s};
  }
  Volume predict(const Volume& patch, const PatchLocation& where) const override {
    Volume out(VolumeKind::softmax, 3, patch.extent, patch.spacing);
    const std::size_t n = out.voxels();
    std::size_t i = 0;
    for_each_coord(patch.extent, [&](const Extent& p) {
      const auto c = where.image_coord(patch.extent, p);
      const auto probs = c ? at(*c) : std::vector<double>{1, 0, 0};
      for (std::size_t k = 0; k < 3; ++k) out.data[k * n + i] = static_cast<float>(probs[k]);
      ++i;
    });
    return out;
  }
};

class WrongShapePredictor : public Predictor {
 public:
  std::size_t num_classes() const override { return 2; }
  Volume predict(const Volume& patch, const PatchLocation&) const override {
    Extent e = patch.extent;
    e[0] += 1;
    return Volume(VolumeKind::softmax, 2, e, patch.spacing);
  }
};

TEST(Tiling, AxisOffsets) {
  EXPECT_EQ(axis_offsets(192, 128), (std::vector<std::size_t>{0, 64}));
  EXPECT_EQ(axis_offsets(128, 128), (std::vector<std::size_t>{0}));
  EXPECT_EQ(axis_offsets(200, 128), (std::vector<std::size_t>{0, 64, 72}));
  EXPECT_EQ(axis_offsets(5, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Tiling, EightTilesCoverTheCentre) {
  const auto tiles = tile_positions({192, 192, 192}, {128, 128, 128});
  EXPECT_EQ(tiles.size(), 8u);
  std::size_t covering = 0;
  for (const Extent& t : tiles) {
    bool in = true;
    for (std::size_t a = 0; a < 3; ++a) in = in && t[a] <= 96 && 96 < t[a] + 128;
    covering += in;
  }
  EXPECT_EQ(covering, 8u);
}

TEST(TilingProperty, TilesCoverEveryVoxel) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t patch = 1 + gen() % 40;
    const std::size_t extent = patch + gen() % 100;
    const auto offs = axis_offsets(extent, patch);
    std::vector<int> covered(extent, 0);
    for (std::size_t o : offs) {
      ASSERT_LE(o + patch, extent);
      for (std::size_t i = o; i < o + patch; ++i) covered[i] = 1;
    }
    EXPECT_EQ(std::count(covered.begin(), covered.end(), 1), static_cast<long>(extent));
    EXPECT_EQ(offs.back(), extent - patch);
  }
}

TEST(Weights, GaussianPeakAndFloor) {
  const Extent patch{9, 16};
  const auto w = gaussian_weights(patch);
  EXPECT_DOUBLE_EQ(*std::max_element(w.begin(), w.end()), 1.0);
  EXPECT_GE(*std::min_element(w.begin(), w.end()), 1e-3);
  EXPECT_EQ(w[ravel({4, 7}, strides_of(patch))], 1.0);
  EXPECT_EQ(w[ravel({4, 8}, strides_of(patch))], 1.0);
  EXPECT_EQ(w[0], 1e-3);
}

TEST(PredictCase, ConstantPredictorIsExact) {
  const Volume img = random_image({13, 21, 17}, 3);
  for (const std::vector<float>& p : {std::vector<float>{0.25f, 0.75f}, std::vector<float>{0.2f, 0.3f, 0.5f},
                                      std::vector<float>{0.1f, 0.6f, 0.15f, 0.15f}}) {
    const ConstantPredictor pred(p);
    for (bool tta : {false, true}) {
      const CasePrediction r = predict_case(img, pred, topology({8, 8, 8}), {tta, {}});
      const std::size_t n = img.voxels();
      for (std::size_t k = 0; k < p.size(); ++k) {
        for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(r.probabilities.data[k * n + i], p[k]) << k << " " << i;
      }
    }
  }
}

TEST(PredictCase, SixtyFourPredictionsAtTheCentre) {
  const Volume img(VolumeKind::image, 1, {192, 192, 192}, {1, 1, 1});
  const ConstantPredictor pred = ConstantPredictor::background(2);
  const auto with = predict_case(img, pred, topology({128, 128, 128}), {true, {}});
  const auto without = predict_case(img, pred, topology({128, 128, 128}), {false, {}});
  const std::size_t centre = ravel({96, 96, 96}, strides_of(img.extent));
  EXPECT_EQ(with.counts[centre], 64u);
  EXPECT_EQ(*std::max_element(with.counts.begin(), with.counts.end()), 64u);
  EXPECT_EQ(without.counts[centre], 8u);
  EXPECT_EQ(*std::max_element(without.counts.begin(), without.counts.end()), 8u);
  EXPECT_EQ(with.counts[0], 8u);
}

TEST(PredictCase, OracleGivesPerfectDice3d) {
  const Volume img = random_image({14, 19, 23}, 5);
  const Volume gt = blob_labels(img.extent, 3, 6);
  const OraclePredictor oracle(gt, 3);
  const auto r = predict_case(img, oracle, topology({8, 16, 8}), {true, {}});
  EXPECT_EQ(argmax(r.probabilities), gt);
  for (int k = 1; k < 3; ++k) EXPECT_EQ(dice_score(argmax(r.probabilities), gt, k), 1.0);
}

TEST(PredictCase, OracleWithPaddingAndSlices) {
  const Volume img = random_image({5, 6, 9}, 7);
  const Volume gt = blob_labels(img.extent, 4, 8);
  const OraclePredictor oracle(gt, 4);
  // 3D patch larger than the image on two axes.
  EXPECT_EQ(argmax(predict_case(img, oracle, topology({8, 8, 8}), {true, {}}).probabilities), gt);
  // 2D topologies sliced along each omitted axis.
  for (const std::vector<std::size_t>& axes : {std::vector<std::size_t>{1, 2}, {0, 2}, {0, 1}}) {
    const auto r = predict_case(img, oracle, topology({4, 8}, axes), {true, {}});
    EXPECT_EQ(argmax(r.probabilities), gt);
  }
}

TEST(PredictCase, PositionPredictorMatchesDenseEvaluation) {
  const Volume img = random_image({11, 18, 20}, 9);
  const PositionPredictor pred;
  const auto r = predict_case(img, pred, topology({6, 8, 12}), {false, {}});
  const std::size_t n = img.voxels();
  double worst = 0.0;
  for_each_coord(img.extent, [&](const Extent& c) {
    const auto expect = PositionPredictor::at(c);
    const std::size_t i = ravel(c, strides_of(img.extent));
    for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(r.probabilities.data[k * n + i] - expect[k]));
  });
  EXPECT_LT(worst, 1e-6);
  // Mirrored inputs still report their true location, so TTA is exact too.
  const auto t = predict_case(img, pred, topology({6, 8, 12}), {true, {}});
  for (std::size_t i = 0; i < t.probabilities.data.size(); ++i) {
    ASSERT_NEAR(t.probabilities.data[i], r.probabilities.data[i], 1e-6);
  }
}

TEST(PredictCase, PointwisePredictorIsMirrorInvariant) {
  const Volume img = random_image({9, 12, 10}, 10);
  ThresholdModel m;
  m.windows = {std::nullopt, std::pair{2.0, 5.0}, std::pair{4.0, 8.0}};
  const ThresholdPredictor pred(m);
  const auto a = predict_case(img, pred, topology({4, 8, 8}), {false, {}});
  const auto b = predict_case(img, pred, topology({4, 8, 8}), {true, {}});
  for (std::size_t i = 0; i < a.probabilities.data.size(); ++i) {
    ASSERT_NEAR(a.probabilities.data[i], b.probabilities.data[i], 1e-6);
  }
}

TEST(PredictCase, OutputsSumToOne) {
  const Volume img = random_image({10, 10, 10}, 11);
  const PositionPredictor pred;
  const auto r = predict_case(img, pred, topology({4, 6, 8}), {true, {}});
  EXPECT_NO_THROW(validate(r.probabilities, 3));
  for (std::size_t i = 0; i < img.voxels(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += r.probabilities.at(k, i);
    ASSERT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(PredictCase, DriftedSumsAreRenormalized) {
  const Volume img = random_image({6, 7, 5}, 12);
  const ConstantPredictor pred(std::vector<float>{0.3f, 0.6f});
  const auto r = predict_case(img, pred, topology({4, 4, 4}), {true, {}});
  for (std::size_t i = 0; i < img.voxels(); ++i) {
    ASSERT_FLOAT_EQ(r.probabilities.at(0, i), 1.0f / 3.0f);
    ASSERT_FLOAT_EQ(r.probabilities.at(1, i), 2.0f / 3.0f);
  }
}

TEST(PredictCase, ShapeMismatchIsReported) {
  const Volume img = random_image({4, 4, 4}, 1);
  EXPECT_THROW(predict_case(img, WrongShapePredictor{}, topology({4, 4, 4})), ValidationError);
}

TEST(Ensemble, IdentityMidpointAndOracle) {
  Volume a(VolumeKind::softmax, 2, {3}, {1});
  for (std::size_t i = 0; i < 3; ++i) a.at(0, i) = 1.0f;
  Volume b(VolumeKind::softmax, 2, {3}, {1});
  for (std::size_t i = 0; i < 3; ++i) b.at(1, i) = 1.0f;
  EXPECT_EQ(ensemble({a, a}), a);
  const Volume mid = ensemble({a, b});
  for (float x : mid.data) EXPECT_EQ(x, 0.5f);

  std::mt19937_64 gen(3);
  std::vector<Volume> maps;
  for (int k = 0; k < 5; ++k) {
    Volume m(VolumeKind::softmax, 3, {4, 5}, {1, 1});
    for (float& x : m.data) x = static_cast<float>(gen() % 1000) / 1000.0f;
    maps.push_back(m);
  }
  const Volume e = ensemble(maps);
  for (std::size_t i = 0; i < e.data.size(); ++i) {
    double s = 0.0;
    for (const auto& m : maps) s += m.data[i];
    EXPECT_NEAR(e.data[i], s / 5.0, 1e-7);
    EXPECT_EQ(e.data[i], static_cast<float>(s / 5.0));
  }
  EXPECT_THROW(ensemble({a, Volume(VolumeKind::softmax, 2, {4}, {1})}), ValidationError);
}

TEST(DiceScore, Basics) {
  Volume a = make_labelmap({4}, {1});
  Volume b = make_labelmap({4}, {1});
  EXPECT_EQ(dice_score(a, b, 1), 1.0);
  a.data = {1, 1, 0, 0};
  b.data = {1, 1, 0, 0};
  EXPECT_EQ(dice_score(a, b, 1), 1.0);
  b.data = {0, 0, 1, 1};
  EXPECT_EQ(dice_score(a, b, 1), 0.0);
  b.data = {0, 1, 1, 0};
  EXPECT_EQ(dice_score(a, b, 1), 0.5);
}

TEST(SelectModel, ArgmaxAndTies) {
  EXPECT_EQ(select_model({{"2d", {0.4}}}), "2d");
  EXPECT_EQ(select_model({{"2d", {0.7}}, {"3d", {0.9}}}), "3d");
  EXPECT_EQ(select_model({{"2d", {0.9}}, {"3d", {0.7}}}), "2d");
  EXPECT_EQ(select_model({{"2d", {0.8}}, {"3d", {0.8}}, {"cascade", {0.8}}}), "3d");
  EXPECT_EQ(select_model({{"2d", {0.8}}, {"cascade", {0.8}}}), "cascade");
  EXPECT_EQ(select_model({{"2d+3d", {0.8}}, {"3d+cascade", {0.8}}, {"2d+cascade", {0.8}}}), "2d+3d");
  EXPECT_THROW(select_model({}), ValidationError);
}

TEST(SelectModel, CandidateOrder) {
  EXPECT_EQ(candidate_order({ModelKind::u2d, ModelKind::u3d}), (std::vector<std::string>{"3d", "2d", "2d+3d"}));
  EXPECT_EQ(candidate_order({ModelKind::u2d, ModelKind::u3d, ModelKind::cascade}),
            (std::vector<std::string>{"3d", "cascade", "2d", "2d+3d", "2d+cascade", "3d+cascade"}));
}

TEST(SelectModel, PublishedCrossValidationChoices) {
  const json doc = read_json(testing::data_dir() / "published_cv_dice.json");
  for (const auto& [dataset, entry] : doc.items()) {
    std::map<std::string, std::vector<double>> results;
    for (const auto& [id, dice] : entry.at("candidates").items()) results[id] = dice.get<std::vector<double>>();
    EXPECT_EQ(select_model(results), entry.at("selected").get<std::string>()) << dataset;
  }
  std::map<std::string, std::vector<double>> liver;
  for (const auto& [id, dice] : doc.at("Liver").at("candidates").items()) liver[id] = dice.get<std::vector<double>>();
  EXPECT_GT(mean_of(liver.at("3d+cascade")), mean_of(liver.at("3d")));
}

TEST(Folds, RoundRobinAndStable) {
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) ids.push_back("case_" + std::to_string(i));
  const auto folds = make_folds(ids, 7);
  ASSERT_EQ(folds.size(), 5u);
  std::size_t total = 0;
  for (const auto& f : folds) {
    EXPECT_GE(f.size(), 2u);
    EXPECT_LE(f.size(), 3u);
    total += f.size();
  }
  EXPECT_EQ(total, 12u);
  std::vector<std::string> shuffled = ids;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(make_folds(shuffled, 7), folds);
  EXPECT_NE(make_folds(ids, 8), folds);
  EXPECT_EQ(make_folds({"a", "b"}, 1).size(), 2u);
}

}  // namespace
}  // namespace segplan

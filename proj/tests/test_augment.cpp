#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "segplan/augment.hpp"

namespace segplan {
namespace {

TopologySpec topo3d(Extent patch, std::size_t batch) {
  TopologySpec t;
  t.dims = 3;
  t.axes = {0, 1, 2};
  t.patch_size = std::move(patch);
  t.batch_size = batch;
  t.pools_per_axis = {1, 1, 1};
  return t;
}

LoadedCase ramp_case(Extent extent) {
  LoadedCase c;
  c.image = Volume(VolumeKind::image, 1, extent, Spacing(extent.size(), 1.0));
  for (std::size_t i = 0; i < c.image.voxels(); ++i) c.image.data[i] = static_cast<float>(i + 1);
  c.label = make_labelmap(extent, Spacing(extent.size(), 1.0));
  return c;
}

AugmentationConfig identity_config(std::size_t dims) {
  AugmentationConfig c = default_augmentation(dims);
  std::fill(c.rotation_deg.begin(), c.rotation_deg.end(), 0.0);
  c.scale_low = c.scale_high = 1.0;
  c.elastic.probability = 0.0;
  c.gamma_low = c.gamma_high = 1.0;
  c.mirror_axes.clear();
  return c;
}

Sample random_sample(Extent extent, std::uint64_t seed, std::size_t classes = 3) {
  Rng rng(seed);
  Sample s{Volume(VolumeKind::image, 2, extent, Spacing(extent.size(), 1.0)),
           make_labelmap(extent, Spacing(extent.size(), 1.0))};
  for (float& x : s.image.data) x = static_cast<float>(rng.uniform(-3.0, 5.0));
  for (float& x : s.label.data) x = static_cast<float>(rng.index(classes));
  return s;
}

TEST(SampleBatch, ForcedCounts) {
  LoadedCase c = ramp_case({10, 12, 14});
  c.label.data[100] = 1;
  const std::vector<LoadedCase> cases{c};
  for (const auto& [batch, forced] : std::vector<std::pair<std::size_t, std::size_t>>{{9, 3}, {2, 1}, {1, 1}, {4, 2}}) {
    const Batch b = sample_batch(cases, topo3d({4, 4, 4}, batch), 1);
    ASSERT_EQ(b.size(), batch);
    EXPECT_EQ(b.forced_count(), forced);
    EXPECT_GE(3 * b.forced_count(), batch);
    for (std::size_t s = 0; s < batch; ++s) {
      EXPECT_EQ(b.foreground_forced[s], s < forced);
      EXPECT_EQ(b.images[s].extent, (Extent{4, 4, 4}));
      EXPECT_EQ(b.targets[s].extent, (Extent{4, 4, 4}));
    }
  }
}

TEST(SampleBatch, SingleVoxelClassAlwaysContained) {
  LoadedCase c = ramp_case({9, 20, 17});
  const std::size_t target = ravel({7, 3, 15}, strides_of(c.label.extent));
  c.label.data[target] = 2;
  const std::vector<LoadedCase> cases{c};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Batch b = sample_batch(cases, topo3d({4, 6, 5}, 2), seed);
    ASSERT_TRUE(b.foreground_forced[0]);
    const Volume& t = b.targets[0];
    ASSERT_EQ(std::count(t.data.begin(), t.data.end(), 2.0f), 1) << "seed " << seed;
    // The image value identifies the voxel uniquely.
    const Volume& img = b.images[0];
    const auto pos = std::find(t.data.begin(), t.data.end(), 2.0f) - t.data.begin();
    ASSERT_EQ(img.data[static_cast<std::size_t>(pos)], static_cast<float>(target + 1));
  }
}

TEST(SampleBatch, SmallCasesArePaddedSymmetrically) {
  LoadedCase c = ramp_case({2, 3, 4});
  c.label.data[5] = 1;
  const std::vector<LoadedCase> cases{c};
  const Batch b = sample_batch(cases, topo3d({4, 5, 4}, 3), 3);
  for (const Volume& img : b.images) {
    // Before-padding (P - E) / 2 on each axis: 1, 1, 0.
    EXPECT_EQ(img.data[ravel({1, 1, 0}, strides_of(img.extent))], 1.0f);
    EXPECT_EQ(img.data[0], 0.0f);
    EXPECT_EQ(std::count_if(img.data.begin(), img.data.end(), [](float x) { return x != 0.0f; }), 24);
  }
}

TEST(SampleBatch, NoForegroundIsFlagged) {
  const std::vector<LoadedCase> cases{ramp_case({6, 6, 6})};
  const Batch b = sample_batch(cases, topo3d({3, 3, 3}, 6), 4);
  EXPECT_TRUE(b.no_foreground);
  EXPECT_EQ(b.forced_count(), 0u);
}

TEST(SampleBatch, TwoDimensionalPatchesFromSlices) {
  LoadedCase c = ramp_case({5, 8, 9});
  c.label.data[ravel({3, 4, 4}, strides_of(c.label.extent))] = 1;
  TopologySpec t;
  t.dims = 2;
  t.axes = {1, 2};
  t.patch_size = {4, 4};
  t.batch_size = 3;
  t.pools_per_axis = {1, 1};
  const std::vector<LoadedCase> cases{c};
  const Batch b = sample_batch(cases, t, 5);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(b.images[s].extent, (Extent{4, 4}));
    EXPECT_EQ(b.images[s].spacing.size(), 2u);
  }
  EXPECT_EQ(std::count(b.targets[0].data.begin(), b.targets[0].data.end(), 1.0f), 1);
}

TEST(SampleBatchProperty, DeterministicAndLabelsFromSource) {
  LoadedCase a = ramp_case({12, 10, 11});
  LoadedCase b = ramp_case({8, 14, 9});
  for (std::size_t i = 0; i < a.label.voxels(); i += 7) a.label.data[i] = 1;
  for (std::size_t i = 0; i < b.label.voxels(); i += 13) b.label.data[i] = 3;
  const std::vector<LoadedCase> cases{a, b};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Batch x = sample_batch(cases, topo3d({6, 6, 6}, 5), seed);
    const Batch y = sample_batch(cases, topo3d({6, 6, 6}, 5), seed);
    ASSERT_EQ(x.images, y.images);
    ASSERT_EQ(x.targets, y.targets);
    for (const Volume& t : x.targets) {
      for (float v : t.data) ASSERT_TRUE(v == 0.0f || v == 1.0f || v == 3.0f);
    }
  }
  EXPECT_EQ(sample_batches(cases, topo3d({6, 6, 6}, 2), 9, 6, 1)[4].images,
            sample_batches(cases, topo3d({6, 6, 6}, 2), 9, 6, 3)[4].images);
}

TEST(Spatial, IdentityConfigLeavesSampleUnchanged) {
  for (std::size_t dims : {2u, 3u}) {
    const Sample s = random_sample(dims == 2 ? Extent{9, 11} : Extent{5, 7, 6}, 1);
    Rng rng(2);
    const Sample out = apply_spatial(s, identity_config(dims), rng);
    EXPECT_EQ(out.label, s.label);
    for (std::size_t i = 0; i < s.image.data.size(); ++i) ASSERT_NEAR(out.image.data[i], s.image.data[i], 1e-6);
  }
}

TEST(Spatial, QuarterTurnTransposesABar) {
  const Extent e{7, 7};
  Sample s{Volume(VolumeKind::image, 1, e, {1, 1}), make_labelmap(e, {1, 1})};
  const Extent st = strides_of(e);
  for (std::size_t x = 1; x < 6; ++x) {
    s.image.data[ravel({3, x}, st)] = 10.0f;
    s.label.data[ravel({3, x}, st)] = static_cast<float>(x);
  }
  SpatialParams p;
  p.angles_rad = {std::numbers::pi / 2};
  const Sample out = apply_spatial(s, p);
  // Output (y, x) reads source (x, 6 - y): the row bar becomes a column.
  for (std::size_t y = 0; y < 7; ++y) {
    for (std::size_t x = 0; x < 7; ++x) {
      const std::size_t src = ravel({x, 6 - y}, st);
      ASSERT_EQ(out.label.data[ravel({y, x}, st)], s.label.data[src]);
      ASSERT_NEAR(out.image.data[ravel({y, x}, st)], s.image.data[src], 1e-6);
    }
  }
  std::multiset<float> before(s.label.data.begin(), s.label.data.end());
  std::multiset<float> after(out.label.data.begin(), out.label.data.end());
  EXPECT_EQ(before, after);
}

TEST(Spatial, MirrorIsAnInvolution) {
  const Sample s = random_sample({4, 5, 6}, 3);
  for (std::size_t a = 0; a < 3; ++a) {
    const Sample twice = mirror(mirror(s, a), a);
    EXPECT_EQ(twice.image, s.image);
    EXPECT_EQ(twice.label, s.label);
    EXPECT_NE(mirror(s, a).image, s.image);
  }
}

TEST(Spatial, ScalingKeepsTheCentre) {
  const Extent e{9, 9, 9};
  Sample s{Volume(VolumeKind::image, 1, e, {1, 1, 1}), make_labelmap(e, {1, 1, 1})};
  const std::size_t centre = ravel({4, 4, 4}, strides_of(e));
  s.image.data[centre] = 7.0f;
  s.label.data[centre] = 1.0f;
  SpatialParams p;
  p.angles_rad = {0.3, -0.2, 0.1};
  p.scale = 1.2;
  const Sample out = apply_spatial(s, p);
  EXPECT_EQ(out.label.data[centre], 1.0f);
  EXPECT_NEAR(out.image.data[centre], 7.0f, 1e-6);
}

TEST(SpatialProperty, LabelsStayInTheSourceSetAndRunsAreDeterministic) {
  AugmentationConfig cfg = default_augmentation(3);
  cfg.elastic.probability = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Sample s = random_sample({8, 9, 10}, seed, 4);
    Rng a(seed), b(seed);
    const Sample x = augment_sample(s, cfg, a);
    const Sample y = augment_sample(s, cfg, b);
    ASSERT_EQ(x.image, y.image);
    ASSERT_EQ(x.label, y.label);
    for (float v : x.label.data) ASSERT_TRUE(v == 0.0f || v == 1.0f || v == 2.0f || v == 3.0f);
    for (float v : x.image.data) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Spatial, SliceWiseModeNeverMixesSlices) {
  // Each slice along the short axis holds a distinct constant label; a 2D
  // configuration must keep every output label in {0, own slice id}.
  const Extent e{3, 12, 10};
  Sample s{Volume(VolumeKind::image, 1, e, {3, 1, 1}), make_labelmap(e, {3, 1, 1})};
  for (std::size_t i = 0; i < s.label.voxels(); ++i) {
    const std::size_t z = unravel(i, e)[0];
    s.label.data[i] = static_cast<float>(z + 1);
    s.image.data[i] = static_cast<float>(10 * (z + 1));
  }
  AugmentationConfig cfg = default_augmentation(2);
  cfg.elastic.probability = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Sample out = apply_spatial(s, cfg, rng);
    for (std::size_t i = 0; i < out.label.voxels(); ++i) {
      const float z = static_cast<float>(unravel(i, e)[0] + 1);
      ASSERT_TRUE(out.label.data[i] == 0.0f || out.label.data[i] == z);
    }
  }
}

TEST(Gamma, IdentityAndSquare) {
  Volume ramp(VolumeKind::image, 1, {11}, {1});
  for (std::size_t i = 0; i < 11; ++i) ramp.data[i] = static_cast<float>(i) / 10.0f;
  EXPECT_EQ(apply_gamma(ramp, 1.0), ramp);
  const Volume sq = apply_gamma(ramp, 2.0);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_NEAR(sq.data[i], ramp.data[i] * ramp.data[i], 1e-6);
  Volume flat(VolumeKind::image, 1, {5}, {1});
  std::fill(flat.data.begin(), flat.data.end(), 3.0f);
  EXPECT_EQ(apply_gamma(flat, 1.4), flat);
}

TEST(GammaProperty, MinMaxPreserved) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Sample s = random_sample({5, 6, 7}, 100 + static_cast<std::uint64_t>(trial));
    const double gamma = rng.uniform(0.7, 1.5);
    const Volume out = apply_gamma(s.image, gamma);
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const auto a = s.image.channel(ch);
      const auto b = out.channel(ch);
      ASSERT_EQ(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
      ASSERT_EQ(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
    }
  }
}

TEST(Morphology, DilatingOneVoxel) {
  Mask m(125, 0);
  m[ravel({2, 2, 2}, strides_of({5, 5, 5}))] = 1;
  const Mask d = morphology(m, {5, 5, 5}, Morphology::dilate, 1);
  EXPECT_EQ(std::count(d.begin(), d.end(), 1), 27);
  EXPECT_EQ(ball_offsets(2, 1).size(), 9u);
  EXPECT_EQ(ball_offsets(3, 1).size(), 27u);
  // Brute-force neighbourhood count for larger radii.
  for (int r = 2; r <= 3; ++r) {
    std::size_t expected = 0;
    for (int z = -r; z <= r; ++z) {
      for (int y = -r; y <= r; ++y) {
        for (int x = -r; x <= r; ++x) expected += z * z + y * y + x * x <= r * r + 2;
      }
    }
    EXPECT_EQ(ball_offsets(3, r).size(), expected);
  }
}

TEST(Morphology, ErodeOpenClose) {
  const Extent e{7, 7, 7};
  Mask cube(343, 0);
  for_each_coord({3, 3, 3}, [&](const Extent& c) { cube[ravel({c[0] + 2, c[1] + 2, c[2] + 2}, strides_of(e))] = 1; });
  const Mask er = morphology(cube, e, Morphology::erode, 1);
  EXPECT_EQ(std::count(er.begin(), er.end(), 1), 1);
  EXPECT_EQ(morphology(cube, e, Morphology::open, 1), cube);
  EXPECT_EQ(morphology(cube, e, Morphology::close, 1), cube);
}

Volume onehot_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Volume lab = make_labelmap({10, 10, 10}, {1, 1, 1});
  for (int blob = 0; blob < 6; ++blob) {
    const float k = static_cast<float>(1 + rng.index(3));
    const Extent c{rng.index(8), rng.index(8), rng.index(8)};
    for_each_coord({2, 2, 2}, [&](const Extent& d) {
      lab.data[ravel({c[0] + d[0], c[1] + d[1], c[2] + d[2]}, strides_of(lab.extent))] = k;
    });
  }
  return one_hot(lab, 4);
}

TEST(Corruption, ZeroProbabilitiesAreIdentity) {
  const Volume in = onehot_fixture(1);
  Rng rng(5);
  EXPECT_EQ(corrupt_cascade_input(in, rng, {0.0, 0.0}), in);
}

TEST(Corruption, RejectsSoftInput) {
  Volume in = onehot_fixture(1);
  in.data[0] = 0.5f;
  Rng rng(1);
  EXPECT_THROW(corrupt_cascade_input(in, rng), ValidationError);
}

TEST(Corruption, RemovalKeepsAtLeastOneComponent) {
  Volume lab = make_labelmap({9}, {1});
  lab.data[1] = lab.data[5] = 1;
  const Volume in = one_hot(lab, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Volume out = corrupt_cascade_input(in, rng, {0.0, 1.0});
    EXPECT_EQ(std::count(out.channel(1).begin(), out.channel(1).end(), 1.0f), 1);
  }
  Volume single = make_labelmap({9}, {1});
  single.data[4] = 1;
  Rng rng(3);
  EXPECT_EQ(corrupt_cascade_input(one_hot(single, 2), rng, {0.0, 1.0}), one_hot(single, 2));
}

TEST(CorruptionProperty, OutputStaysOneHotAndDeterministic) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Volume in = onehot_fixture(seed);
    Rng a(seed), b(seed);
    const Volume x = corrupt_cascade_input(in, a, {0.8, 0.5});
    ASSERT_EQ(x, corrupt_cascade_input(in, b, {0.8, 0.5}));
    for (std::size_t i = 0; i < x.voxels(); ++i) {
      float sum = 0.0f;
      for (std::size_t k = 0; k < 4; ++k) {
        ASSERT_TRUE(x.at(k, i) == 0.0f || x.at(k, i) == 1.0f);
        sum += x.at(k, i);
      }
      ASSERT_EQ(sum, 1.0f);
    }
  }
}

}  // namespace
}  // namespace segplan

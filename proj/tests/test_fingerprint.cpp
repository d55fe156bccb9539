#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "segplan/fingerprint.hpp"
#include "test_support.hpp"

namespace segplan {
namespace {

DatasetDescriptor descriptor(const std::string& modality, std::size_t classes) {
  DatasetDescriptor d;
  d.name = "toy";
  d.modality[0] = lowercase(modality);
  for (std::size_t k = 0; k < classes; ++k) d.labels[static_cast<int>(k)] = "c" + std::to_string(k);
  return d;
}

LabeledCase filled_case(const std::string& id, Extent extent, Spacing spacing, float value = 1.0f) {
  LabeledCase c{id, Volume(VolumeKind::image, 1, extent, spacing), make_labelmap(extent, spacing)};
  std::fill(c.image.data.begin(), c.image.data.end(), value);
  return c;
}

// Straightforward flood fill with an explicit stack, written independently of
// the library's BFS labelling.
std::size_t oracle_component_count(const Volume& labels, int cls) {
  const std::size_t dims = labels.dims();
  const std::size_t n = labels.voxels();
  std::vector<int> tag(n, 0);
  std::size_t count = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (labels.label(s) != cls || tag[s]) continue;
    ++count;
    std::vector<std::size_t> stack{s};
    tag[s] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const Extent ci = unravel(i, labels.extent);
      for (std::size_t j = 0; j < n; ++j) {
        if (tag[j] || labels.label(j) != cls) continue;
        const Extent cj = unravel(j, labels.extent);
        bool adjacent = true;
        for (std::size_t a = 0; a < dims; ++a) {
          const long long d = static_cast<long long>(ci[a]) - static_cast<long long>(cj[a]);
          adjacent = adjacent && d >= -1 && d <= 1;
        }
        if (adjacent) {
          tag[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return count;
}

double oracle_quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values[lo];
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

TEST(Fingerprint, MedianSpacingPerAxis) {
  std::vector<LabeledCase> cases{filled_case("a", {4, 4, 4}, {1, 1, 1}), filled_case("b", {4, 4, 4}, {1, 1, 2}),
                                 filled_case("c", {4, 4, 4}, {1, 1, 3})};
  const auto fp = extract_fingerprint(descriptor("mri", 2), cases);
  EXPECT_EQ(fp.median_spacing, (Spacing{1, 1, 2}));
  // Cropped shapes 4x4x4 rescaled to spacing 2 on the last axis: 2, 4, 6.
  EXPECT_EQ(fp.median_shape_resampled, (Extent{4, 4, 4}));
  EXPECT_EQ(fp.dataset_voxels, 3u * 64u);
}

TEST(Fingerprint, EvenCountUsesLowerMedian) {
  std::vector<LabeledCase> cases{filled_case("a", {2, 2}, {1, 4}), filled_case("b", {2, 2}, {1, 2})};
  const auto fp = extract_fingerprint(descriptor("mri", 2), cases);
  EXPECT_EQ(fp.median_spacing, (Spacing{1, 2}));
}

TEST(Fingerprint, DegenerateMriCase) {
  std::vector<LabeledCase> cases{filled_case("a", {3, 3, 3}, {1, 1, 1})};
  const auto fp = extract_fingerprint(descriptor("MRI", 2), cases);
  EXPECT_FALSE(fp.is_ct);
  EXPECT_FALSE(fp.ct_stats.has_value());
  EXPECT_TRUE(fp.single_component_classes.empty());
  EXPECT_DOUBLE_EQ(fp.crop_reduction, 1.0);
}

TEST(Fingerprint, CtPercentilesMatchSortOracle) {
  LabeledCase a = filled_case("a", {1, 10, 10}, {1, 1, 1});
  LabeledCase b = filled_case("b", {1, 10, 10}, {1, 1, 1});
  for (std::size_t i = 0; i < 100; ++i) {
    a.image.data[i] = static_cast<float>(i);
    b.image.data[i] = static_cast<float>(100 + i);
    a.label.data[i] = 1;
    b.label.data[i] = 1;
  }
  std::vector<LabeledCase> cases{a, b};
  const auto fp = extract_fingerprint(descriptor("CT", 2), cases);
  ASSERT_TRUE(fp.ct_stats.has_value());
  std::vector<double> pooled(200);
  for (int i = 0; i < 200; ++i) pooled[i] = i;
  EXPECT_DOUBLE_EQ(fp.ct_stats->p0_5, oracle_quantile(pooled, 0.005));
  EXPECT_DOUBLE_EQ(fp.ct_stats->p99_5, oracle_quantile(pooled, 0.995));
  EXPECT_NEAR(fp.ct_stats->p0_5, 0.995, 1e-12);
  EXPECT_NEAR(fp.ct_stats->p99_5, 198.005, 1e-12);
  EXPECT_DOUBLE_EQ(fp.ct_stats->mean, 99.5);
}

TEST(Fingerprint, CtPercentilesOnlyUseForeground) {
  LabeledCase a = filled_case("a", {1, 4, 4}, {1, 1, 1}, 1000.0f);
  a.image.data[5] = 7.0f;
  a.label.data[5] = 1;
  std::vector<LabeledCase> cases{a};
  const auto fp = extract_fingerprint(descriptor("ct", 2), cases);
  EXPECT_DOUBLE_EQ(fp.ct_stats->mean, 7.0);
  EXPECT_DOUBLE_EQ(fp.ct_stats->sd, 0.0);
  EXPECT_DOUBLE_EQ(fp.ct_stats->p99_5, 7.0);
}

TEST(Fingerprint, CtWithoutForegroundIsAnError) {
  std::vector<LabeledCase> cases{filled_case("a", {2, 2, 2}, {1, 1, 1})};
  EXPECT_THROW(extract_fingerprint(descriptor("CT", 2), cases), ValidationError);
}

TEST(Fingerprint, ShapeMismatchIsAnError) {
  LabeledCase c = filled_case("a", {2, 2, 2}, {1, 1, 1});
  c.label = make_labelmap({2, 2, 3}, {1, 1, 1});
  std::vector<LabeledCase> cases{c};
  EXPECT_THROW(extract_fingerprint(descriptor("mri", 2), cases), ValidationError);
}

TEST(Fingerprint, CropReductionWithZeroBorder) {
  LabeledCase c = filled_case("a", {6, 6, 6}, {1, 1, 1}, 0.0f);
  for_each_coord(c.image.extent, [&](const Extent& x) {
    if (x[0] >= 1 && x[0] < 4 && x[1] >= 1 && x[1] < 4 && x[2] >= 1 && x[2] < 4) {
      c.image.data[ravel(x, strides_of(c.image.extent))] = 2.0f;
    }
  });
  std::vector<LabeledCase> cases{c};
  const auto fp = extract_fingerprint(descriptor("mri", 2), cases);
  EXPECT_DOUBLE_EQ(fp.crop_reduction, 27.0 / 216.0);
  EXPECT_EQ(fp.median_shape_resampled, (Extent{3, 3, 3}));
}

TEST(SingleComponent, OneBlobPerCase) {
  std::vector<Volume> labels;
  for (int k = 0; k < 3; ++k) {
    Volume lab = make_labelmap({5, 5, 5}, {1, 1, 1});
    lab.data[ravel({1, 1, static_cast<std::size_t>(k)}, strides_of(lab.extent))] = 1;
    lab.data[ravel({2, 2, static_cast<std::size_t>(k + 1)}, strides_of(lab.extent))] = 1;  // diagonal neighbour
    labels.push_back(lab);
  }
  EXPECT_EQ(class_single_component(labels, 2), (std::vector<int>{1}));
}

TEST(SingleComponent, TwoBlobsInOneCase) {
  std::vector<Volume> labels;
  Volume a = make_labelmap({5, 5, 5}, {1, 1, 1});
  a.data[0] = 1;
  Volume b = a;
  b.data[124] = 1;
  labels.push_back(a);
  labels.push_back(b);
  EXPECT_TRUE(class_single_component(labels, 2).empty());
}

TEST(SingleComponent, AbsentClassExcluded) {
  std::vector<Volume> labels{make_labelmap({3, 3}, {1, 1})};
  labels[0].data[4] = 2;
  EXPECT_EQ(class_single_component(labels, 3), (std::vector<int>{2}));
}

TEST(SingleComponentProperty, MatchesFloodFillOracle) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<Volume> labels;
    for (int c = 0; c < 5; ++c) {
      Volume lab = make_labelmap({6, 6, 6}, {1, 1, 1});
      for (float& x : lab.data) {
        const auto r = gen() % 100;
        x = r < 8 ? 1.0f : (r < 10 ? 2.0f : 0.0f);
      }
      // Half the trials draw class 1 as one random box so the positive
      // outcome is exercised as well.
      if (trial % 2 == 0) {
        const Extent lo{gen() % 4, gen() % 4, gen() % 4};
        for_each_coord(lab.extent, [&](const Extent& x) {
          float& v = lab.data[ravel(x, strides_of(lab.extent))];
          const bool in = x[0] >= lo[0] && x[0] <= lo[0] + 1 && x[1] >= lo[1] && x[1] <= lo[1] + 2 && x[2] >= lo[2];
          if (in) v = 1.0f;
          else if (v == 1.0f) v = 0.0f;
        });
      }
      labels.push_back(lab);
    }
    std::vector<int> expected;
    for (int k = 1; k < 3; ++k) {
      bool present = false;
      bool single = true;
      for (const auto& lab : labels) {
        const std::size_t n = oracle_component_count(lab, k);
        present = present || n > 0;
        single = single && n <= 1;
      }
      if (present && single) expected.push_back(k);
    }
    if (trial % 2 == 0) {
      EXPECT_FALSE(expected.empty());
    }
    EXPECT_EQ(class_single_component(labels, 3), expected) << "trial " << trial;
  }
}

TEST(FingerprintProperty, PermutationInvariant) {
  std::mt19937_64 gen(11);
  std::vector<LabeledCase> cases;
  for (int i = 0; i < 6; ++i) {
    const Extent e{4 + gen() % 4, 5 + gen() % 3, 3 + gen() % 5};
    const Spacing s{0.5 + static_cast<double>(gen() % 4), 1.0, 0.8 + 0.1 * static_cast<double>(gen() % 3)};
    LabeledCase c = filled_case("c" + std::to_string(i), e, s);
    for (std::size_t v = 0; v < c.image.voxels(); ++v) {
      c.image.data[v] = static_cast<float>(gen() % 500) - 100.0f;
      c.label.data[v] = static_cast<float>(gen() % 3);
    }
    cases.push_back(c);
  }
  const auto reference = extract_fingerprint(descriptor("ct", 3), cases);
  for (int p = 0; p < 5; ++p) {
    std::shuffle(cases.begin(), cases.end(), gen);
    EXPECT_EQ(extract_fingerprint(descriptor("ct", 3), cases, 1 + p % 3), reference);
  }
}

TEST(FingerprintProperty, CropReductionIsOneWithoutZeroBorder) {
  std::mt19937_64 gen(3);
  std::vector<LabeledCase> cases;
  for (int i = 0; i < 4; ++i) {
    LabeledCase c = filled_case("c" + std::to_string(i), {3 + gen() % 4, 3 + gen() % 4}, {1, 1});
    for (float& x : c.image.data) x = 1.0f + static_cast<float>(gen() % 9);
    cases.push_back(c);
  }
  EXPECT_DOUBLE_EQ(extract_fingerprint(descriptor("mri", 2), cases).crop_reduction, 1.0);
}

TEST(FingerprintJson, RoundTrip) {
  for (const char* name : {"liver", "heart", "prostate"}) {
    const auto fp = testing::fixture_fingerprint(name);
    EXPECT_EQ(fingerprint_from_json(json::parse(to_json(fp).dump())), fp) << name;
  }
}

TEST(FingerprintJson, RejectsInconsistentCtStats) {
  json doc = json::parse(to_json(testing::fixture_fingerprint("liver")).dump());
  doc["is_ct"] = false;
  EXPECT_THROW(fingerprint_from_json(doc), ValidationError);
}

}  // namespace
}  // namespace segplan

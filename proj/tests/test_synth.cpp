#include <gtest/gtest.h>

#include <cmath>

#include "segplan/components.hpp"
#include "segplan/synth.hpp"
#include "test_support.hpp"

using namespace segplan;

TEST(Synth, CaseIds) {
  EXPECT_EQ(synth_case_id(0), "case_000");
  EXPECT_EQ(synth_case_id(42), "case_042");
}

TEST(Synth, SameSeedSameCase) {
  const SynthConfig cfg;
  const SynthCase a = generate_synth_case(cfg, 3);
  const SynthCase b = generate_synth_case(cfg, 3);
  EXPECT_EQ(a.image.extent, b.image.extent);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.label.data, b.label.data);
  const SynthCase c = generate_synth_case(cfg, 4);
  EXPECT_NE(a.image.data, c.image.data);
}

TEST(Synth, EveryClassIsOneComponent) {
  SynthConfig cfg;
  cfg.num_classes = 4;
  for (std::size_t i = 0; i < 6; ++i) {
    const SynthCase c = generate_synth_case(cfg, i);
    for (int k = 1; k < 4; ++k) {
      const Mask m = class_mask(c.label, k);
      const auto comps = connected_components(m, c.label.extent, full_connectivity(3));
      EXPECT_EQ(comps.size(), 1u) << "case " << i << " class " << k;
    }
  }
}

TEST(Synth, BackgroundOutsideBodyIsZero) {
  const SynthCase c = generate_synth_case(SynthConfig{}, 0);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < c.image.voxels(); ++i) {
    if (c.image.data[i] == 0.0f) {
      ++zeros;
      EXPECT_EQ(c.label.data[i], 0.0f);
    } else {
      EXPECT_GE(c.image.data[i], 1.0f);
    }
  }
  EXPECT_GT(zeros, 0u);
  EXPECT_LT(zeros, c.image.voxels());
}

TEST(Synth, ClassIntensitiesAreSeparated) {
  SynthConfig cfg;
  cfg.noise_sd = 0.0;
  const SynthCase c = generate_synth_case(cfg, 1);
  for (std::size_t i = 0; i < c.image.voxels(); ++i) {
    const int k = static_cast<int>(c.label.data[i]);
    if (k > 0) {
      EXPECT_FLOAT_EQ(c.image.data[i], static_cast<float>(cfg.body_intensity + k * cfg.class_intensity_step));
    }
  }
}

// The distractor carries class-1 intensity but no label.
TEST(Synth, DistractorIsUnlabelled) {
  SynthConfig cfg;
  cfg.noise_sd = 0.0;
  const float organ1 = static_cast<float>(cfg.body_intensity + cfg.class_intensity_step);
  auto unlabelled_organ_voxels = [&](const SynthCase& c) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.image.voxels(); ++i) n += c.label.data[i] == 0.0f && c.image.data[i] == organ1;
    return n;
  };
  EXPECT_EQ(unlabelled_organ_voxels(generate_synth_case(cfg, 0)), 0u);
  cfg.distractor = true;
  const SynthCase with = generate_synth_case(cfg, 0);
  EXPECT_GT(unlabelled_organ_voxels(with), 0u);
  const Mask m = class_mask(with.label, 1);
  EXPECT_EQ(connected_components(m, with.label.extent, 26).size(), 1u);
  // Organ and distractor must be separate blobs of equal intensity.
  Mask bright(with.image.voxels());
  for (std::size_t i = 0; i < bright.size(); ++i) bright[i] = with.image.data[i] == organ1;
  EXPECT_EQ(connected_components(bright, with.image.extent, 26).size(), 2u);
}

TEST(Synth, TwoDimensionalCases) {
  SynthConfig cfg;
  cfg.extent = {48, 40};
  cfg.spacing = {1.0, 1.0};
  const SynthCase c = generate_synth_case(cfg, 0);
  EXPECT_EQ(c.image.dims(), 2u);
  EXPECT_EQ(connected_components(class_mask(c.label, 1), c.label.extent, 8).size(), 1u);
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig cfg;
  cfg.num_classes = 1;
  EXPECT_THROW(validate(cfg), ValidationError);
  cfg = SynthConfig{};
  cfg.spacing = {1.0, 1.0};
  EXPECT_THROW(validate(cfg), ValidationError);
  cfg = SynthConfig{};
  cfg.num_cases = 0;
  EXPECT_THROW(validate(cfg), ValidationError);
}

TEST(Synth, DatasetRoundTripsThroughDescriptor) {
  const auto root = segplan::testing::scratch_dir("synth_dataset");
  SynthConfig cfg;
  cfg.num_cases = 3;
  write_synth_dataset(cfg, root);
  const DatasetDescriptor d = read_descriptor(root / "dataset.json");
  EXPECT_EQ(d.name, "Synthetic");
  EXPECT_EQ(d.num_classes(), 3u);
  ASSERT_EQ(d.training_cases.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const SynthCase expected = generate_synth_case(cfg, i);
    EXPECT_EQ(d.training_cases[i].id, expected.id);
    EXPECT_EQ(read_volume(d.training_cases[i].image).data, expected.image.data);
    EXPECT_EQ(read_volume(d.training_cases[i].label).data, expected.label.data);
  }
}

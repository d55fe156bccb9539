#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "segplan/errors.hpp"
#include "segplan/io.hpp"
#include "segplan/rng.hpp"
#include "segplan/volume.hpp"

namespace segplan {

// Gaussian-blob organs inside an ellipsoidal body on a zero background.
struct SynthConfig {
  std::string name = "Synthetic";
  std::size_t num_cases = 10;
  Extent extent{24, 40, 40};
  Spacing spacing{3.0, 1.0, 1.0};  // first axis coarse by default
  double spacing_jitter = 0.1;     // relative, per case and axis
  double extent_jitter = 0.1;      // relative, per case and axis
  std::size_t num_classes = 3;     // including background
  std::string modality = "MRI";
  double body_intensity = 100.0;
  double class_intensity_step = 60.0;  // class k is centred at body + k * step
  double noise_sd = 6.0;
  double organ_radius_mm = 9.0;
  // Plants an unlabelled blob with class-1 intensity in every case.
  bool distractor = false;
  double distractor_radius_mm = 5.0;
  std::uint64_t seed = 7;
};

struct SynthCase {
  std::string id;
  Volume image;
  Volume label;
};

inline void validate(const SynthConfig& c) {
  require(c.num_cases >= 1, "synthetic dataset needs at least one case");
  require(c.extent.size() == 2 || c.extent.size() == 3, "synthetic extent must be 2D or 3D");
  require(c.spacing.size() == c.extent.size(), "synthetic spacing does not match extent");
  for (std::size_t e : c.extent) require(e >= 8, "synthetic extent must be at least 8 per axis");
  for (double s : c.spacing) require(s > 0.0, "synthetic spacing must be positive");
  require(c.num_classes >= 2, "synthetic dataset needs a foreground class");
  require(c.spacing_jitter >= 0.0 && c.spacing_jitter < 1.0 && c.extent_jitter >= 0.0 && c.extent_jitter < 0.5,
          "synthetic jitter out of range");
  require(c.organ_radius_mm > 0.0 && c.noise_sd >= 0.0, "invalid synthetic organ parameters");
}

inline std::string synth_case_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%03zu", i);
  return buf;
}

namespace detail {

// Physical-space ellipsoid test with per-axis radii (mm).
inline double ellipsoid_r2(const Extent& c, const std::vector<double>& centre_mm, const std::vector<double>& radius_mm,
                           const Spacing& spacing) {
  double r2 = 0.0;
  for (std::size_t a = 0; a < c.size(); ++a) {
    const double d = (static_cast<double>(c[a]) + 0.5) * spacing[a] - centre_mm[a];
    r2 += d * d / (radius_mm[a] * radius_mm[a]);
  }
  return r2;
}

}  // namespace detail

inline SynthCase generate_synth_case(const SynthConfig& cfg, std::size_t index) {
  Rng rng(cfg.seed * 1000003ULL + index);
  const std::size_t dims = cfg.extent.size();
  Extent extent(dims);
  Spacing spacing(dims);
  std::vector<double> size_mm(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    const double e = static_cast<double>(cfg.extent[a]) * rng.uniform(1.0 - cfg.extent_jitter, 1.0 + cfg.extent_jitter);
    extent[a] = std::max<std::size_t>(8, static_cast<std::size_t>(std::lround(e)));
    spacing[a] = cfg.spacing[a] * rng.uniform(1.0 - cfg.spacing_jitter, 1.0 + cfg.spacing_jitter);
    size_mm[a] = static_cast<double>(extent[a]) * spacing[a];
  }

  SynthCase out;
  out.id = synth_case_id(index);
  out.image = Volume(VolumeKind::image, 1, extent, spacing);
  out.label = make_labelmap(extent, spacing);

  // Body: ellipsoid nearly touching the field-of-view faces, so cropping to
  // nonzero voxels removes little; outside stays 0.
  std::vector<double> body_centre(dims), body_radius(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    body_centre[a] = 0.5 * size_mm[a];
    body_radius[a] = 0.48 * size_mm[a];
  }

  // Organs placed along the body's long diagonal so they never overlap.
  const std::size_t organs = cfg.num_classes - 1;
  std::vector<std::vector<double>> centres(organs, std::vector<double>(dims));
  std::vector<std::vector<double>> radii(organs, std::vector<double>(dims));
  for (std::size_t k = 0; k < organs; ++k) {
    const double t = (static_cast<double>(k) + 1.0) / (static_cast<double>(organs) + 1.0);
    for (std::size_t a = 0; a < dims; ++a) {
      const double r = std::min(cfg.organ_radius_mm, 0.18 * size_mm[a]) * rng.uniform(0.8, 1.2);
      radii[k][a] = r;
      const double along = a == 0 ? 0.5 : t;  // coarse axis stays central
      centres[k][a] = body_centre[a] + (along - 0.5) * 1.2 * body_radius[a] + rng.uniform(-0.05, 0.05) * size_mm[a];
    }
  }
  std::vector<double> distractor_centre, distractor_radius(dims);
  if (cfg.distractor) {
    for (std::size_t a = 0; a < dims; ++a) distractor_radius[a] = std::max(cfg.distractor_radius_mm, 1.01 * spacing[a]);
    // Candidates off the organ diagonal: along each axis, then the in-plane
    // anti-diagonals. The first one inside the body that clears every organ
    // wins.
    std::vector<std::vector<double>> candidates;
    for (std::size_t a = 0; a < dims; ++a) {
      for (double sign : {1.0, -1.0}) {
        std::vector<double> c = body_centre;
        c[a] += sign * 0.7 * body_radius[a];
        candidates.push_back(c);
      }
    }
    for (double sign : {1.0, -1.0}) {
      std::vector<double> c = body_centre;
      c[dims - 2] += sign * 0.5 * body_radius[dims - 2];
      c[dims - 1] -= sign * 0.5 * body_radius[dims - 1];
      candidates.push_back(c);
    }
    auto in_organ = [&](const Extent& v) {
      for (std::size_t k = 0; k < organs; ++k) {
        if (detail::ellipsoid_r2(v, centres[k], radii[k], spacing) <= 1.0) return true;
      }
      return false;
    };
    // No distractor voxel may lie within two voxels of an organ voxel.
    auto clear_of_organs = [&](const std::vector<double>& c) {
      bool clear = true;
      for_each_coord(extent, [&](const Extent& v) {
        if (!clear || detail::ellipsoid_r2(v, c, distractor_radius, spacing) > 1.0) return;
        if (detail::ellipsoid_r2(v, body_centre, body_radius, spacing) > 1.0) clear = false;
        for_each_coord(Extent(dims, 5), [&](const Extent& o) {
          Extent n(dims);
          for (std::size_t a = 0; a < dims; ++a) {
            const long long p = static_cast<long long>(v[a] + o[a]) - 2;
            if (p < 0 || p >= static_cast<long long>(extent[a])) return;
            n[a] = static_cast<std::size_t>(p);
          }
          if (in_organ(n)) clear = false;
        });
      });
      return clear;
    };
    for (const auto& c : candidates) {
      if (clear_of_organs(c)) {
        distractor_centre = c;
        break;
      }
    }
    require(!distractor_centre.empty(), "synthetic field of view too small to place the distractor");
  }

  const Extent strides = strides_of(extent);
  for_each_coord(extent, [&](const Extent& c) {
    const std::size_t i = ravel(c, strides);
    if (detail::ellipsoid_r2(c, body_centre, body_radius, spacing) > 1.0) return;
    double value = cfg.body_intensity;
    for (std::size_t k = 0; k < organs; ++k) {
      if (detail::ellipsoid_r2(c, centres[k], radii[k], spacing) <= 1.0) {
        value = cfg.body_intensity + cfg.class_intensity_step * static_cast<double>(k + 1);
        out.label.data[i] = static_cast<float>(k + 1);
      }
    }
    if (cfg.distractor && out.label.data[i] == 0.0f &&
        detail::ellipsoid_r2(c, distractor_centre, distractor_radius, spacing) <= 1.0) {
      value = cfg.body_intensity + cfg.class_intensity_step;
    }
    // Strictly positive inside the body so cropping keeps all of it.
    out.image.data[i] = static_cast<float>(std::max(1.0, value + cfg.noise_sd * rng.normal()));
  });
  return out;
}

// Writes imagesTr/, labelsTr/ and dataset.json under `root`.
inline DatasetDescriptor write_synth_dataset(const SynthConfig& cfg, const fs::path& root) {
  validate(cfg);
  DatasetDescriptor d;
  d.name = cfg.name;
  d.modality[0] = lowercase(cfg.modality);
  d.labels[0] = "background";
  for (std::size_t k = 1; k < cfg.num_classes; ++k) d.labels[static_cast<int>(k)] = "organ" + std::to_string(k);
  for (std::size_t i = 0; i < cfg.num_cases; ++i) {
    const SynthCase c = generate_synth_case(cfg, i);
    TrainingCase tc;
    tc.id = c.id;
    tc.image = root / "imagesTr" / (c.id + ".mvox");
    tc.label = root / "labelsTr" / (c.id + ".mvox");
    write_volume(c.image, tc.image);
    write_volume(c.label, tc.label);
    d.training_cases.push_back(tc);
  }
  d.num_training = d.training_cases.size();
  write_json(root / "dataset.json", descriptor_to_json(d, root));
  return d;
}

}  // namespace segplan

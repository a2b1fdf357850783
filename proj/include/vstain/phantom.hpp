#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vstain/core/seed.hpp"
#include "vstain/dataio.hpp"

namespace vstain::phantom {

// Mean CT intensity of each implant material relative to dense bone, with
// background as zero.
struct MaterialContrastTable {
  double peek = 0.66;
  double mg = 0.98;
  double ti = 1.60;
  // Histology screw colour, identical for all materials.
  std::array<std::uint8_t, 3> screw_rgb{18, 16, 22};

  double relative(Material m) const;
};

// Geometry and appearance of one bone-implant section. Lengths in pixels.
// The screw is a threaded cylinder whose axis runs along y through
// (center_x, center_y) at depth z = 0; `slice_z` selects the section.
struct PhantomSpec {
  int width = 128;
  int height = 128;
  int patch_size = 64;  // canvas must be at least twice this
  Material material = Material::Mg;

  double bone_radius = 52.0;
  double boundary_roughness = 0.06;  // relative radial perturbation of the disc rim
  double screw_center_x = -1.0;  // negative: canvas centre
  double screw_center_y = -1.0;
  double screw_radius = 12.0;
  double screw_half_length = 30.0;
  double thread_period = 7.0;
  double thread_depth = 3.0;
  double degradation_thickness = 3.0;  // Mg only
  double woven_width = 5.0;
  double woven_ct_factor = 0.72;  // woven-bone CT intensity relative to dense bone
  double pore_density = 1.2;      // pores per kilopixel of bone
  double pore_radius = 1.6;
  double soft_tissue_fraction = 0.12;
  double density_contrast = 0.12;  // amplitude of the shared low-frequency density field

  bool cracks = false;
  bool striations = false;

  double ct_noise = 700.0;   // Gaussian sigma, 16-bit units
  double histology_noise = 4.0;  // per-channel jitter sigma, 8-bit units

  double slice_z = 0.0;
  double pixel_size_um = 5.0;
  std::uint64_t seed = 1;

  MaterialContrastTable contrast;
};

// Defaults for a material (no degradation layer unless Mg).
inline PhantomSpec default_spec(Material m, std::uint64_t seed = 1) {
  PhantomSpec s;
  s.material = m;
  s.seed = seed;
  if (m != Material::Mg) s.degradation_thickness = 0.0;
  return s;
}

// Raw (pre-normalisation) CT levels.
inline constexpr double kRawCtBackground = 9000.0;
inline constexpr double kRawCtBone = 36000.0;

// Throws InputError when the parameters break their invariants or the geometry
// does not fit the canvas.
void validate(const PhantomSpec& spec);

ImagePair generate_phantom_pair(const PhantomSpec& spec);

// CT slices at z = z0, z0 + 1, ... of the same 3D phantom (histology is not
// produced for stacks).
std::vector<CtSlice> generate_ct_stack(const PhantomSpec& spec, int depth, double z0);

// Counts per material (Mg, Ti, PEEK) by largest remainder. Ties go to the
// earlier material in that order.
std::array<int, 3> material_counts(int n, const std::array<double, 3>& ratio);

// n pairs with per-pair geometry drawn around `base`; material order is a
// seeded shuffle of the ratio-rounded counts. Ids are "pair_000", ...
std::vector<ImagePair> generate_phantom_dataset(int n, const std::array<double, 3>& ratio, std::uint64_t seed,
                                                const PhantomSpec& base = {});

// Pixel classes of a section, exposed for tests.
enum class Region : std::uint8_t { background, bone, soft_tissue, pore, woven, degradation, screw };
struct Section {
  int width = 0;
  int height = 0;
  std::vector<Region> labels;
  std::vector<float> density;  // shared low-frequency field, ~1
  Region at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};
Section build_section(const PhantomSpec& spec);

}  // namespace vstain::phantom

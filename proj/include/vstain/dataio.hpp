#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vstain/core/tensor.hpp"
#include "vstain/image.hpp"

namespace vstain {

enum class Material { Mg, Ti, PEEK };
std::string to_string(Material m);
Material parse_material(const std::string& name);
inline constexpr Material kMaterials[3] = {Material::Mg, Material::Ti, Material::PEEK};

struct CtSlice {
  Gray16 pixels;
  double pixel_size_um = 1.0;
};

struct HistologySlide {
  Image8 rgb;  // 3 channels
  double pixel_size_um = 1.0;
};

// Binary raster (0/1 in memory, 0/255 on disk).
struct CorrespondenceMask {
  Image8 raster;
  std::string provenance;

  bool at(int x, int y) const { return raster.at(x, y) != 0; }
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
};

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

enum class RoiLabel { bone, background };

struct RoiSample {
  RoiLabel label = RoiLabel::bone;
  std::vector<Point> pixels;
};

// Bone and background regions used by both modalities (pairs are
// co-registered, so one set serves CT and histology).
struct PairRois {
  RoiSample bone{RoiLabel::bone, {}};
  RoiSample background{RoiLabel::background, {}};
};

struct ImagePair {
  std::string id;
  Material material = Material::Mg;
  CtSlice ct;
  HistologySlide histology;
  CorrespondenceMask mask;
  PairRois rois;
  std::uint64_t seed = 0;
};

// Throws InputError unless the three rasters share dimensions.
void check_aligned(const ImagePair& pair);
// Throws InputError if the ROI is empty or leaves the raster.
void check_roi(const RoiSample& roi, int width, int height);

// ROI label raster: 0 = none, 1 = bone, 2 = background.
Image8 rois_to_labels(const PairRois& rois, int width, int height);
PairRois labels_to_rois(const Image8& labels);

struct CtAffine {
  double slope = 1.0;
  double intercept = 0.0;
};

inline constexpr double kCtBoneTarget = 30000.0;
inline constexpr double kCtBackgroundTarget = 10000.0;

// Affine map taking the bone ROI mean to 30000 and the background ROI mean to
// 10000. DegenerateError when the two means coincide.
CtAffine fit_ct_normalization(const CtSlice& slice, const RoiSample& bone, const RoiSample& background);
CtSlice apply_ct_affine(const CtSlice& slice, const CtAffine& map);
CtSlice normalize_ct(const CtSlice& slice, const RoiSample& bone, const RoiSample& background);

struct HistologyNormalization {
  double gain[3] = {1.0, 1.0, 1.0};  // white balance
  double f_min = 0.0;
  double f_max = 255.0;
};

inline constexpr double kStretchFloor = 10.0;
inline constexpr double kStretchCeiling = 255.0;

// White balance on the background ROI means, then one shared linear stretch
// of [f_min, f_max] onto [0, 255]:
//   f_min = max(min_c p1(bone_c) - c, 10), f_max = min(max_c p99(bg_c) + c', 255)
// with percentiles taken after white balance. DegenerateError if f_min >= f_max.
HistologyNormalization fit_histology_normalization(const HistologySlide& img, const RoiSample& bone,
                                                   const RoiSample& background, double c = 5.0,
                                                   double c_prime = 5.0);
HistologySlide apply_histology_normalization(const HistologySlide& img, const HistologyNormalization& map);
HistologySlide normalize_histology(const HistologySlide& img, const RoiSample& bone, const RoiSample& background,
                                   double c = 5.0, double c_prime = 5.0);

// Linear-interpolated percentile (q in [0, 100]) of a non-empty sample.
double percentile(std::vector<double> values, double q);

// Model range: 8-bit v -> 2v/255 - 1, 16-bit v -> 2v/65535 - 1. Grey input
// is replicated to three channels. Output shape [1, 3, H, W].
Tensor<float> to_model_range(const Image8& image);
Tensor<float> to_model_range(const Gray16& image);
// Sample n of a [N, 3, H, W] batch back to 8-bit RGB (rounded, clipped).
Image8 from_model_range_rgb(const Tensor<float>& t, int n = 0);
// Channel mean of sample n back to 16-bit grey.
Gray16 from_model_range_gray16(const Tensor<float>& t, int n = 0);
// Mask as a [1, 1, H, W] tensor of 0/1.
Tensor<float> mask_tensor(const CorrespondenceMask& mask);
// Intensity inversion 65535 - v.
Gray16 invert_ct(const Gray16& image);
// Grey CT shown as RGB by 16 -> 8 bit scaling (round(v / 257)).
Image8 ct_as_rgb8(const Gray16& image);

// On-disk dataset: a JSON manifest listing pairs (ids, material, file
// names relative to the manifest, split) next to per-pair files
//   <id>_ct.png (16-bit), <id>_histology.png, <id>_mask.png (0/255),
//   <id>_roi.png (ROI labels), <id>.json (sidecar: material, seed, pixel size).
struct ManifestEntry {
  std::string id;
  Material material = Material::Mg;
  std::string ct;
  std::string histology;
  std::string mask;
  std::string roi;
  std::string sidecar;
  std::string split;  // empty when unassigned
};

struct Manifest {
  std::filesystem::path root;  // directory containing the manifest
  std::vector<ManifestEntry> entries;
};

ManifestEntry write_pair(const std::filesystem::path& dir, const ImagePair& pair);
ImagePair read_pair(const Manifest& manifest, const ManifestEntry& entry);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
std::vector<ImagePair> read_dataset(const std::filesystem::path& manifest_path);

}  // namespace vstain

#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "vstain/dataio.hpp"
#include "vstain/nets.hpp"

namespace vstain::infer {

struct TileOrigin {
  int x = 0;
  int y = 0;
};

// Square tiles of side `patch` stepped by `step`; the last row and column
// are pulled flush to the raster edge so every pixel is covered.
struct TilePlan {
  int patch = 256;
  int step = 64;
  int width = 0;
  int height = 0;
  std::vector<TileOrigin> origins;
};

// InferenceError on a raster smaller than the patch or a step outside
// [1, patch].
TilePlan plan_tiles(int width, int height, int patch = 256, int step = 64);
// Origins along one axis of length n.
std::vector<int> axis_origins(int n, int patch, int step);
// Number of tiles covering each pixel, row-major.
std::vector<int> coverage_counts(const TilePlan& plan);

// Maps a [N,3,P,P] model-range batch to a [N,3,P,P] batch.
using Translator = std::function<Tensor<float>(const Tensor<float>&)>;
Translator translator(const nets::Generator<float>& g);

// Tiles of a [1,3,H,W] model-range image translated `batch` at a time and
// averaged uniformly where they overlap.
Tensor<float> infer_tensor(const Translator& t, const Tensor<float>& image, const TilePlan& plan, int batch = 4);

// CT slice -> generated RGB histology. `invert` flips CT intensities first.
HistologySlide infer_wsi(const Translator& t, const CtSlice& ct, const TilePlan& plan, bool invert = false,
                         int batch = 4);

// Pixels outside the mask take the background colour.
HistologySlide mask_output(const HistologySlide& wsi, const CorrespondenceMask& mask,
                           const std::array<std::uint8_t, 3>& background);
// Mean colour of a histology slide over ROI coordinates, rounded.
std::array<std::uint8_t, 3> mean_colour(const HistologySlide& slide, const RoiSample& roi);

struct StainedVolume {
  std::vector<Image8> rgb;  // slice order, 3 channels each
  double voxel_size_um = 1.0;
  int depth() const { return static_cast<int>(rgb.size()); }
};

// round((R + G + B) / 3) per pixel.
Image8 rgba_of(const Image8& rgb);

// Isotropic 3D Gaussian of a CT stack, values kept unrounded, as [D,1,H,W].
// Kernel radius ceil(truncate * sigma).
Tensor<float> gaussian_prefilter(const std::vector<CtSlice>& stack, double sigma = 1.0, double truncate = 4.0);

// Pre-filters the stack in 3D and translates every filtered slice on its own.
StainedVolume infer_volume(const Translator& t, const std::vector<CtSlice>& stack, int patch, int step,
                           bool invert = false, double sigma = 1.0, double truncate = 4.0, int batch = 4);

// slice_NNNN.png RGBA sequence plus volume.json with depth and voxel size.
void export_rgba_volume(const StainedVolume& vol, const std::filesystem::path& dir);
struct RgbaVolume {
  std::vector<Image8> rgba;
  double voxel_size_um = 1.0;
};
RgbaVolume read_rgba_volume(const std::filesystem::path& dir);

// Slices of a multi-page TIFF or of a directory of PNG/TIFF slices (sorted
// by file name).
std::vector<CtSlice> read_ct_stack(const std::filesystem::path& path, double pixel_size_um = 1.0);

}  // namespace vstain::infer

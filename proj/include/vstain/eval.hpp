#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vstain/dataio.hpp"
#include "vstain/infer.hpp"

namespace vstain::eval {

struct PatchWindow {
  int x = 0;
  int y = 0;
  int size = 0;
  double coverage = 0.0;  // mask-true fraction
};

// Non-overlapping grid of size x size windows anchored at the origin; a
// window is kept iff at least half of its pixels are mask-true.
std::vector<PatchWindow> sample_eval_patches(const CorrespondenceMask& mask, int patch = 256);
// All grid windows, kept or not.
std::vector<PatchWindow> grid_windows(int width, int height, int patch);

// Crop of an 8-bit raster.
Image8 crop(const Image8& img, const PatchWindow& w);

// Mean SSIM over the interior of 7x7 uniform windows with sample
// covariance, K1 = 0.01, K2 = 0.03 and data range L; multichannel images
// average their per-channel values. Images must be at least 7x7.
double ssim(const Image8& x, const Image8& y, double data_range = 255.0, int window = 7);
double ssim_plane(const double* x, const double* y, int width, int height, double data_range, int window = 7);

double mse(const Image8& x, const Image8& y);
// 10 log10(L^2 / MSE); +inf for identical images.
double psnr(const Image8& x, const Image8& y, double data_range = 255.0);
double psnr_from_mse(double mse, double data_range = 255.0);

// SqueezeNet-backed LPIPS. Weights come from a tensor archive holding the
// backbone ("features.<i>.<squeeze|expand1x1|expand3x3>.<weight|bias>" and
// "features.0.<weight|bias>") and the per-layer linear heads
// ("lin<k>.weight", k = 0..6).
class Lpips {
 public:
  // Missing file: nullopt, so callers report the metric as unavailable.
  static std::optional<Lpips> load(const std::filesystem::path& weights);
  // Seeded random weights of the right shapes, for exercising the metric.
  static Lpips synthetic(std::uint64_t seed);
  static std::vector<std::pair<std::string, Shape>> weight_layout();

  // Inputs are 8-bit RGB of equal size; result >= 0.
  double distance(const Image8& x, const Image8& y) const;

  Lpips(Lpips&&) noexcept;
  Lpips& operator=(Lpips&&) noexcept;
  ~Lpips();

 private:
  struct Net;
  explicit Lpips(std::unique_ptr<Net> net);
  std::unique_ptr<Net> net_;
};

struct PatchMetrics {
  std::string pair_id;
  int x = 0;
  int y = 0;
  double ssim = 0.0;
  double psnr = 0.0;  // +inf for identical patches
  double mse = 0.0;
  double lpips = std::numeric_limits<double>::quiet_NaN();  // NaN when unavailable
};

struct PairSummary {
  std::string pair_id;
  int patches = 0;
  int excluded = 0;
  double ssim = 0.0;
  double psnr = 0.0;  // median over finite values
  int psnr_infinite = 0;
  double mse = 0.0;
  double lpips = std::numeric_limits<double>::quiet_NaN();
};

struct MetricReport {
  std::string split;
  std::string variant;
  bool lpips_available = false;
  std::vector<PatchMetrics> patches;
  std::vector<std::pair<std::string, int>> excluded;  // per pair id

  int excluded_total() const;
  std::vector<PairSummary> summaries() const;
  // Medians over all stored patches.
  PairSummary overall() const;
};

// NaN-free median; NaN for an empty input.
double median(std::vector<double> v);
// Median over finite values, counting the infinite ones.
double finite_median(const std::vector<double>& v, int* infinite = nullptr);

// Scores the retained patches of one aligned (real, generated) pair.
void score_pair(MetricReport& report, const std::string& pair_id, const Image8& real, const Image8& generated,
                const CorrespondenceMask& mask, int patch, const Lpips* lpips);

// CT shown as RGB against real histology under the same patch protocol,
// without generation and without background masking.
MetricReport baseline_cross_modality(const std::vector<ImagePair>& pairs, const std::string& split, int patch,
                                     const Lpips* lpips);

struct EvalProtocol {
  int patch = 256;     // evaluation window
  int tile = 256;      // inference tile
  int step = 64;       // inference step
  bool invert_ct = false;
  bool mask_outputs = true;
};

// Histology background colour: mean over the background ROI, else over
// mask-false pixels, else white.
std::array<std::uint8_t, 3> background_colour(const ImagePair& pair);

// Generated WSI of one pair: tiled inference and background masking with
// the real histology's background colour.
HistologySlide generate(const infer::Translator& t, const ImagePair& pair, const EvalProtocol& protocol);

MetricReport evaluate_model(const infer::Translator& t, const std::vector<ImagePair>& pairs, const std::string& split,
                            const std::string& variant, const EvalProtocol& protocol, const Lpips* lpips);

// CSV outputs: one row per patch, one summary row per pair, and a long
// format with one (split, variant, pair, metric, value) row per value.
void write_patch_csv(const MetricReport& r, const std::filesystem::path& path);
void write_summary_csv(const MetricReport& r, const std::filesystem::path& path);
void write_long_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path);

// --- Fourier ring correlation ---------------------------------------------

struct FrcCurve {
  std::vector<double> frequency;    // cycles per pixel of the half image
  std::vector<double> correlation;  // one value per ring, DC excluded
};

// Rings of the correlation between two equal square images.
FrcCurve frc_curve(const std::vector<double>& a, const std::vector<double>& b, int n);

// Splits an n x n image (n even) into the (even, even) and (odd, odd)
// sub-lattices and returns the resolution in original pixels at the first
// ring where the correlation drops below `threshold`; nullopt when the
// image has no resolvable signal or never drops below within Nyquist.
std::optional<double> frc_resolution(const std::vector<double>& image, int n, double threshold = 1.0 / 7.0);

struct FrcPatch {
  std::string pair_id;
  std::string source;  // "generated", "histology" or "ct"
  int x = 0;
  int y = 0;
  std::optional<double> resolution_px;
};

struct FrcPairFraction {
  std::string pair_id;
  double generated = 0.0;
  double histology = 0.0;
  double ct = 0.0;
  double vs_histology = 0.0;  // generated / histology
  double vs_ct = 0.0;         // generated / ct
};

struct FrcResult {
  double threshold = 1.0 / 7.0;
  std::vector<FrcPatch> patches;
  int unresolved = 0;
  std::vector<FrcPairFraction> pairs;
};

// Luminance of an 8-bit raster as doubles, row-major.
std::vector<double> luminance(const Image8& img);

// FRC of generated, real-histology and CT patches retained by the mask.
void frc_pair(FrcResult& result, const std::string& pair_id, const Image8& generated, const Image8& histology,
              const Gray16& ct, const CorrespondenceMask& mask, int patch);
void write_frc_csv(const FrcResult& r, const std::filesystem::path& patches_path,
                   const std::filesystem::path& pairs_path);

}  // namespace vstain::eval

#include "vstain/infer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vstain/core/kernels.hpp"
#include "vstain/errors.hpp"
#include "vstain/image.hpp"
#include "vstain/masking.hpp"

namespace vstain::infer {

std::vector<int> axis_origins(int n, int patch, int step) {
  std::vector<int> out;
  for (int o = 0; o + patch <= n; o += step) out.push_back(o);
  if (out.empty() || out.back() + patch < n) out.push_back(n - patch);
  return out;
}

TilePlan plan_tiles(int width, int height, int patch, int step) {
  if (patch < 1) throw InferenceError("tile size must be positive");
  if (step < 1 || step > patch) {
    throw InferenceError("tile step " + std::to_string(step) + " must lie in [1, " + std::to_string(patch) + "]");
  }
  if (width < patch || height < patch) {
    throw InferenceError("raster " + std::to_string(width) + "x" + std::to_string(height) + " is smaller than the " +
                         std::to_string(patch) + " pixel tile");
  }
  TilePlan plan;
  plan.patch = patch;
  plan.step = step;
  plan.width = width;
  plan.height = height;
  for (int y : axis_origins(height, patch, step)) {
    for (int x : axis_origins(width, patch, step)) plan.origins.push_back({x, y});
  }
  return plan;
}

std::vector<int> coverage_counts(const TilePlan& plan) {
  std::vector<int> count(static_cast<std::size_t>(plan.width) * plan.height, 0);
  for (const auto& o : plan.origins) {
    for (int y = o.y; y < o.y + plan.patch; ++y) {
      int* row = count.data() + static_cast<std::size_t>(y) * plan.width;
      for (int x = o.x; x < o.x + plan.patch; ++x) ++row[x];
    }
  }
  return count;
}

Translator translator(const nets::Generator<float>& g) {
  return [&g](const Tensor<float>& batch) { return g.translate(batch); };
}

Tensor<float> infer_tensor(const Translator& t, const Tensor<float>& image, const TilePlan& plan, int batch) {
  if (image.n() != 1 || image.w() != plan.width || image.h() != plan.height) {
    throw InferenceError("image " + image.shape().str() + " does not match the tile plan");
  }
  const int C = image.c(), P = plan.patch, W = plan.width, H = plan.height;
  batch = std::max(1, batch);
  std::vector<double> sum(static_cast<std::size_t>(C) * H * W, 0.0);
  int out_c = -1;
  for (std::size_t b = 0; b < plan.origins.size(); b += static_cast<std::size_t>(batch)) {
    const int n = static_cast<int>(std::min(plan.origins.size() - b, static_cast<std::size_t>(batch)));
    Tensor<float> tiles(Shape{n, C, P, P});
    for (int i = 0; i < n; ++i) {
      const auto& o = plan.origins[b + static_cast<std::size_t>(i)];
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < P; ++y) {
          std::copy_n(image.plane(0, c) + static_cast<std::size_t>(o.y + y) * W + o.x, P,
                      tiles.plane(i, c) + static_cast<std::size_t>(y) * P);
        }
      }
    }
    const Tensor<float> pred = t(tiles);
    if (pred.n() != n || pred.h() != P || pred.w() != P) {
      throw InferenceError("translator changed the tile shape to " + pred.shape().str());
    }
    if (out_c < 0) {
      out_c = pred.c();
      sum.assign(static_cast<std::size_t>(out_c) * H * W, 0.0);
    }
    for (int i = 0; i < n; ++i) {
      const auto& o = plan.origins[b + static_cast<std::size_t>(i)];
      for (int c = 0; c < out_c; ++c) {
        const float* src = pred.plane(i, c);
        double* dst = sum.data() + static_cast<std::size_t>(c) * H * W;
        for (int y = 0; y < P; ++y) {
          double* row = dst + static_cast<std::size_t>(o.y + y) * W + o.x;
          const float* s = src + static_cast<std::size_t>(y) * P;
          for (int x = 0; x < P; ++x) row[x] += s[x];
        }
      }
    }
  }
  const auto count = coverage_counts(plan);
  Tensor<float> out(Shape{1, out_c, H, W});
  for (int c = 0; c < out_c; ++c) {
    float* dst = out.plane(0, c);
    const double* s = sum.data() + static_cast<std::size_t>(c) * H * W;
    for (std::size_t i = 0; i < count.size(); ++i) dst[i] = static_cast<float>(s[i] / count[i]);
  }
  return out;
}

namespace {

// Raw CT values (0..65535, possibly fractional) to a [1,3,H,W] model-range
// tensor, matching to_model_range for integer input.
Tensor<float> ct_to_model(const float* values, int w, int h, bool invert) {
  Tensor<float> t(Shape{1, 3, h, w});
  const std::size_t n = static_cast<std::size_t>(w) * h;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = invert ? 65535.0 - values[i] : values[i];
    const float m = static_cast<float>(v / 32767.5 - 1.0);
    for (int c = 0; c < 3; ++c) t.plane(0, c)[i] = m;
  }
  return t;
}

}  // namespace

HistologySlide infer_wsi(const Translator& t, const CtSlice& ct, const TilePlan& plan, bool invert, int batch) {
  const int w = ct.pixels.width(), h = ct.pixels.height();
  std::vector<float> raw(ct.pixels.values().begin(), ct.pixels.values().end());
  const Tensor<float> out = infer_tensor(t, ct_to_model(raw.data(), w, h, invert), plan, batch);
  if (out.c() != 3) throw InferenceError("generator must emit three channels");
  HistologySlide slide;
  slide.rgb = from_model_range_rgb(out);
  slide.pixel_size_um = ct.pixel_size_um;
  return slide;
}

HistologySlide mask_output(const HistologySlide& wsi, const CorrespondenceMask& mask,
                           const std::array<std::uint8_t, 3>& background) {
  HistologySlide out = wsi;
  out.rgb = masking::apply_mask(wsi.rgb, mask, std::vector<std::uint8_t>(background.begin(), background.end()));
  return out;
}

std::array<std::uint8_t, 3> mean_colour(const HistologySlide& slide, const RoiSample& roi) {
  if (roi.pixels.empty()) throw InputError("mean colour over an empty ROI");
  std::array<double, 3> s{};
  for (const auto& p : roi.pixels) {
    for (int c = 0; c < 3; ++c) s[static_cast<std::size_t>(c)] += slide.rgb.at(p.x, p.y, c);
  }
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    out[static_cast<std::size_t>(c)] =
        static_cast<std::uint8_t>(std::lround(s[static_cast<std::size_t>(c)] / static_cast<double>(roi.pixels.size())));
  }
  return out;
}

Image8 rgba_of(const Image8& rgb) {
  if (rgb.channels() != 3) throw InputError("RGBA conversion needs an RGB image");
  Image8 out(rgb.width(), rgb.height(), 4);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const int r = rgb.at(x, y, 0), g = rgb.at(x, y, 1), b = rgb.at(x, y, 2);
      out.at(x, y, 0) = static_cast<std::uint8_t>(r);
      out.at(x, y, 1) = static_cast<std::uint8_t>(g);
      out.at(x, y, 2) = static_cast<std::uint8_t>(b);
      // Integer round-half-up of the mean; the sum is never negative.
      out.at(x, y, 3) = static_cast<std::uint8_t>((2 * (r + g + b) + 3) / 6);
    }
  }
  return out;
}

Tensor<float> gaussian_prefilter(const std::vector<CtSlice>& stack, double sigma, double truncate) {
  if (stack.empty()) throw InferenceError("volume inference needs at least one slice");
  const int w = stack[0].pixels.width(), h = stack[0].pixels.height();
  Tensor<float> vol(Shape{static_cast<int>(stack.size()), 1, h, w});
  for (std::size_t z = 0; z < stack.size(); ++z) {
    const auto& s = stack[z].pixels;
    if (s.width() != w || s.height() != h) throw InferenceError("slice " + std::to_string(z) + " differs in size");
    std::copy(s.values().begin(), s.values().end(), vol.plane(static_cast<int>(z), 0));
  }
  Tensor<float> out;
  kernels::gaussian_filter3d(vol, sigma, truncate, out);
  return out;
}

StainedVolume infer_volume(const Translator& t, const std::vector<CtSlice>& stack, int patch, int step, bool invert,
                           double sigma, double truncate, int batch) {
  const Tensor<float> filtered = gaussian_prefilter(stack, sigma, truncate);
  const int w = filtered.w(), h = filtered.h();
  const TilePlan plan = plan_tiles(w, h, patch, step);
  StainedVolume vol;
  vol.voxel_size_um = stack[0].pixel_size_um;
  for (int z = 0; z < filtered.n(); ++z) {
    const Tensor<float> out = infer_tensor(t, ct_to_model(filtered.plane(z, 0), w, h, invert), plan, batch);
    vol.rgb.push_back(from_model_range_rgb(out));
  }
  return vol;
}

void export_rgba_volume(const StainedVolume& vol, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json files = nlohmann::json::array();
  char name[32];
  for (int z = 0; z < vol.depth(); ++z) {
    std::snprintf(name, sizeof name, "slice_%04d.png", z);
    write_png(dir / name, rgba_of(vol.rgb[static_cast<std::size_t>(z)]));
    files.push_back(name);
  }
  const nlohmann::json manifest = {{"slices", vol.depth()},
                                   {"width", vol.depth() ? vol.rgb[0].width() : 0},
                                   {"height", vol.depth() ? vol.rgb[0].height() : 0},
                                   {"voxel_size_um", vol.voxel_size_um},
                                   {"channels", "RGBA"},
                                   {"files", files}};
  std::ofstream os(dir / "volume.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "volume.json").string());
  os << manifest.dump(2) << "\n";
}

RgbaVolume read_rgba_volume(const std::filesystem::path& dir) {
  std::ifstream is(dir / "volume.json");
  if (!is) throw IoError("cannot open " + (dir / "volume.json").string());
  RgbaVolume out;
  try {
    const auto m = nlohmann::json::parse(is);
    out.voxel_size_um = m.at("voxel_size_um").get<double>();
    for (const auto& f : m.at("files")) out.rgba.push_back(read_png8(dir / f.get<std::string>()));
    if (static_cast<int>(out.rgba.size()) != m.at("slices").get<int>()) throw IoError("slice count mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "volume.json").string() + ": " + e.what());
  }
  return out;
}

std::vector<CtSlice> read_ct_stack(const std::filesystem::path& path, double pixel_size_um) {
  std::vector<CtSlice> out;
  auto add = [&](Gray16 g) {
    CtSlice s;
    s.pixels = std::move(g);
    s.pixel_size_um = pixel_size_um;
    out.push_back(std::move(s));
  };
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      const auto ext = e.path().extension().string();
      if (ext == ".png" || ext == ".tif" || ext == ".tiff") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add(read_gray16(f));
  } else {
    const auto ext = path.extension().string();
    if (ext == ".tif" || ext == ".tiff") {
      for (auto& page : read_tiff16(path)) add(std::move(page));
    } else {
      add(read_gray16(path));
    }
  }
  if (out.empty()) throw InputError("no CT slices found at " + path.string());
  return out;
}

}  // namespace vstain::infer

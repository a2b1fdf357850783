#include "vstain/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace vstain {

using nlohmann::json;

std::string to_string(Material m) {
  switch (m) {
    case Material::Mg: return "Mg";
    case Material::Ti: return "Ti";
    case Material::PEEK: return "PEEK";
  }
  return "Mg";
}

Material parse_material(const std::string& name) {
  if (name == "Mg" || name == "mg") return Material::Mg;
  if (name == "Ti" || name == "ti") return Material::Ti;
  if (name == "PEEK" || name == "peek") return Material::PEEK;
  throw InputError("unknown implant material '" + name + "'");
}

std::int64_t CorrespondenceMask::count() const {
  return std::count_if(raster.values().begin(), raster.values().end(), [](std::uint8_t v) { return v != 0; });
}

void check_aligned(const ImagePair& pair) {
  const int w = pair.ct.pixels.width(), h = pair.ct.pixels.height();
  if (!pair.histology.rgb.same_size(w, h) || !pair.mask.raster.same_size(w, h)) {
    throw InputError("pair '" + pair.id + "': CT, histology and mask dimensions differ");
  }
  if (pair.histology.rgb.channels() != 3) throw InputError("pair '" + pair.id + "': histology must be RGB");
}

void check_roi(const RoiSample& roi, int width, int height) {
  if (roi.pixels.empty()) throw InputError("empty ROI");
  for (const auto& p : roi.pixels) {
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) throw InputError("ROI pixel outside the image");
  }
}

Image8 rois_to_labels(const PairRois& rois, int width, int height) {
  Image8 labels(width, height, 1);
  for (const auto& p : rois.bone.pixels) labels.at(p.x, p.y) = 1;
  for (const auto& p : rois.background.pixels) labels.at(p.x, p.y) = 2;
  return labels;
}

PairRois labels_to_rois(const Image8& labels) {
  PairRois rois;
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const auto v = labels.at(x, y);
      if (v == 1) rois.bone.pixels.push_back({x, y});
      if (v == 2) rois.background.pixels.push_back({x, y});
    }
  }
  return rois;
}

namespace {

template <typename Img>
double roi_mean(const Img& img, const RoiSample& roi, int channel) {
  double s = 0.0;
  for (const auto& p : roi.pixels) s += img.at(p.x, p.y, channel);
  return s / static_cast<double>(roi.pixels.size());
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }
std::uint16_t to_u16(double v) { return static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L)); }

}  // namespace

CtAffine fit_ct_normalization(const CtSlice& slice, const RoiSample& bone, const RoiSample& background) {
  const int w = slice.pixels.width(), h = slice.pixels.height();
  check_roi(bone, w, h);
  check_roi(background, w, h);
  const double mb = roi_mean(slice.pixels, bone, 0);
  const double mg = roi_mean(slice.pixels, background, 0);
  if (mb == mg) throw DegenerateError("CT bone and background ROI means are equal");
  CtAffine map;
  map.slope = (kCtBoneTarget - kCtBackgroundTarget) / (mb - mg);
  map.intercept = kCtBoneTarget - map.slope * mb;
  return map;
}

CtSlice apply_ct_affine(const CtSlice& slice, const CtAffine& map) {
  CtSlice out = slice;
  for (auto& v : out.pixels.values()) v = to_u16(map.slope * v + map.intercept);
  return out;
}

CtSlice normalize_ct(const CtSlice& slice, const RoiSample& bone, const RoiSample& background) {
  return apply_ct_affine(slice, fit_ct_normalization(slice, bone, background));
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

HistologyNormalization fit_histology_normalization(const HistologySlide& img, const RoiSample& bone,
                                                   const RoiSample& background, double c, double c_prime) {
  const int w = img.rgb.width(), h = img.rgb.height();
  if (img.rgb.channels() != 3) throw InputError("histology must be RGB");
  check_roi(bone, w, h);
  check_roi(background, w, h);
  HistologyNormalization map;
  double mu[3];
  for (int ch = 0; ch < 3; ++ch) {
    mu[ch] = roi_mean(img.rgb, background, ch);
    if (mu[ch] <= 0.0) throw DegenerateError("histology background channel mean is zero");
  }
  const double grey = (mu[0] + mu[1] + mu[2]) / 3.0;
  for (int ch = 0; ch < 3; ++ch) map.gain[ch] = grey / mu[ch];

  double lo = 1e300, hi = -1e300;
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<double> b, g;
    b.reserve(bone.pixels.size());
    g.reserve(background.pixels.size());
    for (const auto& p : bone.pixels) b.push_back(map.gain[ch] * img.rgb.at(p.x, p.y, ch));
    for (const auto& p : background.pixels) g.push_back(map.gain[ch] * img.rgb.at(p.x, p.y, ch));
    lo = std::min(lo, percentile(std::move(b), 1.0));
    hi = std::max(hi, percentile(std::move(g), 99.0));
  }
  map.f_min = std::max(lo - c, kStretchFloor);
  map.f_max = std::min(hi + c_prime, kStretchCeiling);
  if (map.f_min >= map.f_max) throw DegenerateError("histology stretch range is empty (f_min >= f_max)");
  return map;
}

HistologySlide apply_histology_normalization(const HistologySlide& img, const HistologyNormalization& map) {
  HistologySlide out = img;
  const double scale = 255.0 / (map.f_max - map.f_min);
  auto& px = out.rgb.values();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double balanced = map.gain[i % 3] * img.rgb.values()[i];
    px[i] = to_u8((balanced - map.f_min) * scale);
  }
  return out;
}

HistologySlide normalize_histology(const HistologySlide& img, const RoiSample& bone, const RoiSample& background,
                                   double c, double c_prime) {
  return apply_histology_normalization(img, fit_histology_normalization(img, bone, background, c, c_prime));
}

Tensor<float> to_model_range(const Image8& image) {
  if (image.channels() != 1 && image.channels() != 3) throw InputError("model input must be grey or RGB");
  const int w = image.width(), h = image.height();
  Tensor<float> t(Shape{1, 3, h, w});
  for (int ch = 0; ch < 3; ++ch) {
    const int src = image.channels() == 1 ? 0 : ch;
    float* p = t.plane(0, ch);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) p[y * w + x] = static_cast<float>(image.at(x, y, src) / 127.5 - 1.0);
    }
  }
  return t;
}

Tensor<float> to_model_range(const Gray16& image) {
  const int w = image.width(), h = image.height();
  Tensor<float> t(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto v = static_cast<float>(image.at(x, y) / 32767.5 - 1.0);
      for (int ch = 0; ch < 3; ++ch) t.at(0, ch, y, x) = v;
    }
  }
  return t;
}

Image8 from_model_range_rgb(const Tensor<float>& t, int n) {
  if (t.c() != 3) throw InputError("expected a 3-channel tensor, got " + t.shape().str());
  Image8 img(t.w(), t.h(), 3);
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < t.h(); ++y) {
      for (int x = 0; x < t.w(); ++x) img.at(x, y, ch) = to_u8((t.at(n, ch, y, x) + 1.0) * 127.5);
    }
  }
  return img;
}

Gray16 from_model_range_gray16(const Tensor<float>& t, int n) {
  Gray16 img(t.w(), t.h(), 1);
  for (int y = 0; y < t.h(); ++y) {
    for (int x = 0; x < t.w(); ++x) {
      double s = 0.0;
      for (int ch = 0; ch < t.c(); ++ch) s += t.at(n, ch, y, x);
      img.at(x, y) = to_u16((s / t.c() + 1.0) * 32767.5);
    }
  }
  return img;
}

Tensor<float> mask_tensor(const CorrespondenceMask& mask) {
  const int w = mask.raster.width(), h = mask.raster.height();
  Tensor<float> t(Shape{1, 1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = mask.at(x, y) ? 1.0f : 0.0f;
  }
  return t;
}

Gray16 invert_ct(const Gray16& image) {
  Gray16 out = image;
  for (auto& v : out.values()) v = static_cast<std::uint16_t>(65535 - v);
  return out;
}

Image8 ct_as_rgb8(const Gray16& image) {
  Image8 out(image.width(), image.height(), 3);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const auto v = to_u8(image.at(x, y) / 257.0);
      for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = v;
    }
  }
  return out;
}

namespace {

Image8 mask_to_disk(const CorrespondenceMask& m) {
  Image8 out = m.raster;
  for (auto& v : out.values()) v = v ? 255 : 0;
  return out;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

ManifestEntry write_pair(const std::filesystem::path& dir, const ImagePair& pair) {
  check_aligned(pair);
  std::filesystem::create_directories(dir);
  ManifestEntry e;
  e.id = pair.id;
  e.material = pair.material;
  e.ct = pair.id + "_ct.png";
  e.histology = pair.id + "_histology.png";
  e.mask = pair.id + "_mask.png";
  e.roi = pair.id + "_roi.png";
  e.sidecar = pair.id + ".json";
  write_png(dir / e.ct, pair.ct.pixels);
  write_png(dir / e.histology, pair.histology.rgb);
  write_png(dir / e.mask, mask_to_disk(pair.mask));
  write_png(dir / e.roi, rois_to_labels(pair.rois, pair.ct.pixels.width(), pair.ct.pixels.height()));
  json meta = {{"id", pair.id},
               {"material", to_string(pair.material)},
               {"seed", pair.seed},
               {"pixel_size_um", pair.ct.pixel_size_um},
               {"mask_provenance", pair.mask.provenance}};
  write_json(dir / e.sidecar, meta);
  return e;
}

ImagePair read_pair(const Manifest& manifest, const ManifestEntry& entry) {
  const auto& root = manifest.root;
  ImagePair pair;
  pair.id = entry.id;
  pair.material = entry.material;
  pair.ct.pixels = read_gray16(root / entry.ct);
  pair.histology.rgb = read_png8(root / entry.histology);
  const int w = pair.ct.pixels.width(), h = pair.ct.pixels.height();
  if (!entry.mask.empty() && std::filesystem::exists(root / entry.mask)) {
    pair.mask.raster = read_png8(root / entry.mask);
    if (pair.mask.raster.channels() != 1) throw IoError("mask '" + entry.mask + "' must be single channel");
    for (auto& v : pair.mask.raster.values()) v = v >= 128 ? 1 : 0;
  } else {
    pair.mask.raster = Image8(w, h, 1, 1);
  }
  if (!entry.roi.empty() && std::filesystem::exists(root / entry.roi)) {
    pair.rois = labels_to_rois(read_png8(root / entry.roi));
  }
  if (!entry.sidecar.empty() && std::filesystem::exists(root / entry.sidecar)) {
    const json meta = read_json(root / entry.sidecar);
    pair.seed = meta.value("seed", std::uint64_t{0});
    pair.ct.pixel_size_um = meta.value("pixel_size_um", 1.0);
    pair.histology.pixel_size_um = pair.ct.pixel_size_um;
    pair.mask.provenance = meta.value("mask_provenance", std::string());
  }
  check_aligned(pair);
  return pair;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  json pairs = json::array();
  for (const auto& e : manifest.entries) {
    json j = {{"id", e.id},     {"material", to_string(e.material)}, {"ct", e.ct}, {"histology", e.histology},
              {"mask", e.mask}, {"roi", e.roi},                     {"sidecar", e.sidecar}};
    if (!e.split.empty()) j["split"] = e.split;
    pairs.push_back(j);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_json(path, json{{"pairs", pairs}});
}

Manifest read_manifest(const std::filesystem::path& path) {
  const json j = read_json(path);
  Manifest m;
  m.root = path.parent_path();
  try {
    for (const auto& p : j.at("pairs")) {
      ManifestEntry e;
      e.id = p.at("id").get<std::string>();
      e.material = parse_material(p.at("material").get<std::string>());
      e.ct = p.at("ct").get<std::string>();
      e.histology = p.at("histology").get<std::string>();
      e.mask = p.value("mask", std::string());
      e.roi = p.value("roi", std::string());
      e.sidecar = p.value("sidecar", std::string());
      e.split = p.value("split", std::string());
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

std::vector<ImagePair> read_dataset(const std::filesystem::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  std::vector<ImagePair> pairs;
  pairs.reserve(m.entries.size());
  for (const auto& e : m.entries) pairs.push_back(read_pair(m, e));
  return pairs;
}

}  // namespace vstain

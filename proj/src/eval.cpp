#include "vstain/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "vstain/errors.hpp"
#include "vstain/masking.hpp"

namespace vstain::eval {

std::vector<PatchWindow> grid_windows(int width, int height, int patch) {
  std::vector<PatchWindow> out;
  if (patch < 1) throw InputError("evaluation patch size must be positive");
  for (int y = 0; y + patch <= height; y += patch) {
    for (int x = 0; x + patch <= width; x += patch) out.push_back({x, y, patch, 0.0});
  }
  return out;
}

std::vector<PatchWindow> sample_eval_patches(const CorrespondenceMask& mask, int patch) {
  std::vector<PatchWindow> kept;
  for (auto w : grid_windows(mask.raster.width(), mask.raster.height(), patch)) {
    std::int64_t on = 0;
    for (int y = w.y; y < w.y + patch; ++y) {
      for (int x = w.x; x < w.x + patch; ++x) on += mask.at(x, y) ? 1 : 0;
    }
    const std::int64_t area = static_cast<std::int64_t>(patch) * patch;
    w.coverage = static_cast<double>(on) / static_cast<double>(area);
    if (2 * on >= area) kept.push_back(w);
  }
  return kept;
}

Image8 crop(const Image8& img, const PatchWindow& w) {
  if (w.x < 0 || w.y < 0 || w.x + w.size > img.width() || w.y + w.size > img.height()) {
    throw InputError("crop window leaves the raster");
  }
  Image8 out(w.size, w.size, img.channels());
  for (int y = 0; y < w.size; ++y) {
    for (int x = 0; x < w.size; ++x) {
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(w.x + x, w.y + y, c);
    }
  }
  return out;
}

namespace {

// Summed-area table with a zero first row and column.
std::vector<double> integral(const std::vector<double>& v, int w, int h) {
  std::vector<double> s(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
  for (int y = 0; y < h; ++y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      row += v[static_cast<std::size_t>(y) * w + x];
      s[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = s[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  return s;
}

double box(const std::vector<double>& s, int w, int x0, int y0, int k) {
  const auto at = [&](int x, int y) { return s[static_cast<std::size_t>(y) * (w + 1) + x]; };
  return at(x0 + k, y0 + k) - at(x0, y0 + k) - at(x0 + k, y0) + at(x0, y0);
}

std::vector<double> channel(const Image8& img, int c) {
  std::vector<double> out(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out[static_cast<std::size_t>(y) * img.width() + x] = img.at(x, y, c);
  }
  return out;
}

void require_same(const Image8& a, const Image8& b) {
  if (!a.same_size(b) || a.channels() != b.channels()) throw InputError("metric inputs differ in size");
}

}  // namespace

double ssim_plane(const double* xp, const double* yp, int w, int h, double L, int win) {
  if (win < 2 || win % 2 == 0) throw InputError("SSIM window must be odd and at least 3");
  if (w < win || h < win) throw InputError("image smaller than the SSIM window");
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> x(xp, xp + n), y(yp, yp + n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto sx = integral(x, w, h), sy = integral(y, w, h);
  const auto sxx = integral(xx, w, h), syy = integral(yy, w, h), sxy = integral(xy, w, h);
  const double np = static_cast<double>(win) * win;
  const double cov_norm = np / (np - 1.0);
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  double total = 0.0;
  // Window centres whose window lies inside the image: the border that a
  // padded filter would produce is cropped away.
  for (int y0 = 0; y0 + win <= h; ++y0) {
    for (int x0 = 0; x0 + win <= w; ++x0) {
      const double ux = box(sx, w, x0, y0, win) / np, uy = box(sy, w, x0, y0, win) / np;
      const double uxx = box(sxx, w, x0, y0, win) / np, uyy = box(syy, w, x0, y0, win) / np;
      const double uxy = box(sxy, w, x0, y0, win) / np;
      const double vx = cov_norm * (uxx - ux * ux), vy = cov_norm * (uyy - uy * uy);
      const double vxy = cov_norm * (uxy - ux * uy);
      const double num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2);
      const double den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
      total += num / den;
    }
  }
  return total / (static_cast<double>(w - win + 1) * (h - win + 1));
}

double ssim(const Image8& x, const Image8& y, double L, int win) {
  require_same(x, y);
  double s = 0.0;
  for (int c = 0; c < x.channels(); ++c) {
    const auto a = channel(x, c), b = channel(y, c);
    s += ssim_plane(a.data(), b.data(), x.width(), x.height(), L, win);
  }
  return s / x.channels();
}

double mse(const Image8& x, const Image8& y) {
  require_same(x, y);
  const auto a = x.values(), b = y.values();
  if (a.empty()) throw InputError("MSE of empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr_from_mse(double m, double L) {
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(L * L / m);
}

double psnr(const Image8& x, const Image8& y, double L) { return psnr_from_mse(mse(x, y), L); }

// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double d) { return std::isnan(d); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double finite_median(const std::vector<double>& v, int* infinite) {
  std::vector<double> f;
  int inf = 0;
  for (double d : v) {
    if (std::isinf(d)) {
      ++inf;
    } else {
      f.push_back(d);
    }
  }
  if (infinite) *infinite = inf;
  if (f.empty() && inf > 0) return std::numeric_limits<double>::infinity();
  return median(std::move(f));
}

int MetricReport::excluded_total() const {
  int n = 0;
  for (const auto& [id, k] : excluded) n += k;
  return n;
}

namespace {

PairSummary summarise(const std::string& id, const std::vector<const PatchMetrics*>& rows, int excluded) {
  PairSummary s;
  s.pair_id = id;
  s.patches = static_cast<int>(rows.size());
  s.excluded = excluded;
  std::vector<double> a, b, c, d;
  for (const auto* r : rows) {
    a.push_back(r->ssim);
    b.push_back(r->psnr);
    c.push_back(r->mse);
    d.push_back(r->lpips);
  }
  s.ssim = median(a);
  s.psnr = finite_median(b, &s.psnr_infinite);
  s.mse = median(c);
  s.lpips = median(d);
  return s;
}

}  // namespace

std::vector<PairSummary> MetricReport::summaries() const {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PatchMetrics*>> rows;
  std::map<std::string, int> ex;
  for (const auto& [id, k] : excluded) {
    if (!rows.count(id)) order.push_back(id);
    rows[id];
    ex[id] += k;
  }
  for (const auto& p : patches) {
    if (!rows.count(p.pair_id)) order.push_back(p.pair_id);
    rows[p.pair_id].push_back(&p);
  }
  std::vector<PairSummary> out;
  for (const auto& id : order) out.push_back(summarise(id, rows[id], ex[id]));
  return out;
}

PairSummary MetricReport::overall() const {
  std::vector<const PatchMetrics*> rows;
  for (const auto& p : patches) rows.push_back(&p);
  return summarise("all", rows, excluded_total());
}

void score_pair(MetricReport& report, const std::string& pair_id, const Image8& real, const Image8& generated,
                const CorrespondenceMask& mask, int patch, const Lpips* lpips) {
  require_same(real, generated);
  const auto kept = sample_eval_patches(mask, patch);
  const auto all = grid_windows(real.width(), real.height(), patch);
  report.excluded.emplace_back(pair_id, static_cast<int>(all.size() - kept.size()));
  for (const auto& w : kept) {
    const Image8 a = crop(real, w), b = crop(generated, w);
    PatchMetrics m;
    m.pair_id = pair_id;
    m.x = w.x;
    m.y = w.y;
    m.ssim = ssim(a, b);
    m.mse = mse(a, b);
    m.psnr = psnr_from_mse(m.mse);
    if (lpips) m.lpips = lpips->distance(a, b);
    report.patches.push_back(m);
  }
}

std::array<std::uint8_t, 3> background_colour(const ImagePair& pair) {
  if (!pair.rois.background.pixels.empty()) return infer::mean_colour(pair.histology, pair.rois.background);
  std::array<double, 3> s{};
  std::int64_t n = 0;
  const auto& img = pair.histology.rgb;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (pair.mask.at(x, y)) continue;
      for (int c = 0; c < 3; ++c) s[static_cast<std::size_t>(c)] += img.at(x, y, c);
      ++n;
    }
  }
  if (n == 0) return {255, 255, 255};
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    out[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(s[static_cast<std::size_t>(c)] / n));
  }
  return out;
}

MetricReport baseline_cross_modality(const std::vector<ImagePair>& pairs, const std::string& split, int patch,
                                     const Lpips* lpips) {
  MetricReport r;
  r.split = split;
  r.variant = "baseline";
  r.lpips_available = lpips != nullptr;
  for (const auto& p : pairs) {
    score_pair(r, p.id, p.histology.rgb, ct_as_rgb8(p.ct.pixels), p.mask, patch, lpips);
  }
  return r;
}

HistologySlide generate(const infer::Translator& t, const ImagePair& pair, const EvalProtocol& protocol) {
  const auto plan = infer::plan_tiles(pair.ct.pixels.width(), pair.ct.pixels.height(), protocol.tile, protocol.step);
  HistologySlide out = infer::infer_wsi(t, pair.ct, plan, protocol.invert_ct);
  if (protocol.mask_outputs) out = infer::mask_output(out, pair.mask, background_colour(pair));
  return out;
}

MetricReport evaluate_model(const infer::Translator& t, const std::vector<ImagePair>& pairs, const std::string& split,
                            const std::string& variant, const EvalProtocol& protocol, const Lpips* lpips) {
  MetricReport r;
  r.split = split;
  r.variant = variant;
  r.lpips_available = lpips != nullptr;
  for (const auto& p : pairs) {
    const HistologySlide gen = generate(t, p, protocol);
    score_pair(r, p.id, p.histology.rgb, gen.rgb, p.mask, protocol.patch, lpips);
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

}  // namespace

void write_patch_csv(const MetricReport& r, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "split,variant,pair_id,x,y,ssim,psnr,mse,lpips\n";
  for (const auto& p : r.patches) {
    os << r.split << ',' << r.variant << ',' << p.pair_id << ',' << p.x << ',' << p.y << ',' << num(p.ssim) << ','
       << num(p.psnr) << ',' << num(p.mse) << ',' << num(p.lpips) << '\n';
  }
}

void write_summary_csv(const MetricReport& r, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "split,variant,pair_id,patches,excluded,ssim_median,psnr_median,psnr_inf,mse_median,lpips_median\n";
  auto row = [&](const PairSummary& s) {
    os << r.split << ',' << r.variant << ',' << s.pair_id << ',' << s.patches << ',' << s.excluded << ','
       << num(s.ssim) << ',' << num(s.psnr) << ',' << s.psnr_infinite << ',' << num(s.mse) << ',' << num(s.lpips)
       << '\n';
  };
  for (const auto& s : r.summaries()) row(s);
  row(r.overall());
}

void write_long_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "split,variant,pair_id,metric,value\n";
  for (const auto& r : reports) {
    for (const auto& p : r.patches) {
      os << r.split << ',' << r.variant << ',' << p.pair_id << ",SSIM," << num(p.ssim) << '\n';
      if (r.lpips_available) os << r.split << ',' << r.variant << ',' << p.pair_id << ",LPIPS," << num(p.lpips) << '\n';
      os << r.split << ',' << r.variant << ',' << p.pair_id << ",PSNR," << num(p.psnr) << '\n';
    }
  }
}

void write_frc_csv(const FrcResult& r, const std::filesystem::path& patches_path,
                   const std::filesystem::path& pairs_path) {
  auto os = open_csv(patches_path);
  os << "pair_id,source,x,y,resolution_px,resolved,threshold\n";
  for (const auto& p : r.patches) {
    os << p.pair_id << ',' << p.source << ',' << p.x << ',' << p.y << ','
       << (p.resolution_px ? num(*p.resolution_px) : "NA") << ',' << (p.resolution_px ? 1 : 0) << ','
       << num(r.threshold) << '\n';
  }
  auto ps = open_csv(pairs_path);
  ps << "pair_id,generated_px,histology_px,ct_px,generated_vs_histology,generated_vs_ct\n";
  for (const auto& p : r.pairs) {
    ps << p.pair_id << ',' << num(p.generated) << ',' << num(p.histology) << ',' << num(p.ct) << ','
       << num(p.vs_histology) << ',' << num(p.vs_ct) << '\n';
  }
}

}  // namespace vstain::eval

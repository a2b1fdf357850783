#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <algorithm>

#include "vstain/errors.hpp"
#include "vstain/eval.hpp"

namespace vstain::eval {

namespace {

// FFTW planning is not thread safe.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> fft2(const std::vector<double>& v, int n) {
  const std::size_t count = static_cast<std::size_t>(n) * n;
  std::vector<std::complex<double>> in(count), out(count);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) in[i] = v[i] - mean;
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_2d(n, n, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()),
                            FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

void taper(std::vector<double>& v, int n) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      auto& p = v[static_cast<std::size_t>(y) * n + x];
      p = (p - mean) * w[static_cast<std::size_t>(y)] * w[static_cast<std::size_t>(x)];
    }
  }
}

int signed_freq(int k, int n) { return k < (n + 1) / 2 ? k : k - n; }

// Frequencies per ring, index 1..n/2.
std::vector<int> ring_counts(int n) {
  std::vector<int> out(static_cast<std::size_t>(n / 2) + 1, 0);
  for (int ky = 0; ky < n; ++ky) {
    for (int kx = 0; kx < n; ++kx) {
      const int fx = signed_freq(kx, n), fy = signed_freq(ky, n);
      const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fx * fx + fy * fy))));
      if (r >= 1 && r <= n / 2) ++out[static_cast<std::size_t>(r)];
    }
  }
  return out;
}

}  // namespace

FrcCurve frc_curve(const std::vector<double>& a, const std::vector<double>& b, int n) {
  const std::size_t count = static_cast<std::size_t>(n) * n;
  if (n < 4 || a.size() != count || b.size() != count) throw InputError("FRC needs two equal n x n images, n >= 4");
  const auto fa = fft2(a, n), fb = fft2(b, n);
  const int rings = n / 2;
  std::vector<double> cross(static_cast<std::size_t>(rings) + 1, 0.0), pa(cross), pb(cross);
  for (int ky = 0; ky < n; ++ky) {
    const int fy = signed_freq(ky, n);
    for (int kx = 0; kx < n; ++kx) {
      const int fx = signed_freq(kx, n);
      const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fx * fx + fy * fy))));
      if (r < 1 || r > rings) continue;
      const auto u = fa[static_cast<std::size_t>(ky) * n + kx], v = fb[static_cast<std::size_t>(ky) * n + kx];
      cross[static_cast<std::size_t>(r)] += (u * std::conj(v)).real();
      pa[static_cast<std::size_t>(r)] += std::norm(u);
      pb[static_cast<std::size_t>(r)] += std::norm(v);
    }
  }
  // Rings holding only round-off count as empty.
  double peak_a = 0.0, peak_b = 0.0;
  for (int r = 1; r <= rings; ++r) {
    peak_a = std::max(peak_a, pa[static_cast<std::size_t>(r)]);
    peak_b = std::max(peak_b, pb[static_cast<std::size_t>(r)]);
  }
  FrcCurve c;
  for (int r = 1; r <= rings; ++r) {
    const bool empty = pa[static_cast<std::size_t>(r)] <= 1e-20 * peak_a || pb[static_cast<std::size_t>(r)] <= 1e-20 * peak_b;
    const double den = empty ? 0.0 : std::sqrt(pa[static_cast<std::size_t>(r)] * pb[static_cast<std::size_t>(r)]);
    c.frequency.push_back(static_cast<double>(r) / n);
    c.correlation.push_back(den > 0.0 ? cross[static_cast<std::size_t>(r)] / den
                                      : std::numeric_limits<double>::quiet_NaN());
  }
  return c;
}

std::optional<double> frc_resolution(const std::vector<double>& image, int n, double threshold) {
  if (n < 8 || n % 2 != 0 || image.size() != static_cast<std::size_t>(n) * n) {
    throw InputError("FRC needs an even square image of side >= 8");
  }
  const int m = n / 2;
  std::vector<double> a(static_cast<std::size_t>(m) * m), b(a.size());
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < m; ++x) {
      a[static_cast<std::size_t>(y) * m + x] = image[static_cast<std::size_t>(2 * y) * n + 2 * x];
      b[static_cast<std::size_t>(y) * m + x] = image[static_cast<std::size_t>(2 * y + 1) * n + 2 * x + 1];
    }
  }
  // Hann taper so the patch border does not correlate at every frequency.
  taper(a, m);
  taper(b, m);
  const FrcCurve c = frc_curve(a, b, m);
  bool any_power = false;
  for (double v : c.correlation) any_power = any_power || !std::isnan(v);
  if (!any_power) return std::nullopt;
  // A crossing only counts when the rings before it, pooled, correlate
  // 3 sigma above chance (half of the frequencies being independent);
  // otherwise a few-sample low ring of pure noise would pass for signal.
  const auto counts = ring_counts(m);
  double pooled = 0.0, seen = 0.0;
  for (std::size_t i = 0; i < c.correlation.size(); ++i) {
    const double v = std::isnan(c.correlation[i]) ? 0.0 : c.correlation[i];
    if (v >= threshold) {
      pooled += counts[i + 1] * v;
      seen += counts[i + 1];
      continue;
    }
    if (i == 0 || pooled / seen < 3.0 / std::sqrt(0.5 * seen)) return std::nullopt;
    const double prev = std::isnan(c.correlation[i - 1]) ? 0.0 : c.correlation[i - 1];
    const double t = (prev - threshold) / (prev - v);
    const double f = c.frequency[i - 1] + t * (c.frequency[i] - c.frequency[i - 1]);
    // Half-image frequencies are per two original pixels.
    return 2.0 / f;
  }
  return std::nullopt;
}

std::vector<double> luminance(const Image8& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double v;
      if (img.channels() >= 3) {
        v = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      } else {
        v = img.at(x, y, 0);
      }
      out[static_cast<std::size_t>(y) * img.width() + x] = v;
    }
  }
  return out;
}

void frc_pair(FrcResult& result, const std::string& pair_id, const Image8& generated, const Image8& histology,
              const Gray16& ct, const CorrespondenceMask& mask, int patch) {
  if (patch % 2 != 0) throw InputError("FRC patch size must be even");
  std::array<double, 3> sum{};
  std::array<int, 3> count{};
  const char* names[3] = {"generated", "histology", "ct"};
  const auto gl = luminance(generated), hl = luminance(histology);
  const int w = generated.width();
  for (const auto& win : sample_eval_patches(mask, patch)) {
    for (int s = 0; s < 3; ++s) {
      std::vector<double> img(static_cast<std::size_t>(patch) * patch);
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          const std::size_t src = static_cast<std::size_t>(win.y + y) * w + win.x + x;
          img[static_cast<std::size_t>(y) * patch + x] =
              s == 0 ? gl[src] : s == 1 ? hl[src] : static_cast<double>(ct.at(win.x + x, win.y + y));
        }
      }
      FrcPatch p;
      p.pair_id = pair_id;
      p.source = names[s];
      p.x = win.x;
      p.y = win.y;
      p.resolution_px = frc_resolution(img, patch, result.threshold);
      if (p.resolution_px) {
        sum[static_cast<std::size_t>(s)] += *p.resolution_px;
        ++count[static_cast<std::size_t>(s)];
      } else {
        ++result.unresolved;
      }
      result.patches.push_back(p);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  FrcPairFraction f;
  f.pair_id = pair_id;
  f.generated = count[0] ? sum[0] / count[0] : nan;
  f.histology = count[1] ? sum[1] / count[1] : nan;
  f.ct = count[2] ? sum[2] / count[2] : nan;
  f.vs_histology = f.generated / f.histology;
  f.vs_ct = f.generated / f.ct;
  result.pairs.push_back(f);
}

}  // namespace vstain::eval

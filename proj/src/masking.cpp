#include "vstain/masking.hpp"

#include <algorithm>
#include <cmath>

#include "vstain/core/autograd.hpp"

namespace vstain::masking {

double otsu_threshold(const std::vector<double>& values, int bins) {
  if (values.empty()) throw InputError("Otsu threshold of an empty sample");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi <= lo) return hi;
  const double width = (hi - lo) / bins;
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < bins; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < bins - 1; ++b) {
    w0 += hist[static_cast<std::size_t>(b)];
    sum0 += b * hist[static_cast<std::size_t>(b)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return lo + (best_bin + 1) * width;
}

std::vector<double> box3(const std::vector<double>& values, int width, int height) {
  std::vector<double> out(values.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, height - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, width - 1);
          s += values[static_cast<std::size_t>(yy) * width + xx];
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = s / 9.0;
    }
  }
  return out;
}

std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& binary, int width, int height) {
  std::vector<int> label(binary.size(), 0);
  std::vector<std::size_t> stack;
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  for (std::size_t start = 0; start < binary.size(); ++start) {
    if (!binary[start] || label[start]) continue;
    ++next;
    std::size_t size = 0;
    stack.push_back(start);
    label[start] = next;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(i % static_cast<std::size_t>(width));
      const int y = static_cast<int>(i / static_cast<std::size_t>(width));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= width || yy >= height) continue;
          const std::size_t j = static_cast<std::size_t>(yy) * width + xx;
          if (binary[j] && !label[j]) {
            label[j] = next;
            stack.push_back(j);
          }
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
  }
  std::vector<std::uint8_t> out(binary.size(), 0);
  if (best_label == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = label[i] == best_label ? 1 : 0;
  return out;
}

namespace {

std::int64_t cross(const Point& o, const Point& a, const Point& b) {
  return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) - static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point> convex_hull(const std::vector<std::uint8_t>& binary, int width, int height) {
  // Only the leftmost and rightmost set pixel of each row can be hull vertices.
  std::vector<Point> pts;
  for (int y = 0; y < height; ++y) {
    int first = -1, last = -1;
    for (int x = 0; x < width; ++x) {
      if (binary[static_cast<std::size_t>(y) * width + x]) {
        if (first < 0) first = x;
        last = x;
      }
    }
    if (first < 0) continue;
    pts.push_back({first, y});
    if (last != first) pts.push_back({last, y});
  }
  if (pts.size() < 3) return pts;
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    const Point& p = pts[i - 1];
    while (k >= t && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

Image8 fill_hull(const std::vector<Point>& hull, int width, int height) {
  Image8 out(width, height, 1);
  if (hull.empty()) return out;
  const std::size_t n = hull.size();
  for (int y = 0; y < height; ++y) {
    double xmin = 1e300, xmax = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      const Point& p = hull[i];
      const Point& q = hull[(i + 1) % n];
      if (y < std::min(p.y, q.y) || y > std::max(p.y, q.y)) continue;
      if (p.y == q.y) {
        xmin = std::min({xmin, double(p.x), double(q.x)});
        xmax = std::max({xmax, double(p.x), double(q.x)});
      } else {
        const double x = p.x + double(q.x - p.x) * (y - p.y) / double(q.y - p.y);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
      }
    }
    if (xmin > xmax) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(xmin - 1e-9)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(xmax + 1e-9)));
    for (int x = x0; x <= x1; ++x) out.at(x, y) = 1;
  }
  return out;
}

namespace {

Image8 segment_hull(const std::vector<double>& plane, int width, int height, const char* modality) {
  const auto smooth = box3(plane, width, height);
  const double t = otsu_threshold(smooth);
  std::vector<std::uint8_t> fg(smooth.size());
  for (std::size_t i = 0; i < smooth.size(); ++i) fg[i] = smooth[i] >= t ? 1 : 0;
  const auto comp = largest_component(fg, width, height);
  if (std::none_of(comp.begin(), comp.end(), [](std::uint8_t v) { return v != 0; })) {
    throw InputError(std::string("mask construction: empty ") + modality + " segmentation");
  }
  return fill_hull(convex_hull(comp, width, height), width, height);
}

}  // namespace

Image8 ct_hull(const CtSlice& ct) {
  const auto& px = ct.pixels;
  std::vector<double> plane(static_cast<std::size_t>(px.pixel_count()));
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = px.values()[i];
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  if (*lo == *hi) throw InputError("mask construction: CT slice is constant");
  return segment_hull(plane, px.width(), px.height(), "CT");
}

Image8 histology_hull(const HistologySlide& histology) {
  const auto& rgb = histology.rgb;
  std::vector<double> plane(static_cast<std::size_t>(rgb.pixel_count()));
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const double lum = 0.299 * rgb.at(x, y, 0) + 0.587 * rgb.at(x, y, 1) + 0.114 * rgb.at(x, y, 2);
      plane[static_cast<std::size_t>(y) * rgb.width() + x] = 255.0 - lum;
    }
  }
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  if (*lo == *hi) throw InputError("mask construction: histology slide is constant");
  return segment_hull(plane, rgb.width(), rgb.height(), "histology");
}

CorrespondenceMask build_correspondence_mask(const ImagePair& pair, const std::vector<CorrespondenceMask>& manual) {
  check_aligned(pair);
  const Image8 a = ct_hull(pair.ct);
  const Image8 b = histology_hull(pair.histology);
  CorrespondenceMask out;
  out.raster = Image8(a.width(), a.height(), 1);
  for (std::size_t i = 0; i < out.raster.values().size(); ++i) out.raster.values()[i] = a.values()[i] && b.values()[i];
  for (const auto& m : manual) {
    if (!m.raster.same_size(out.raster)) throw InputError("manual mask dimensions differ from the pair");
    for (std::size_t i = 0; i < out.raster.values().size(); ++i) {
      out.raster.values()[i] = out.raster.values()[i] && m.raster.values()[i];
    }
  }
  out.provenance = manual.empty() ? "auto hull" : "auto hull & manual";
  if (out.empty()) out.provenance += " (empty: untrainable)";
  return out;
}

Image8 apply_mask(const Image8& image, const CorrespondenceMask& mask, const std::vector<std::uint8_t>& fill) {
  if (!image.same_size(mask.raster)) throw InputError("apply_mask: dimensions differ");
  if (static_cast<int>(fill.size()) != image.channels()) throw InputError("apply_mask: fill has wrong channel count");
  Image8 out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (mask.at(x, y)) continue;
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = fill[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

Image8 apply_mask(const Image8& image, const CorrespondenceMask& mask, std::uint8_t fill) {
  return apply_mask(image, mask, std::vector<std::uint8_t>(static_cast<std::size_t>(image.channels()), fill));
}

Gray16 apply_mask(const Gray16& image, const CorrespondenceMask& mask, std::uint16_t fill) {
  if (!image.same_size(mask.raster)) throw InputError("apply_mask: dimensions differ");
  Gray16 out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (!mask.at(x, y)) out.at(x, y) = fill;
    }
  }
  return out;
}

template <typename T>
T masked_l1(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask) {
  ag::NoGradGuard guard;
  return ag::masked_l1(ag::Var<T>(a), ag::Var<T>(b), mask).item();
}

template float masked_l1<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template double masked_l1<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace vstain::masking

#include "vstain/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace vstain::phantom {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kStackHalfDepth = 32.0;  // pores are seeded in z in [-32, 32]

struct Cosine {
  double kx, ky, kz, phase, amp;
  double operator()(double x, double y, double z) const { return amp * std::cos(kx * x + ky * y + kz * z + phase); }
};

struct Sphere {
  double x, y, z, r;
};

struct Segment {
  double x0, y0, x1, y1, half_width;
};

// Everything random about a phantom except the per-slice noise. Drawn in a
// fixed order from the phantom seed so every slice of a stack shares it.
struct Geometry {
  double cx = 0, cy = 0;    // bone disc centre
  double sx = 0, sy = 0;    // screw centre
  std::vector<std::pair<double, double>> rim;  // (amplitude, phase) for harmonics 2..4
  std::vector<Cosine> density;
  std::vector<Cosine> tissue;
  double tissue_threshold = -1e300;  // no soft tissue
  std::vector<Sphere> pores;
  std::vector<Segment> cracks;
  double stripe_angle = 0, stripe_period = 9, stripe_phase = 0;
};

std::vector<Cosine> random_field(std::mt19937_64& rng, int terms, double min_wavelength, double max_wavelength,
                                 bool with_z) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Cosine> out;
  for (int i = 0; i < terms; ++i) {
    const double lambda = min_wavelength + (max_wavelength - min_wavelength) * u(rng);
    const double k = 2.0 * kPi / lambda;
    const double theta = 2.0 * kPi * u(rng);
    const double tilt = with_z ? (u(rng) - 0.5) * 0.8 : 0.0;
    const double phase = 2.0 * kPi * u(rng);
    out.push_back({k * std::cos(theta), k * std::sin(theta), k * tilt, phase, 1.0 / std::sqrt(0.5 * terms)});
  }
  return out;
}

double field_at(const std::vector<Cosine>& f, double x, double y, double z) {
  double s = 0.0;
  for (const auto& c : f) s += c(x, y, z);
  return s;
}

double rim_radius(const PhantomSpec& spec, const Geometry& g, double theta) {
  double p = 0.0;
  for (std::size_t k = 0; k < g.rim.size(); ++k) p += g.rim[k].first * std::cos((k + 2.0) * theta + g.rim[k].second);
  return spec.bone_radius * (1.0 + spec.boundary_roughness * p);
}

bool in_disc(const PhantomSpec& spec, const Geometry& g, double x, double y) {
  const double dx = x - g.cx, dy = y - g.cy;
  const double r = std::hypot(dx, dy);
  if (r > spec.bone_radius * (1.0 + spec.boundary_roughness)) return false;
  return r <= rim_radius(spec, g, std::atan2(dy, dx));
}

// Half-width of the screw section at row offset dy from the screw centre.
double screw_half_width(const PhantomSpec& spec, double dy, double z) {
  if (spec.screw_radius <= 0.0 || std::abs(dy) > spec.screw_half_length) return -1.0;
  const double u = dy / spec.thread_period;
  const double tri = 1.0 - std::abs(2.0 * (u - std::floor(u)) - 1.0);
  const double depth = std::min(spec.thread_depth, spec.screw_radius);
  const double r = spec.screw_radius - depth + depth * tri;
  if (std::abs(z) >= r) return -1.0;
  return std::sqrt(r * r - z * z);
}

Geometry draw_geometry(const PhantomSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Geometry g;
  g.cx = 0.5 * spec.width;
  g.cy = 0.5 * spec.height;
  g.sx = spec.screw_center_x < 0 ? g.cx : spec.screw_center_x;
  g.sy = spec.screw_center_y < 0 ? g.cy : spec.screw_center_y;

  double amp_sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double a = 0.3 + u(rng);
    g.rim.emplace_back(a, 2.0 * kPi * u(rng));
    amp_sum += a;
  }
  for (auto& [a, phase] : g.rim) a /= amp_sum;

  // Field wavelengths follow the sample size (tuned at radius 52).
  const double scale = spec.bone_radius / 52.0;
  g.density = random_field(rng, 3, 28.0 * scale, 70.0 * scale, true);
  g.tissue = random_field(rng, 4, 18.0 * scale, 40.0 * scale, true);

  // Threshold from the z = 0 section so that the requested fraction of the
  // disc becomes soft tissue; the same threshold holds for every slice.
  if (spec.soft_tissue_fraction > 0.0) {
    std::vector<double> values;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (in_disc(spec, g, x + 0.5, y + 0.5)) values.push_back(field_at(g.tissue, x + 0.5, y + 0.5, 0.0));
      }
    }
    if (!values.empty()) {
      std::sort(values.begin(), values.end());
      const double q = std::clamp(spec.soft_tissue_fraction, 0.0, 1.0);
      const auto idx = static_cast<std::size_t>(std::min<double>(q * values.size(), values.size() - 1));
      g.tissue_threshold = values[idx];
    }
  }

  if (spec.pore_density > 0.0 && spec.pore_radius > 0.0) {
    const double area = kPi * spec.bone_radius * spec.bone_radius;
    const double per_slice = spec.pore_density * area / 1000.0;
    const double chord = 2.0 * spec.pore_radius;
    const auto count = static_cast<int>(std::lround(per_slice * 2.0 * kStackHalfDepth / chord));
    for (int i = 0; i < count; ++i) {
      const double rr = spec.bone_radius * std::sqrt(u(rng));
      const double th = 2.0 * kPi * u(rng);
      const double z = (2.0 * u(rng) - 1.0) * kStackHalfDepth;
      const double r = spec.pore_radius * (0.7 + 0.6 * u(rng));
      g.pores.push_back({g.cx + rr * std::cos(th), g.cy + rr * std::sin(th), z, r});
    }
  }

  for (int i = 0; i < 2; ++i) {
    const double th = 2.0 * kPi * u(rng);
    const double off = (u(rng) - 0.5) * spec.bone_radius;
    const double nx = -std::sin(th), ny = std::cos(th);
    const double px = g.cx + off * nx, py = g.cy + off * ny;
    const double len = spec.bone_radius * 1.2;
    g.cracks.push_back({px - len * std::cos(th), py - len * std::sin(th), px + len * std::cos(th),
                        py + len * std::sin(th), 0.6 + 0.5 * u(rng)});
  }
  g.stripe_angle = kPi * u(rng);
  g.stripe_period = 7.0 + 6.0 * u(rng);
  g.stripe_phase = 2.0 * kPi * u(rng);
  return g;
}

double segment_distance(const Segment& s, double x, double y) {
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double t = std::clamp(((x - s.x0) * vx + (y - s.y0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(x - (s.x0 + t * vx), y - (s.y0 + t * vy));
}

// Exact squared Euclidean distance from every pixel to the nearest set
// pixel (separable lower-envelope transform); +inf without set pixels.
std::vector<double> squared_distance_to(const std::vector<std::uint8_t>& set, int w, int h) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) d[i] = set[i] ? 0.0 : inf;
  auto pass = [](std::vector<double>& f) {
    const int n = static_cast<int>(f.size());
    std::vector<double> out(f.size());
    std::vector<int> v(f.size());
    std::vector<double> zb(f.size() + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
      if (f[q] == inf) continue;
      while (k >= 0) {
        const double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]));
        if (s > zb[k]) break;
        --k;
      }
      ++k;
      v[k] = q;
      zb[k] = k == 0 ? -inf : ((f[q] + q * q) - (f[v[k - 1]] + v[k - 1] * v[k - 1])) / (2.0 * (q - v[k - 1]));
      zb[k + 1] = inf;
    }
    if (k < 0) return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (zb[j + 1] < q) ++j;
      const double dq = q - v[j];
      out[q] = dq * dq + f[v[j]];
    }
    f = std::move(out);
  };
  std::vector<double> line;
  for (int x = 0; x < w; ++x) {
    line.resize(h);
    for (int y = 0; y < h; ++y) line[y] = d[static_cast<std::size_t>(y) * w + x];
    pass(line);
    for (int y = 0; y < h; ++y) d[static_cast<std::size_t>(y) * w + x] = line[y];
  }
  for (int y = 0; y < h; ++y) {
    line.assign(d.begin() + static_cast<std::ptrdiff_t>(y) * w, d.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
    pass(line);
    std::copy(line.begin(), line.end(), d.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  return d;
}

Section build_section(const PhantomSpec& spec, const Geometry& g) {
  Section sec;
  sec.width = spec.width;
  sec.height = spec.height;
  const std::size_t n = static_cast<std::size_t>(spec.width) * spec.height;
  sec.labels.assign(n, Region::background);
  sec.density.assign(n, 1.0f);
  const double z = spec.slice_z;

  std::vector<std::uint8_t> screw(n, 0);
  for (int y = 0; y < spec.height; ++y) {
    const double hw = screw_half_width(spec, y + 0.5 - g.sy, z);
    if (hw < 0) continue;
    for (int x = 0; x < spec.width; ++x) {
      if (std::abs(x + 0.5 - g.sx) <= hw) screw[static_cast<std::size_t>(y) * spec.width + x] = 1;
    }
  }

  const bool mg = spec.material == Material::Mg;
  const double deg = mg ? spec.degradation_thickness : 0.0;
  const double woven = mg ? spec.woven_width : 0.5 * spec.woven_width;
  const double band = deg + woven;
  const std::vector<double> dist2 = band > 0.0 ? squared_distance_to(screw, spec.width, spec.height)
                                                : std::vector<double>();

  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * spec.width + x;
      const double px = x + 0.5, py = y + 0.5;
      sec.density[i] = static_cast<float>(1.0 + spec.density_contrast * std::tanh(0.6 * field_at(g.density, px, py, z)));
      if (screw[i]) {
        sec.labels[i] = Region::screw;
        continue;
      }
      if (!in_disc(spec, g, px, py)) continue;
      Region r = Region::bone;
      if (field_at(g.tissue, px, py, z) < g.tissue_threshold) r = Region::soft_tissue;
      for (const auto& p : g.pores) {
        const double dz = z - p.z;
        if (std::abs(dz) >= p.r) continue;
        const double rr = std::sqrt(p.r * p.r - dz * dz);
        if (std::hypot(px - p.x, py - p.y) <= rr) {
          r = Region::pore;
          break;
        }
      }
      if (band > 0.0) {
        const double best = std::sqrt(dist2[i]);
        if (best <= deg) {
          r = Region::degradation;
        } else if (best <= band) {
          r = Region::woven;
        }
      }
      sec.labels[i] = r;
    }
  }
  return sec;
}

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackgroundRgb{236, 229, 242};
constexpr Rgb kBoneRgb{150, 84, 170};
constexpr Rgb kSoftTissueRgb{178, 198, 230};
constexpr Rgb kPoreRgb{72, 52, 132};
constexpr Rgb kWovenRgb{60, 120, 228};
constexpr Rgb kDegradationRgb{98, 70, 116};

std::uint16_t clamp16(double v) { return static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L)); }
std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

double ct_level(const PhantomSpec& spec, Region r, double density) {
  const double span = kRawCtBone - kRawCtBackground;
  switch (r) {
    case Region::background: return kRawCtBackground;
    case Region::bone: return kRawCtBackground + span * density;
    case Region::soft_tissue:
    case Region::pore: return kRawCtBackground + span * 0.35;
    case Region::woven: return kRawCtBackground + span * spec.woven_ct_factor * density;
    case Region::degradation: return kRawCtBackground + span * 0.55;
    case Region::screw: return kRawCtBackground + span * spec.contrast.relative(spec.material);
  }
  return kRawCtBackground;
}

Rgb shade(Rgb c, double density) {
  // Denser tissue takes up more stain.
  auto f = [density](double v) { return 255.0 - (255.0 - v) * density; };
  return {f(c.r), f(c.g), f(c.b)};
}

Rgb histology_colour(const PhantomSpec& spec, Region r, double density) {
  switch (r) {
    case Region::background: return kBackgroundRgb;
    case Region::bone: return shade(kBoneRgb, density);
    case Region::soft_tissue: return kSoftTissueRgb;
    case Region::pore: return kPoreRgb;
    case Region::woven: return shade(kWovenRgb, density);
    case Region::degradation: return kDegradationRgb;
    case Region::screw:
      return {double(spec.contrast.screw_rgb[0]), double(spec.contrast.screw_rgb[1]), double(spec.contrast.screw_rgb[2])};
  }
  return kBackgroundRgb;
}

CtSlice render_ct(const PhantomSpec& spec, const Section& sec) {
  CtSlice ct;
  ct.pixel_size_um = spec.pixel_size_um;
  ct.pixels = Gray16(spec.width, spec.height, 1);
  std::mt19937_64 rng(derive_seed(spec.seed, 0x1000 + static_cast<std::uint64_t>(std::llround(spec.slice_z * 16.0) + (1 << 20))));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * spec.width + x;
      const double v = ct_level(spec, sec.labels[i], sec.density[i]) + spec.ct_noise * noise(rng);
      ct.pixels.at(x, y) = clamp16(v);
    }
  }
  return ct;
}

}  // namespace

double MaterialContrastTable::relative(Material m) const {
  switch (m) {
    case Material::PEEK: return peek;
    case Material::Mg: return mg;
    case Material::Ti: return ti;
  }
  return mg;
}

void validate(const PhantomSpec& spec) {
  if (spec.patch_size < 1) throw InputError("phantom patch size must be positive");
  if (spec.width < 2 * spec.patch_size || spec.height < 2 * spec.patch_size) {
    throw InputError("phantom canvas " + std::to_string(spec.width) + "x" + std::to_string(spec.height) +
                     " is smaller than twice the patch size " + std::to_string(spec.patch_size));
  }
  if (spec.degradation_thickness < 0.0) throw InputError("degradation thickness must be >= 0");
  if (spec.degradation_thickness > 0.0 && spec.material != Material::Mg) {
    throw InputError("a degradation layer is only defined for Mg implants");
  }
  if (spec.bone_radius <= 0.0 || spec.screw_radius < 0.0 || spec.screw_half_length < 0.0 || spec.pore_density < 0.0 ||
      spec.soft_tissue_fraction < 0.0 || spec.soft_tissue_fraction > 1.0 || spec.thread_period <= 0.0 ||
      spec.thread_depth < 0.0 || spec.boundary_roughness < 0.0 || spec.boundary_roughness >= 1.0 ||
      spec.ct_noise < 0.0 || spec.histology_noise < 0.0 || spec.woven_width < 0.0) {
    throw InputError("phantom spec has a negative or out-of-range parameter");
  }
  const double cx = 0.5 * spec.width, cy = 0.5 * spec.height;
  const double outer = spec.bone_radius * (1.0 + spec.boundary_roughness);
  if (cx - outer < 0.0 || cx + outer > spec.width || cy - outer < 0.0 || cy + outer > spec.height) {
    throw InputError("bone disc does not fit the phantom canvas");
  }
  if (spec.screw_radius > 0.0) {
    const double sx = spec.screw_center_x < 0 ? cx : spec.screw_center_x;
    const double sy = spec.screw_center_y < 0 ? cy : spec.screw_center_y;
    const double inner = spec.bone_radius * (1.0 - spec.boundary_roughness);
    const double band = spec.degradation_thickness + spec.woven_width;
    for (double ex : {-1.0, 1.0}) {
      for (double ey : {-1.0, 1.0}) {
        const double dx = sx + ex * (spec.screw_radius + band) - cx;
        const double dy = sy + ey * (spec.screw_half_length + band) - cy;
        if (std::hypot(dx, dy) > inner) throw InputError("screw geometry does not fit inside the bone disc");
      }
    }
  }
}

Section build_section(const PhantomSpec& spec) {
  validate(spec);
  return build_section(spec, draw_geometry(spec));
}

ImagePair generate_phantom_pair(const PhantomSpec& spec) {
  validate(spec);
  const Geometry g = draw_geometry(spec);
  const Section sec = build_section(spec, g);
  const int w = spec.width, h = spec.height;

  ImagePair pair;
  pair.material = spec.material;
  pair.seed = spec.seed;
  pair.ct = render_ct(spec, sec);

  pair.histology.pixel_size_um = spec.pixel_size_um;
  pair.histology.rgb = Image8(w, h, 3);
  std::mt19937_64 rng(derive_seed(spec.seed, 2));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::uint8_t> cracked(static_cast<std::size_t>(w) * h, 0);
  const double sa = std::cos(g.stripe_angle), sb = std::sin(g.stripe_angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const Region r = sec.labels[i];
      Rgb c = histology_colour(spec, r, sec.density[i]);
      if (spec.cracks && r != Region::background && r != Region::screw) {
        for (const auto& s : g.cracks) {
          if (segment_distance(s, x + 0.5, y + 0.5) <= s.half_width) {
            c = kBackgroundRgb;
            cracked[i] = 1;
            break;
          }
        }
      }
      if (spec.striations && r != Region::background) {
        const double t = (sa * x + sb * y) / g.stripe_period * 2.0 * kPi + g.stripe_phase;
        const double f = 1.0 - 0.08 * (0.5 + 0.5 * std::sin(t));
        c = {c.r * f, c.g * f, c.b * f};
      }
      const double n0 = noise(rng), n1 = noise(rng), n2 = noise(rng);
      pair.histology.rgb.at(x, y, 0) = clamp8(c.r + spec.histology_noise * n0);
      pair.histology.rgb.at(x, y, 1) = clamp8(c.g + spec.histology_noise * n1);
      pair.histology.rgb.at(x, y, 2) = clamp8(c.b + spec.histology_noise * n2);
    }
  }

  pair.mask.raster = Image8(w, h, 1);
  pair.mask.provenance = "phantom sample region";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) pair.mask.raster.at(x, y) = sec.at(x, y) != Region::background ? 1 : 0;
  }

  // ROIs: dense bone whose 3x3 neighbourhood is uncracked dense bone, and
  // background at least 3 pixels from the sample.
  auto all_within = [&](int x, int y, int rad, auto pred) {
    for (int dy = -rad; dy <= rad; ++dy) {
      for (int dx = -rad; dx <= rad; ++dx) {
        const int xx = x + dx, yy = y + dy;
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) return false;
        if (!pred(static_cast<std::size_t>(yy) * w + xx)) return false;
      }
    }
    return true;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (all_within(x, y, 1, [&](std::size_t i) { return sec.labels[i] == Region::bone && !cracked[i]; })) {
        pair.rois.bone.pixels.push_back({x, y});
      } else if (all_within(x, y, 3, [&](std::size_t i) { return sec.labels[i] == Region::background; })) {
        pair.rois.background.pixels.push_back({x, y});
      }
    }
  }
  return pair;
}

std::vector<CtSlice> generate_ct_stack(const PhantomSpec& spec, int depth, double z0) {
  if (depth < 1) throw InputError("stack depth must be >= 1");
  validate(spec);
  const Geometry g = draw_geometry(spec);
  std::vector<CtSlice> out;
  for (int k = 0; k < depth; ++k) {
    PhantomSpec s = spec;
    s.slice_z = z0 + k;
    out.push_back(render_ct(s, build_section(s, g)));
  }
  return out;
}

std::array<int, 3> material_counts(int n, const std::array<double, 3>& ratio) {
  if (n < 1) throw InputError("dataset size must be >= 1");
  double total = 0.0;
  for (double r : ratio) {
    if (r < 0.0) throw InputError("material ratio entries must be non-negative");
    total += r;
  }
  if (total <= 0.0) throw InputError("material ratio must not be all zero");
  std::array<int, 3> counts{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = n * ratio[static_cast<std::size_t>(i)] / total;
    counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(exact + 1e-9));
    rem[static_cast<std::size_t>(i)] = exact - counts[static_cast<std::size_t>(i)];
    assigned += counts[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)] + 1e-12;
  });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(k % 3)])];
  return counts;
}

std::vector<ImagePair> generate_phantom_dataset(int n, const std::array<double, 3>& ratio, std::uint64_t seed,
                                                const PhantomSpec& base) {
  const auto counts = material_counts(n, ratio);
  std::vector<Material> materials;
  for (int m = 0; m < 3; ++m) {
    for (int k = 0; k < counts[static_cast<std::size_t>(m)]; ++k) materials.push_back(kMaterials[m]);
  }
  std::mt19937_64 order_rng(derive_seed(seed, 0xABCDEF));
  std::shuffle(materials.begin(), materials.end(), order_rng);

  std::vector<ImagePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PhantomSpec s = base;
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    s.material = materials[static_cast<std::size_t>(i)];
    std::mt19937_64 rng(derive_seed(s.seed, 7));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto jitter = [&](double v, double rel) { return v * (1.0 + rel * (2.0 * u(rng) - 1.0)); };
    const double span = 0.05 * std::min(s.width, s.height);
    s.screw_center_x = 0.5 * s.width + span * (2.0 * u(rng) - 1.0);
    s.screw_center_y = 0.5 * s.height + span * (2.0 * u(rng) - 1.0);
    s.screw_radius = jitter(base.screw_radius, 0.15);
    s.thread_period = jitter(base.thread_period, 0.2);
    s.bone_radius = jitter(base.bone_radius, 0.04);
    s.soft_tissue_fraction = std::clamp(jitter(base.soft_tissue_fraction, 0.4), 0.0, 1.0);
    s.pore_density = jitter(base.pore_density, 0.3);
    s.woven_width = jitter(base.woven_width, 0.2);
    const double deg = jitter(base.degradation_thickness > 0 ? base.degradation_thickness : 3.0, 0.25);
    s.degradation_thickness = s.material == Material::Mg ? deg : 0.0;
    // Shrink the screw until it fits the (jittered) disc.
    for (int guard = 0; guard < 40; ++guard) {
      try {
        validate(s);
        break;
      } catch (const InputError&) {
        s.screw_half_length *= 0.95;
        s.screw_radius *= 0.97;
        s.bone_radius = std::min(s.bone_radius, base.bone_radius);
      }
    }
    ImagePair pair = generate_phantom_pair(s);
    char id[32];
    std::snprintf(id, sizeof id, "pair_%03d", i);
    pair.id = id;
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace vstain::phantom

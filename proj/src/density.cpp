#include "cccnet/density.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cccnet/binary_io.hpp"
#include "cccnet/error.hpp"

namespace cccnet {

std::string_view category_name(Category c) {
  return c == Category::Sitting ? "sitting" : "standing";
}

Category parse_category(std::string_view name) {
  if (name == "sitting") return Category::Sitting;
  if (name == "standing") return Category::Standing;
  throw FormatError("unknown category \"" + std::string(name) + "\"");
}

std::vector<double> adaptive_sigmas(std::span<const Point> points, int k,
                                    double beta, double fallback_sigma) {
  if (k < 1) throw InvalidArgument("adaptive_sigmas: k must be >= 1");
  if (!(beta > 0.0)) throw InvalidArgument("adaptive_sigmas: beta must be > 0");
  const std::size_t n = points.size();
  const std::size_t kk = static_cast<std::size_t>(k);
  std::vector<double> sigmas(n, fallback_sigma);
  if (n <= kk) return sigmas;
  std::vector<double> dist;
  dist.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.push_back(std::hypot(points[i].x - points[j].x, points[i].y - points[j].y));
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(kk), dist.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < kk; ++j) sum += dist[j];
    sigmas[i] = beta * sum / static_cast<double>(kk);
  }
  return sigmas;
}

double clamp_sigma(double sigma, const KernelConfig& cfg, std::size_t grid_h,
                   std::size_t grid_w) {
  const double hi = std::max(cfg.min_sigma, static_cast<double>(std::min(grid_h, grid_w)) / 4.0);
  return std::clamp(sigma, cfg.min_sigma, hi);
}

namespace {

void check_geometry(std::span<const PersonAnnotation> annotations,
                    std::size_t image_h, std::size_t image_w, std::size_t scale) {
  if (scale == 0 || image_h == 0 || image_w == 0) {
    throw InvalidArgument("render_density: image size and scale must be positive");
  }
  if (image_h % scale != 0 || image_w % scale != 0) {
    throw InvalidArgument("render_density: image size " + std::to_string(image_h) + "x" +
                          std::to_string(image_w) + " not divisible by scale " +
                          std::to_string(scale));
  }
  for (const auto& a : annotations) {
    if (!(a.head.x >= 0.0 && a.head.x < static_cast<double>(image_w) &&
          a.head.y >= 0.0 && a.head.y < static_cast<double>(image_h))) {
      throw InvalidArgument("render_density: annotation (" + std::to_string(a.head.x) +
                            ", " + std::to_string(a.head.y) + ") outside image");
    }
  }
}

// Adds a unit-mass Gaussian centred at grid coordinates (u, v); cell (i, j)
// has its centre at (j + 0.5, i + 0.5).
void splat(DensityMap& map, double u, double v, double sigma, double truncation,
           std::vector<double>& scratch) {
  const double radius = truncation * sigma;
  const long x0 = std::max<long>(0, static_cast<long>(std::ceil(u - 0.5 - radius)));
  const long x1 = std::min<long>(static_cast<long>(map.width) - 1,
                                 static_cast<long>(std::floor(u - 0.5 + radius)));
  const long y0 = std::max<long>(0, static_cast<long>(std::ceil(v - 0.5 - radius)));
  const long y1 = std::min<long>(static_cast<long>(map.height) - 1,
                                 static_cast<long>(std::floor(v - 0.5 + radius)));
  if (x1 < x0 || y1 < y0) return;
  const double r2 = radius * radius;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const long wspan = x1 - x0 + 1;
  scratch.assign(static_cast<std::size_t>(wspan * (y1 - y0 + 1)), 0.0);
  double mass = 0.0;
  for (long i = y0; i <= y1; ++i) {
    const double dy = static_cast<double>(i) + 0.5 - v;
    for (long j = x0; j <= x1; ++j) {
      const double dx = static_cast<double>(j) + 0.5 - u;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r2) continue;
      const double g = std::exp(-d2 * inv);
      scratch[static_cast<std::size_t>((i - y0) * wspan + (j - x0))] = g;
      mass += g;
    }
  }
  // The cell containing the centre is always within the window, so mass > 0.
  for (long i = y0; i <= y1; ++i)
    for (long j = x0; j <= x1; ++j) {
      const double g = scratch[static_cast<std::size_t>((i - y0) * wspan + (j - x0))];
      if (g > 0.0) {
        map.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +=
            static_cast<float>(g / mass);
      }
    }
}

std::vector<double> grid_sigmas(std::span<const PersonAnnotation> annotations,
                                std::size_t scale, std::size_t gh, std::size_t gw,
                                const KernelConfig& cfg) {
  std::vector<Point> pts;
  pts.reserve(annotations.size());
  const double s = static_cast<double>(scale);
  for (const auto& a : annotations) pts.push_back({a.head.x / s, a.head.y / s});
  auto sigmas = adaptive_sigmas(pts, cfg.k, cfg.beta, cfg.fallback_sigma);
  for (auto& sg : sigmas) sg = clamp_sigma(sg, cfg, gh, gw);
  return sigmas;
}

}  // namespace

DensityMap render_density(std::span<const PersonAnnotation> annotations,
                          std::size_t image_h, std::size_t image_w,
                          std::size_t scale, const KernelConfig& cfg) {
  return render_category_maps(annotations, image_h, image_w, scale, cfg).total();
}

CategoryMaps render_category_maps(std::span<const PersonAnnotation> annotations,
                                  std::size_t image_h, std::size_t image_w,
                                  std::size_t scale, const KernelConfig& cfg) {
  check_geometry(annotations, image_h, image_w, scale);
  const std::size_t gh = image_h / scale, gw = image_w / scale;
  CategoryMaps maps{DensityMap(gh, gw, scale), DensityMap(gh, gw, scale)};
  const auto sigmas = grid_sigmas(annotations, scale, gh, gw, cfg);
  const double s = static_cast<double>(scale);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    DensityMap& target = a.category == Category::Sitting ? maps.sitting : maps.standing;
    splat(target, a.head.x / s, a.head.y / s, sigmas[i], cfg.truncation, scratch);
  }
  return maps;
}

DensityMap CategoryMaps::total() const { return add_maps(sitting, standing); }

double count(const DensityMap& map) {
  double acc = 0.0;
  for (float v : map.cells) acc += static_cast<double>(v);
  return acc;
}

DensityMap add_maps(const DensityMap& a, const DensityMap& b) {
  if (a.height != b.height || a.width != b.width || a.scale != b.scale) {
    throw ShapeError("add_maps: map geometry mismatch");
  }
  DensityMap out(a.height, a.width, a.scale);
  for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = a.cells[i] + b.cells[i];
  return out;
}

Tensor to_tensor(const DensityMap& map) {
  std::vector<Scalar> data(map.cells.begin(), map.cells.end());
  return Tensor::from_data({1, map.height, map.width}, std::move(data));
}

DensityMap from_tensor(const Tensor& t, std::size_t scale) {
  if (t.rank() != 3 || t.dim(0) != 1) {
    throw ShapeError("from_tensor: expected 1xHxW, got " + shape_str(t.shape()));
  }
  DensityMap map(t.dim(1), t.dim(2), scale);
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] >= 0)) {
      throw InvariantError("density cell " + std::to_string(i) + " is negative or NaN");
    }
    map.cells[i] = static_cast<float>(d[i]);
  }
  return map;
}

std::vector<std::uint8_t> encode_map(const DensityMap& map) {
  binio::Writer w;
  w.magic("CCDM");
  w.u32(kDensityMapVersion);
  w.u32(static_cast<std::uint32_t>(map.height));
  w.u32(static_cast<std::uint32_t>(map.width));
  w.u32(static_cast<std::uint32_t>(map.scale));
  for (float v : map.cells) w.f32(v);
  return std::move(w.bytes());
}

DensityMap decode_map(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "density map");
  r.expect_magic("CCDM");
  const auto version = r.u32();
  if (version != kDensityMapVersion) {
    throw FormatError("density map: unsupported version " + std::to_string(version));
  }
  const std::size_t h = r.u32(), w = r.u32(), scale = r.u32();
  if (h == 0 || w == 0 || scale == 0) throw FormatError("density map: zero dimension");
  if (h * w * 4 > r.remaining()) throw FormatError("density map: truncated file");
  DensityMap map(h, w, scale);
  for (std::size_t i = 0; i < map.cells.size(); ++i) {
    const float v = r.f32();
    if (!(v >= 0.0f)) {
      throw InvariantError("density map: cell " + std::to_string(i) +
                           " is negative or NaN (" + std::to_string(v) + ")");
    }
    map.cells[i] = v;
  }
  r.expect_end();
  return map;
}

void write_map(const std::filesystem::path& path, const DensityMap& map) {
  binio::write_file(path, encode_map(map));
}

DensityMap read_map(const std::filesystem::path& path) {
  return decode_map(binio::read_file(path));
}

void write_pgm(const std::filesystem::path& path, const DensityMap& map) {
  std::string header = "P5\n" + std::to_string(map.width) + " " +
                       std::to_string(map.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  float peak = 0.0f;
  for (float v : map.cells) peak = std::max(peak, v);
  for (float v : map.cells) {
    const float norm = peak > 0.0f ? v / peak : 0.0f;
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(norm, 0.0f, 1.0f) * 255.0f)));
  }
  binio::write_file(path, bytes);
}

}  // namespace cccnet
